//! Line-protocol adapter for external correctors, scorers and classifiers.
//!
//! Each request writes one line to the child's stdin and reads exactly one
//! line back from its stdout. A process serves one request at a time; idle
//! processes are kept in a pool and new ones are spawned when all are busy.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::lm::{PerplexityScore, PerplexityScorer};
use crate::Tokens;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<std::io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        // closing stdin lets well-behaved filters exit on their own
        self.stdin.take();
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct LineProcess {
    command: String,
    timeout: Duration,
    idle: Mutex<Vec<Worker>>,
}

impl std::fmt::Debug for LineProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LineProcess")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl LineProcess {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        LineProcess {
            command: command.into(),
            timeout,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::External {
            command: self.command.clone(),
            message: message.into(),
        }
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| self.error(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            replies: rx,
        })
    }

    /// Sends one line and waits for one reply line.
    pub fn request(&self, line: &str) -> Result<String> {
        if line.contains('\n') {
            return Err(self.error("request contains a line break"));
        }
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut worker = match pooled {
            Some(w) => w,
            None => self.spawn()?,
        };
        let reply = self.exchange(&mut worker, line)?;
        self.idle.lock().expect("pool lock").push(worker);
        Ok(reply)
    }

    fn exchange(&self, worker: &mut Worker, line: &str) -> Result<String> {
        let stdin = worker.stdin.as_mut().expect("open stdin");
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| self.error(format!("write failed: {e}")))?;
        match worker.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(self.error(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(self.error(format!(
                "no reply within {:.1}s",
                self.timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = worker.child.wait().ok();
                Err(self.error(match status {
                    Some(s) if !s.success() => format!("process exited with {s}"),
                    _ => "process closed its output before replying".to_string(),
                }))
            }
        }
    }
}

/// Corrector backed by an external process: one tokenized sentence in, one out.
#[derive(Debug)]
pub struct ExternalCorrector {
    process: LineProcess,
}

impl ExternalCorrector {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalCorrector::with_timeout(command, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalCorrector {
            process: LineProcess::new(command, timeout),
        }
    }

    pub fn command(&self) -> &str {
        self.process.command()
    }

    pub fn correct(&self, tokens: &[String]) -> Result<Tokens> {
        Ok(tokenize(&self.process.request(&tokens.join(" "))?))
    }
}

/// Perplexity scorer backed by an external process: one sentence in, one number out.
#[derive(Debug)]
pub struct ExternalScorer {
    process: LineProcess,
}

impl ExternalScorer {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalScorer {
            process: LineProcess::new(command, DEFAULT_TIMEOUT),
        }
    }
}

impl PerplexityScorer for ExternalScorer {
    fn perplexity(&self, tokens: &[String]) -> Result<PerplexityScore> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let reply = self.process.request(&tokens.join(" "))?;
        let value: f64 = reply.trim().parse().map_err(|_| Error::External {
            command: self.process.command().to_string(),
            message: format!("expected a number, got `{reply}`"),
        })?;
        Ok(PerplexityScore {
            value,
            token_count: tokens.len(),
        })
    }
}

/// Binary sentence classifier backed by an external process: "1" means grammatical.
#[derive(Debug)]
pub struct ExternalClassifier {
    process: LineProcess,
}

impl ExternalClassifier {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalClassifier {
            process: LineProcess::new(command, DEFAULT_TIMEOUT),
        }
    }

    pub fn is_grammatical(&self, tokens: &[String]) -> Result<bool> {
        let reply = self.process.request(&tokens.join(" "))?;
        match reply.trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::External {
                command: self.process.command().to_string(),
                message: format!("expected 0 or 1, got `{other}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cat_is_an_identity_corrector() {
        let c = ExternalCorrector::new("cat");
        assert_eq!(c.correct(&toks("I go .")).unwrap(), toks("I go ."));
        assert_eq!(c.correct(&toks("second line")).unwrap(), toks("second line"));
    }

    #[test]
    fn sed_rewrite_is_applied() {
        let c = ExternalCorrector::new("sed -u 's/goes/go/'");
        assert_eq!(c.correct(&toks("I goes .")).unwrap(), toks("I go ."));
    }

    #[test]
    fn concurrent_requests_use_separate_processes() {
        let c = ExternalCorrector::new("cat");
        std::thread::scope(|s| {
            for i in 0..4 {
                let c = &c;
                s.spawn(move || {
                    let line = toks(&format!("worker {i} line"));
                    for _ in 0..5 {
                        assert_eq!(c.correct(&line).unwrap(), line);
                    }
                });
            }
        });
    }

    #[test]
    fn failing_process_is_an_error() {
        let c = ExternalCorrector::new("exit 3");
        let err = c.correct(&toks("a")).unwrap_err();
        assert!(matches!(err, Error::External { .. }), "{err}");
    }

    #[test]
    fn silent_process_times_out() {
        let c = ExternalCorrector::with_timeout("sleep 5", Duration::from_millis(100));
        let err = c.correct(&toks("a")).unwrap_err().to_string();
        assert!(err.contains("no reply"), "{err}");
    }

    #[test]
    fn external_scorer_parses_numbers() {
        let s = ExternalScorer::new("while read l; do echo 12.5; done");
        assert_eq!(s.perplexity(&toks("a b")).unwrap().value, 12.5);
        let bad = ExternalScorer::new("while read l; do echo nope; done");
        assert!(bad.perplexity(&toks("a")).is_err());
    }

    #[test]
    fn external_classifier_reads_bits() {
        let c = ExternalClassifier::new("while read l; do echo 1; done");
        assert!(c.is_grammatical(&toks("fine")).unwrap());
    }
}
