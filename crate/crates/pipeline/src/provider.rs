//! Shared plumbing for external providers: error classes, retry with
//! exponential backoff, bounded parallel fan-out, and a subprocess client.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Retryable(String),
    #[error("provider failed: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self { max_attempts: 3, base_delay: Duration::ZERO }
    }

    /// Runs `call` until it succeeds, fails with a non-retryable error, or
    /// attempts run out.
    pub fn run<T, E: std::fmt::Display>(
        &self,
        retryable: impl Fn(&E) -> bool,
        mut call: impl FnMut() -> Result<T, E>,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Err(e) if attempt < self.max_attempts && retryable(&e) => {
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                }
                other => return other,
            }
        }
    }
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Retryable(_))
    }
}

/// Applies `f` to every item with at most `limit` calls in flight. Results
/// come back in input order.
pub fn run_bounded<T: Sync, R: Send>(items: &[T], limit: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let limit = limit.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..limit {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Runs an external program per request: `program args... [extra_arg]`, the
/// payload on stdin, the response on stdout. Non-zero exit is retryable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandClient {
    pub program: String,
    pub args: Vec<String>,
    pub env: BTreeMap<String, String>,
}

impl CommandClient {
    pub fn from_argv(argv: &[String], env: BTreeMap<String, String>) -> Option<Self> {
        let (program, args) = argv.split_first()?;
        Some(Self { program: program.clone(), args: args.to_vec(), env })
    }

    pub fn call(&self, extra_arg: Option<&str>, stdin: &str) -> Result<String, ProviderError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).envs(&self.env).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        if let Some(a) = extra_arg {
            cmd.arg(a);
        }
        let mut child = cmd.spawn().map_err(|e| ProviderError::Fatal(format!("cannot start {}: {e}", self.program)))?;
        if let Some(mut pipe) = child.stdin.take() {
            // A program that ignores stdin may close it early.
            let _ = pipe.write_all(stdin.as_bytes());
        }
        let out = child.wait_with_output().map_err(|e| ProviderError::Retryable(format!("{}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(ProviderError::Retryable(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        String::from_utf8(out.stdout)
            .map_err(|_| ProviderError::Fatal(format!("{} produced non-UTF-8 output", self.program)))
    }
}
