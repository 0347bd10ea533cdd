//! Sandboxed execution of solver programs.
//!
//! Each program runs as a subprocess with a scrubbed environment, a fresh
//! temporary working directory, a wall-clock timeout, and a cap on captured
//! output. The process is killed at the deadline; whatever stdout was captured
//! up to that point is kept.

use std::io::Read;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::SandboxConfig;

#[cfg(unix)]
fn kill_process_tree(child: &mut Child) {
    // The child leads its own process group; kill the whole group so
    // grandchildren holding the output pipes die too.
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_process_tree(child: &mut Child) {
    let _ = child.kill();
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("no interpreter configured")]
    NoInterpreter,
    #[error("failed to stage program: {0}")]
    Stage(String),
    #[error("failed to spawn {command}: {message}")]
    Spawn { command: String, message: String },
}

/// Outcome of one sandboxed run. Stdout is captured even on nonzero exit or
/// timeout, truncated to the configured cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub wall_time: Duration,
    pub timed_out: bool,
    pub truncated: bool,
}

impl SandboxResult {
    /// The answer candidate: the final nonempty stdout line of a clean run.
    pub fn answer_candidate(&self) -> Option<String> {
        if self.timed_out || self.exit_code != Some(0) {
            return None;
        }
        self.stdout
            .lines()
            .rev()
            .map(str::trim)
            .find(|line| !line.is_empty())
            .map(str::to_string)
    }
}

fn drain_capped(
    mut reader: impl Read + Send + 'static,
    cap: usize,
) -> std::thread::JoinHandle<(Vec<u8>, bool)> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 4096];
        loop {
            match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    if kept.len() < cap {
                        let take = n.min(cap - kept.len());
                        kept.extend_from_slice(&buf[..take]);
                        if take < n {
                            truncated = true;
                        }
                    } else {
                        truncated = true;
                    }
                }
                Err(_) => break,
            }
        }
        (kept, truncated)
    })
}

/// Run `source` under the configured interpreter.
pub fn execute_sandboxed(
    source: &str,
    config: &SandboxConfig,
) -> Result<SandboxResult, SandboxError> {
    let (program, args) = config
        .interpreter
        .split_first()
        .ok_or(SandboxError::NoInterpreter)?;
    let workdir = tempfile::tempdir().map_err(|e| SandboxError::Stage(e.to_string()))?;
    let program_path = workdir.path().join("program");
    std::fs::write(&program_path, source).map_err(|e| SandboxError::Stage(e.to_string()))?;

    let started = Instant::now();
    let mut command = Command::new(program);
    command
        .args(args)
        .arg(&program_path)
        .current_dir(workdir.path())
        .env_clear()
        .env("PATH", "/usr/bin:/bin")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command.spawn().map_err(|e| SandboxError::Spawn {
        command: program.clone(),
        message: e.to_string(),
    })?;

    let stdout_handle = drain_capped(child.stdout.take().expect("piped"), config.output_cap_bytes);
    let stderr_handle = drain_capped(child.stderr.take().expect("piped"), config.output_cap_bytes);

    let deadline = Duration::from_secs(config.timeout_secs);
    let mut timed_out = false;
    let exit_status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {
                if started.elapsed() >= deadline {
                    kill_process_tree(&mut child);
                    let _ = child.wait();
                    timed_out = true;
                    break None;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(_) => break None,
        }
    };

    let (stdout_bytes, stdout_truncated) = stdout_handle.join().unwrap_or_default();
    let (stderr_bytes, stderr_truncated) = stderr_handle.join().unwrap_or_default();
    Ok(SandboxResult {
        stdout: String::from_utf8_lossy(&stdout_bytes).into_owned(),
        stderr: String::from_utf8_lossy(&stderr_bytes).into_owned(),
        exit_code: exit_status.and_then(|s| s.code()),
        wall_time: started.elapsed(),
        timed_out,
        truncated: stdout_truncated || stderr_truncated || timed_out,
    })
}
