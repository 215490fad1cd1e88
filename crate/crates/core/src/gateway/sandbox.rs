//! Execution sandboxes.
//!
//! `SandboxProvider`/`SandboxSession` abstract where code actually runs; the
//! bundled [`LocalSandboxProvider`] executes in a subprocess jailed to a
//! temporary directory, which is enough for offline runs and tests. A remote
//! provider can be slotted in without touching the gateway.

use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::AdapterError;

/// Result of running code in a sandbox. `timed_out` is the error flag for
/// wall-clock overruns; `exit_code` is `None` when the process was killed or
/// died to a signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    /// Captured stdout followed by stderr.
    pub output: String,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
}

pub trait SandboxSession: Send {
    fn run_command(&mut self, command: &str) -> Result<ExecOutcome, AdapterError>;
    fn run_python(&mut self, source: &str) -> Result<ExecOutcome, AdapterError>;
    /// Writes a file inside the sandbox, creating parent directories.
    /// Returns the byte count written.
    fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<u64, AdapterError>;
    fn read_file(&mut self, path: &str) -> Result<Vec<u8>, AdapterError>;
}

pub trait SandboxProvider: Send + Sync {
    fn create(&self) -> Result<Box<dyn SandboxSession>, AdapterError>;
}

/// Runs sessions as local subprocesses under a per-session temp directory.
pub struct LocalSandboxProvider {
    pub timeout: Duration,
}

impl Default for LocalSandboxProvider {
    fn default() -> Self {
        LocalSandboxProvider {
            timeout: Duration::from_secs(30),
        }
    }
}

impl SandboxProvider for LocalSandboxProvider {
    fn create(&self) -> Result<Box<dyn SandboxSession>, AdapterError> {
        Ok(Box::new(LocalSession {
            dir: tempfile::tempdir()?,
            timeout: self.timeout,
        }))
    }
}

struct LocalSession {
    dir: tempfile::TempDir,
    timeout: Duration,
}

impl LocalSession {
    /// Maps a sandbox-relative path onto the jail directory. Absolute paths
    /// and `..` components are rejected so sessions cannot reach outside.
    fn resolve(&self, path: &str) -> Result<PathBuf, AdapterError> {
        let rel = Path::new(path);
        if rel.is_absolute() {
            return Err(AdapterError::BadResponse(format!(
                "sandbox paths must be relative, got '{path}'"
            )));
        }
        if rel.components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(AdapterError::BadResponse(format!(
                "sandbox paths may not contain '..', got '{path}'"
            )));
        }
        Ok(self.dir.path().join(rel))
    }

    fn run(&self, mut cmd: Command) -> Result<ExecOutcome, AdapterError> {
        cmd.current_dir(self.dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // Give the child its own process group so a timeout kills the whole
        // tree. Killing just the shell would orphan grandchildren that hold
        // the output pipes open and leave our reader threads blocked.
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd.spawn()?;
        let mut stdout = child.stdout.take().expect("stdout was piped");
        let mut stderr = child.stderr.take().expect("stderr was piped");
        // Drain the pipes on side threads so a chatty child can't deadlock
        // against a full pipe buffer while we poll for exit.
        let out_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    kill_tree(&mut child);
                    break None;
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        let mut output = String::from_utf8_lossy(&out_reader.join().unwrap_or_default())
            .into_owned();
        let err_text = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
        if !err_text.is_empty() {
            if !output.is_empty() && !output.ends_with('\n') {
                output.push('\n');
            }
            output.push_str(&err_text);
        }
        Ok(ExecOutcome {
            output,
            exit_code: status.and_then(|s| s.code()),
            timed_out: status.is_none(),
        })
    }
}

/// Kills a spawned child and, on unix, its entire process group.
fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // `process_group(0)` above made the child's pid the group id.
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .status();
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl SandboxSession for LocalSession {
    fn run_command(&mut self, command: &str) -> Result<ExecOutcome, AdapterError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        self.run(cmd)
    }

    fn run_python(&mut self, source: &str) -> Result<ExecOutcome, AdapterError> {
        let mut cmd = Command::new("python3");
        cmd.arg("-c").arg(source);
        self.run(cmd)
    }

    fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<u64, AdapterError> {
        let full = self.resolve(path)?;
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&full, bytes)?;
        Ok(bytes.len() as u64)
    }

    fn read_file(&mut self, path: &str) -> Result<Vec<u8>, AdapterError> {
        let full = self.resolve(path)?;
        Ok(std::fs::read(full)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Box<dyn SandboxSession> {
        LocalSandboxProvider::default().create().unwrap()
    }

    #[test]
    fn command_captures_stdout_stderr_and_exit_code() {
        let mut s = session();
        let ok = s.run_command("echo out; echo err >&2").unwrap();
        assert_eq!(ok.exit_code, Some(0));
        assert!(ok.output.contains("out"));
        assert!(ok.output.contains("err"));
        assert!(!ok.timed_out);

        let bad = s.run_command("exit 3").unwrap();
        assert_eq!(bad.exit_code, Some(3));
    }

    #[test]
    fn python_snippets_run_in_the_jail() {
        let mut s = session();
        let out = s.run_python("print(6 * 7)").unwrap();
        assert_eq!(out.exit_code, Some(0));
        assert!(out.output.contains("42"));
    }

    #[test]
    fn overruns_are_flagged_not_hung() {
        let provider = LocalSandboxProvider {
            timeout: Duration::from_millis(200),
        };
        let mut s = provider.create().unwrap();
        let started = Instant::now();
        let out = s.run_command("sleep 5").unwrap();
        assert!(out.timed_out);
        assert_eq!(out.exit_code, None);
        assert!(started.elapsed() < Duration::from_secs(4));
    }

    #[test]
    fn file_roundtrip_and_subdir_creation() {
        let mut s = session();
        let n = s.write_file("nested/dir/data.bin", b"\x00\x01\x02").unwrap();
        assert_eq!(n, 3);
        assert_eq!(s.read_file("nested/dir/data.bin").unwrap(), b"\x00\x01\x02");
    }

    #[test]
    fn files_are_visible_to_commands() {
        let mut s = session();
        s.write_file("hello.txt", b"from the outside").unwrap();
        let out = s.run_command("cat hello.txt").unwrap();
        assert!(out.output.contains("from the outside"));
    }

    #[test]
    fn escape_attempts_are_rejected() {
        let mut s = session();
        assert!(s.write_file("/etc/owned", b"x").is_err());
        assert!(s.write_file("../escape.txt", b"x").is_err());
        assert!(s.read_file("a/../../escape.txt").is_err());
    }
}
