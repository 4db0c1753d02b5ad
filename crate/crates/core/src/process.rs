//! Child-process execution with a wall-clock timeout.
//!
//! Children are placed in their own process group on unix so a timeout kills
//! the whole tree, including grandchildren that still hold the output pipes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

/// Where child output goes.
pub enum Capture {
    /// Collect into memory, keeping at most `limit` bytes per stream.
    Memory { limit: usize },
    /// Redirect to files.
    Files { stdout: PathBuf, stderr: PathBuf },
}

pub struct Invocation<'a> {
    pub argv: &'a [String],
    pub cwd: &'a Path,
    /// When set, the child environment is exactly this map.
    pub env: Option<&'a BTreeMap<String, String>>,
    pub timeout: Option<Duration>,
    pub capture: Capture,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// `None` when the child was killed by a signal (including on timeout).
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time_s: f64,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

pub fn run(inv: Invocation<'_>) -> io::Result<Outcome> {
    let (program, args) = inv
        .argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty argv"))?;
    let mut cmd = Command::new(program);
    cmd.args(args).current_dir(inv.cwd).stdin(Stdio::null());
    if let Some(env) = inv.env {
        cmd.env_clear().envs(env);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }

    let memory_limit = match &inv.capture {
        Capture::Memory { limit } => {
            cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
            Some(*limit)
        }
        Capture::Files { stdout, stderr } => {
            cmd.stdout(File::create(stdout)?).stderr(File::create(stderr)?);
            None
        }
    };

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id();

    let readers = memory_limit.map(|limit| {
        let out = child.stdout.take().map(|s| spawn_reader(s, limit));
        let err = child.stderr.take().map(|s| spawn_reader(s, limit));
        (out, err)
    });

    let (tx, rx) = mpsc::channel::<(io::Result<ExitStatus>, Instant)>();
    thread::spawn(move || {
        let status = child.wait();
        let _ = tx.send((status, Instant::now()));
    });

    let (status, end, timed_out) = match inv.timeout {
        None => {
            let (s, e) = rx.recv().map_err(io::Error::other)?;
            (s?, e, false)
        }
        Some(limit) => match rx.recv_timeout(limit) {
            Ok((s, e)) => (s?, e, false),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                kill_tree(pid);
                let (s, e) = rx.recv().map_err(io::Error::other)?;
                (s?, e, true)
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(io::Error::other("process waiter exited unexpectedly"))
            }
        },
    };

    let (stdout, stderr) = match readers {
        None => (Vec::new(), Vec::new()),
        Some((out, err)) => {
            // Grandchildren may outlive a killed parent; never block on them for long.
            let grace = Duration::from_millis(500);
            (collect(out, grace), collect(err, grace))
        }
    };

    Ok(Outcome {
        exit_code: if timed_out { None } else { status.code() },
        timed_out,
        wall_time_s: end.duration_since(start).as_secs_f64(),
        stdout,
        stderr,
    })
}

fn spawn_reader<R: Read + Send + 'static>(mut src: R, limit: usize) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match src.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(kept.len());
                    kept.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
        let _ = tx.send(kept);
    });
    rx
}

fn collect(rx: Option<mpsc::Receiver<Vec<u8>>>, grace: Duration) -> Vec<u8> {
    rx.and_then(|rx| rx.recv_timeout(grace).ok()).unwrap_or_default()
}

#[cfg(unix)]
fn kill_tree(pid: u32) {
    // The child leads its own process group, so -pid addresses the whole group.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_tree(pid: u32) {
    let _ = Command::new("taskkill")
        .args(["/F", "/T", "/PID", &pid.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status();
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn argv(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn captures_both_streams() {
        let a = argv(&["sh", "-c", "echo out; echo err 1>&2; exit 3"]);
        let o = run(Invocation {
            argv: &a,
            cwd: Path::new("."),
            env: None,
            timeout: Some(Duration::from_secs(10)),
            capture: Capture::Memory { limit: 1024 },
        })
        .unwrap();
        assert_eq!(o.exit_code, Some(3));
        assert_eq!(o.stdout, b"out\n");
        assert_eq!(o.stderr, b"err\n");
        assert!(!o.success());
    }

    #[test]
    fn output_is_truncated_at_limit() {
        let a = argv(&["sh", "-c", "i=0; while [ $i -lt 100 ]; do echo 0123456789; i=$((i+1)); done"]);
        let o = run(Invocation {
            argv: &a,
            cwd: Path::new("."),
            env: None,
            timeout: None,
            capture: Capture::Memory { limit: 64 },
        })
        .unwrap();
        assert_eq!(o.stdout.len(), 64);
        assert_eq!(o.exit_code, Some(0));
    }

    #[test]
    fn timeout_kills_grandchildren_holding_pipes() {
        let a = argv(&["sh", "-c", "sleep 30; echo never"]);
        let t0 = Instant::now();
        let o = run(Invocation {
            argv: &a,
            cwd: Path::new("."),
            env: None,
            timeout: Some(Duration::from_millis(300)),
            capture: Capture::Memory { limit: 1024 },
        })
        .unwrap();
        assert!(o.timed_out);
        assert_eq!(o.exit_code, None);
        assert!(t0.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn explicit_env_replaces_inherited() {
        let a = argv(&["/bin/sh", "-c", "printf %s \"$CK_X:$HOME\""]);
        let mut env = BTreeMap::new();
        env.insert("CK_X".to_string(), "v".to_string());
        let o = run(Invocation {
            argv: &a,
            cwd: Path::new("."),
            env: Some(&env),
            timeout: None,
            capture: Capture::Memory { limit: 1024 },
        })
        .unwrap();
        assert_eq!(String::from_utf8_lossy(&o.stdout), "v:");
    }
}
