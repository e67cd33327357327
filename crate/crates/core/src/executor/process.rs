//! Child-process runner with wall-clock and memory enforcement.
//!
//! The child runs in its own process group so the whole group can be killed on
//! timeout. Memory is bounded twice: an address-space rlimit set before exec,
//! and a resident-set watchdog polled from `/proc` while the child runs.

use std::ffi::OsString;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub(crate) struct RunSpec {
    pub program: PathBuf,
    pub args: Vec<OsString>,
    pub cwd: PathBuf,
    pub env: Vec<(String, String)>,
    pub wall_clock: Duration,
    pub memory_bytes: u64,
    /// Apply RLIMIT_AS in the child. Off for wrappers such as container clients.
    pub limit_address_space: bool,
    pub log_cap: usize,
}

#[derive(Debug)]
pub(crate) enum Termination {
    Exited(ExitStatus),
    TimedOut,
    MemoryKilled,
}

#[derive(Debug)]
pub(crate) struct RunOutput {
    pub termination: Termination,
    pub stdout: String,
    pub stderr: String,
    pub runtime_ms: f64,
}

fn spawn_tail_reader<R: Read + Send + 'static>(mut source: R, cap: usize) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match source.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > 2 * cap {
                        kept.drain(..kept.len() - cap);
                    }
                }
            }
        }
        if kept.len() > cap {
            kept.drain(..kept.len() - cap);
        }
        kept
    })
}

fn resident_bytes(pid: u32) -> Option<u64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn kill_group(child: &Child) {
    // SAFETY: killpg only sends a signal; the group id is the child's pid
    // because it was spawned with process_group(0).
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
}

pub(crate) fn run(spec: &RunSpec) -> std::io::Result<RunOutput> {
    let mut cmd = Command::new(&spec.program);
    cmd.args(&spec.args)
        .current_dir(&spec.cwd)
        .env_clear()
        .envs(spec.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let address_space = spec.limit_address_space.then_some(spec.memory_bytes);
    // SAFETY: the closure only calls async-signal-safe setrlimit.
    unsafe {
        cmd.pre_exec(move || {
            let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            if let Some(bytes) = address_space {
                let limit = libc::rlimit { rlim_cur: bytes as libc::rlim_t, rlim_max: bytes as libc::rlim_t };
                if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let stdout = spawn_tail_reader(child.stdout.take().expect("piped stdout"), spec.log_cap);
    let stderr = spawn_tail_reader(child.stderr.take().expect("piped stderr"), spec.log_cap);

    let mut poll = Duration::from_millis(1);
    let termination = loop {
        if let Some(status) = child.try_wait()? {
            break Termination::Exited(status);
        }
        if start.elapsed() >= spec.wall_clock {
            kill_group(&child);
            break Termination::TimedOut;
        }
        if resident_bytes(child.id()).is_some_and(|rss| rss > spec.memory_bytes) {
            kill_group(&child);
            break Termination::MemoryKilled;
        }
        thread::sleep(poll.min(spec.wall_clock.saturating_sub(start.elapsed())));
        poll = (poll * 2).min(Duration::from_millis(10));
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1000.0;
    // reap, and take down anything the child left behind holding our pipes
    kill_group(&child);
    let _ = child.wait();

    let stdout = String::from_utf8_lossy(&stdout.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();
    Ok(RunOutput { termination, stdout, stderr, runtime_ms })
}

/// Recognizable allocator failure messages from common runtimes.
pub(crate) fn looks_like_oom(status: &ExitStatus, stderr: &str) -> bool {
    const MARKERS: [&str; 5] = [
        "memory allocation of",
        "MemoryError",
        "bad_alloc",
        "Cannot allocate memory",
        "out of memory",
    ];
    let by_signal = matches!(status.signal(), Some(libc::SIGABRT | libc::SIGKILL | libc::SIGSEGV));
    MARKERS.iter().any(|m| stderr.contains(m)) && (by_signal || !status.success())
}
