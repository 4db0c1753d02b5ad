use std::fs;

use serde::{Deserialize, Serialize};

use crate::uid;

/// Host fingerprint attached to detected environments and experiment records.
/// The hostname is only ever stored hashed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformInfo {
    pub os_name: String,
    pub os_version: String,
    pub cpu_model: String,
    pub cpu_count: u32,
    pub memory_mb: u64,
    pub hostname_hash: String,
}

pub fn collect_platform_info() -> PlatformInfo {
    let hostname = read_trimmed("/proc/sys/kernel/hostname")
        .or_else(|| read_trimmed("/etc/hostname"))
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .unwrap_or_else(|| "unknown".into());
    PlatformInfo {
        os_name: std::env::consts::OS.to_string(),
        os_version: os_version().unwrap_or_else(|| "unknown".into()),
        cpu_model: cpu_model().unwrap_or_else(|| "unknown".into()),
        cpu_count: std::thread::available_parallelism()
            .map(|n| n.get() as u32)
            .unwrap_or(1),
        memory_mb: memory_mb().unwrap_or(0),
        hostname_hash: uid::short_digest(hostname.as_bytes()),
    }
}

fn read_trimmed(path: &str) -> Option<String> {
    let s = fs::read_to_string(path).ok()?;
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

fn os_version() -> Option<String> {
    if let Ok(text) = fs::read_to_string("/etc/os-release") {
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key))
                .map(|v| v.trim_matches('"').to_string())
        };
        let kernel = read_trimmed("/proc/sys/kernel/osrelease");
        if let Some(id) = field("PRETTY_NAME=").or_else(|| field("VERSION_ID=")) {
            return Some(match kernel {
                Some(k) => format!("{id} (kernel {k})"),
                None => id,
            });
        }
        return kernel;
    }
    read_trimmed("/proc/sys/kernel/osrelease")
}

fn cpu_model() -> Option<String> {
    let text = fs::read_to_string("/proc/cpuinfo").ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once(':')?;
        matches!(k.trim(), "model name" | "Model" | "Hardware" | "cpu model")
            .then(|| v.trim().to_string())
    })
}

fn memory_mb() -> Option<u64> {
    let text = fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024)
}
