//! Resident-memory sampling of a backend process.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

pub const POLL_INTERVAL: Duration = Duration::from_millis(100);

/// `VmRSS` of `pid` in bytes, read from procfs. `None` when the process
/// does not exist or procfs is unavailable.
pub fn resident_bytes(pid: u32) -> Option<u64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RamReading {
    pub peak_bytes: u64,
    pub samples: usize,
    /// False when no sample could be taken; `peak_bytes` is then 0.
    pub observed: bool,
}

/// Samples a process on a background thread until stopped.
pub struct RamPoller {
    stop: Option<mpsc::Sender<()>>,
    handle: Option<JoinHandle<Vec<u64>>>,
}

impl RamPoller {
    /// Starts sampling `pid` every `interval`, once right away. Without a
    /// pid no thread is started.
    pub fn start(pid: Option<u32>, interval: Duration) -> Self {
        let Some(pid) = pid else {
            return Self {
                stop: None,
                handle: None,
            };
        };
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            let mut samples = Vec::new();
            loop {
                samples.extend(resident_bytes(pid));
                match rx.recv_timeout(interval) {
                    Err(RecvTimeoutError::Timeout) => continue,
                    _ => break,
                }
            }
            // Final sample at stop time.
            samples.extend(resident_bytes(pid));
            samples
        });
        Self {
            stop: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn stop(mut self) -> RamReading {
        drop(self.stop.take());
        let samples = self
            .handle
            .take()
            .map(|h| h.join().unwrap_or_default())
            .unwrap_or_default();
        RamReading {
            peak_bytes: samples.iter().copied().max().unwrap_or(0),
            samples: samples.len(),
            observed: !samples.is_empty(),
        }
    }
}

impl Drop for RamPoller {
    fn drop(&mut self) {
        drop(self.stop.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
