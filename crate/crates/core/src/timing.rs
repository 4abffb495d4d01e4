//! Process CPU time and wall-clock budgets.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// CPU time consumed by the whole process (all threads).
    #[default]
    Cpu,
    Wall,
}

/// CPU time consumed by this process so far.
pub fn process_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec and the clock id is a
    // constant supported on every Linux/macOS target.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return Duration::ZERO;
    }
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

/// Elapsed time on a chosen clock since construction.
#[derive(Clone, Copy, Debug)]
pub struct Stopwatch {
    clock: Clock,
    wall_start: Instant,
    cpu_start: Duration,
}

impl Stopwatch {
    pub fn start(clock: Clock) -> Self {
        Self {
            clock,
            wall_start: Instant::now(),
            cpu_start: process_cpu_time(),
        }
    }

    pub fn elapsed(&self) -> Duration {
        match self.clock {
            Clock::Cpu => process_cpu_time().saturating_sub(self.cpu_start),
            Clock::Wall => self.wall_start.elapsed(),
        }
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }
}

/// Time limit for one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub seconds: f64,
    #[serde(default)]
    pub clock: Clock,
}

impl Budget {
    pub fn limit(&self) -> Duration {
        Duration::from_secs_f64(self.seconds.max(0.0))
    }
}
