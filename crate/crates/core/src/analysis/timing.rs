use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TimingStats {
    pub min_ns: u64,
    pub median_ns: u64,
    pub iters: usize,
}

/// Runs `f` `warmup` times untimed, then `iters` timed runs on the calling
/// thread.
pub fn time_kernel(mut f: impl FnMut(), warmup: usize, iters: usize) -> Result<TimingStats> {
    if iters < 3 {
        return Err(Error::Argument(format!("time_kernel needs at least 3 iterations, got {iters}")));
    }
    for _ in 0..warmup {
        f();
    }
    let mut ns: Vec<u64> = (0..iters)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as u64
        })
        .collect();
    ns.sort_unstable();
    Ok(TimingStats {
        min_ns: ns[0],
        median_ns: ns[iters / 2],
        iters,
    })
}
