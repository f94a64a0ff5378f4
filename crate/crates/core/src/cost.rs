//! Multiply-accumulate accounting.
//!
//! Every kernel (and the shape-only graph) reports its cost through
//! [`record`]. The counter is thread-local, so a measurement only sees work
//! done on the calling thread. One MAC is one multiply-accumulate; the
//! per-op formulas live here so the numeric kernels and the symbolic graph
//! agree by construction.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// MAC-equivalents charged per element for `exp`-based ops (softmax, sigmoid).
pub const TRANSCENDENTAL_MACS: u64 = 4;

pub fn record(macs: u64) {
    MACS.with(|c| c.set(c.get() + macs));
}

/// Runs `f` and returns its result with the MACs it recorded on this thread.
/// Nested measurements also count towards the enclosing one.
pub fn measure_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = MACS.with(|c| c.replace(0));
    let out = f();
    let inner = MACS.with(|c| c.get());
    MACS.with(|c| c.set(outer + inner));
    (out, inner)
}

pub fn count_macs(f: impl FnOnce()) -> u64 {
    measure_macs(f).1
}

pub mod formulas {
    //! Closed-form MAC counts, one per instrumented op.

    use super::TRANSCENDENTAL_MACS;

    pub fn matmul(batch: usize, m: usize, k: usize, n: usize) -> u64 {
        (batch * m * k * n) as u64
    }

    pub fn conv2d(
        c_out: usize,
        c_in: usize,
        groups: usize,
        k: usize,
        h_out: usize,
        w_out: usize,
    ) -> u64 {
        (c_out * (c_in / groups) * k * k * h_out * w_out) as u64
    }

    /// Scale and shift per element.
    pub fn batchnorm(elements: usize) -> u64 {
        elements as u64
    }

    /// Two horizontal lerps and one vertical per output element.
    pub fn bilinear(out_elements: usize) -> u64 {
        3 * out_elements as u64
    }

    pub fn avg_pool(out_elements: usize, k: usize) -> u64 {
        (out_elements * k * k) as u64
    }

    pub fn elementwise(out_elements: usize) -> u64 {
        out_elements as u64
    }

    pub fn transcendental(elements: usize) -> u64 {
        TRANSCENDENTAL_MACS * elements as u64
    }

    pub fn reduce_sum(in_elements: usize) -> u64 {
        in_elements as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_measurements_propagate() {
        let total = count_macs(|| {
            record(5);
            let inner = count_macs(|| record(7));
            assert_eq!(inner, 7);
        });
        assert_eq!(total, 12);
    }

    #[test]
    fn formula_examples() {
        assert_eq!(formulas::matmul(1, 3, 4, 5), 60);
        assert_eq!(formulas::conv2d(16, 8, 1, 1, 4, 4), 2048);
    }
}
