//! Per-task random streams.
//!
//! Every Monte Carlo task (a replica, a draw batch, a coupled pair) gets its
//! own ChaCha8 stream keyed by the master seed and the task index. ChaCha is
//! counter based, so stream `k` never overlaps stream `j` and the values a
//! task sees are independent of which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Human-readable description of the stream derivation, echoed in reports.
pub const SCHEME: &str = "chacha8: key = seed_from_u64(master), stream = task index";

pub type TaskRng = ChaCha8Rng;

/// Stream `task` of the generator keyed by `master`.
pub fn task_rng(master: u64, task: u64) -> TaskRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(task);
    rng
}

/// Derive an independent master seed for a sub-experiment.
///
/// Used when one run hosts several experiments that each enumerate their own
/// tasks from zero.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
