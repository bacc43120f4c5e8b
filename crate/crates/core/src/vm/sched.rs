use crate::seed::mix64;

/// Longest slice a thread runs before the scheduler reconsiders.
pub const MAX_QUANTUM: u32 = 16;

/// Seeded round-robin scheduler.
///
/// Threads are visited in ascending tid order, wrapping around, and each
/// slice lasts `1..=MAX_QUANTUM` instructions drawn from the seed and the
/// number of slices handed out so far. The decision depends only on the
/// runnable set, the seed and the slice counter.
#[derive(Debug, Clone)]
pub struct Scheduler {
    seed: u64,
    slices: u64,
    last: Option<u32>,
}

impl Scheduler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            slices: 0,
            last: None,
        }
    }

    /// Picks the next thread and its quantum. `runnable` must be non-empty and
    /// sorted ascending.
    pub fn next(&mut self, runnable: &[u32]) -> (u32, u32) {
        debug_assert!(!runnable.is_empty());
        let tid = match self.last {
            Some(last) => runnable.iter().copied().find(|&t| t > last).unwrap_or(runnable[0]),
            None => runnable[0],
        };
        let quantum = quantum(self.seed, self.slices);
        self.slices += 1;
        self.last = Some(tid);
        (tid, quantum)
    }

    pub fn slices(&self) -> u64 {
        self.slices
    }
}

/// Quantum of slice number `slice` under `seed`.
pub fn quantum(seed: u64, slice: u64) -> u32 {
    1 + (mix64(seed ^ mix64(slice)) % u64::from(MAX_QUANTUM)) as u32
}

/// Stateless form: the tid chosen for slice `slice` when the previous slice
/// went to `last`.
pub fn schedule_next(runnable: &[u32], last: Option<u32>, sched_seed: u64, slice: u64) -> (u32, u32) {
    let mut s = Scheduler {
        seed: sched_seed,
        slices: slice,
        last,
    };
    s.next(runnable)
}
