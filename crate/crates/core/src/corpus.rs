//! The bundled benchmark programs.

use crate::ir::{parse_program, IrError, Program, Word};

#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub source: &'static str,
    /// Default input words for the entry thread's `r0..`.
    pub input: &'static [Word],
    pub summary: &'static str,
}

impl Benchmark {
    pub fn program(&self) -> Result<Program, IrError> {
        parse_program(self.source)
    }
}

pub const CORPUS: [Benchmark; 7] = [
    Benchmark {
        name: "blackscholes-lite",
        source: include_str!("../benchmarks/blackscholes_lite.ir"),
        input: &[],
        summary: "per-thread option pricing kernel over an options array",
    },
    Benchmark {
        name: "specrand",
        source: include_str!("../benchmarks/specrand.ir"),
        input: &[1],
        summary: "seeded LCG printing 1,002 values",
    },
    Benchmark {
        name: "mm",
        source: include_str!("../benchmarks/mm.ir"),
        input: &[],
        summary: "2x2 matrix product, one worker thread per row",
    },
    Benchmark {
        name: "qs",
        source: include_str!("../benchmarks/qs.ir"),
        input: &[],
        summary: "one partition round, then 2 threads sort the halves of 100 integers",
    },
    Benchmark {
        name: "factorial",
        source: include_str!("../benchmarks/factorial.ir"),
        input: &[10],
        summary: "iterative n!",
    },
    Benchmark {
        name: "circular_buffer",
        source: include_str!("../benchmarks/circular_buffer.ir"),
        input: &[],
        summary: "producer/consumer over an 8-slot ring with a lock",
    },
    Benchmark {
        name: "stack",
        source: include_str!("../benchmarks/stack.ir"),
        input: &[],
        summary: "lock-protected linked-list stack, push/pop from two threads",
    },
];

pub fn get(name: &str) -> Option<&'static Benchmark> {
    CORPUS.iter().find(|b| b.name == name)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    CORPUS.iter().map(|b| b.name)
}
