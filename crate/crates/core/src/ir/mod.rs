//! Toy instruction set and program representation.
//!
//! Programs are written in a small line-oriented text format (see
//! [`parse_program`] and `docs/ir-format.md`). Every static instruction carries a
//! [`SiteId`] that is unique across the whole program; fault sites, profile
//! rows and reliability plans are all keyed by it.

mod parse;
mod print;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::parse_program;
pub use print::print_program;
pub use validate::{ValidationError, ValidationErrorKind};

/// Number of architectural registers in every thread context.
pub const REG_COUNT: usize = 64;

/// Width of a machine word in bits.
pub const WORD_BITS: u32 = 64;

/// A 64-bit machine word. Integers are two's complement, floats are IEEE-754
/// binary64 bit patterns.
pub type Word = u64;

/// Globally unique static instruction identifier, assigned in textual order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl SiteId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Register index in `0..REG_COUNT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reg(pub u8);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

macro_rules! opcodes {
    ($($variant:ident => $mnemonic:literal, $class:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum Opcode {
            $($variant,)*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant,)*];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $mnemonic,)*
                }
            }

            pub fn from_mnemonic(s: &str) -> Option<Opcode> {
                match s {
                    $($mnemonic => Some(Opcode::$variant),)*
                    _ => None,
                }
            }

            /// Instruction class; fixed per opcode.
            pub fn class(self) -> InstrClass {
                match self {
                    $(Opcode::$variant => InstrClass::$class,)*
                }
            }
        }
    };
}

opcodes! {
    Add => "add", Arithmetic;
    Sub => "sub", Arithmetic;
    Mul => "mul", Arithmetic;
    Div => "div", Arithmetic;
    Mod => "mod", Arithmetic;
    And => "and", Arithmetic;
    Or => "or", Arithmetic;
    Xor => "xor", Arithmetic;
    Shl => "shl", Arithmetic;
    Shr => "shr", Arithmetic;
    Cmp => "cmp", Arithmetic;
    Mov => "mov", Arithmetic;
    Movi => "movi", Arithmetic;
    Load => "load", LoadStore;
    Store => "store", LoadStore;
    Br => "br", Control;
    Brz => "brz", Control;
    Brnz => "brnz", Control;
    Call => "call", Control;
    Ret => "ret", Control;
    Spawn => "spawn", ThreadPrimitive;
    Join => "join", ThreadPrimitive;
    Lock => "lock", ThreadPrimitive;
    Unlock => "unlock", ThreadPrimitive;
    Print => "print", Io;
    Halt => "halt", Control;
    Fadd => "fadd", Arithmetic;
    Fsub => "fsub", Arithmetic;
    Fmul => "fmul", Arithmetic;
    Fdiv => "fdiv", Arithmetic;
}

/// Free function form of [`Opcode::class`].
pub fn classify_opcode(op: Opcode) -> InstrClass {
    op.class()
}

/// The kind of value an operand slot accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    /// A register.
    Reg,
    /// A register or an integer immediate.
    Src,
    /// An immediate or a global address (`@name`, `@name+k`).
    Imm,
    Label,
    Func,
}

impl Opcode {
    pub(crate) fn slots(self) -> &'static [Slot] {
        use Slot::*;
        match self {
            Opcode::Add
            | Opcode::Sub
            | Opcode::Mul
            | Opcode::Div
            | Opcode::Mod
            | Opcode::And
            | Opcode::Or
            | Opcode::Xor
            | Opcode::Shl
            | Opcode::Shr
            | Opcode::Cmp
            | Opcode::Fadd
            | Opcode::Fsub
            | Opcode::Fmul
            | Opcode::Fdiv => &[Reg, Reg, Src],
            Opcode::Mov => &[Reg, Reg],
            Opcode::Movi => &[Reg, Imm],
            Opcode::Load | Opcode::Store => &[Reg, Reg, Imm],
            Opcode::Br => &[Label],
            Opcode::Brz | Opcode::Brnz => &[Reg, Label],
            Opcode::Call => &[Reg, Func],
            Opcode::Ret | Opcode::Print => &[Reg],
            Opcode::Spawn => &[Reg, Func, Reg],
            Opcode::Join => &[Reg, Reg],
            Opcode::Lock | Opcode::Unlock => &[Src],
            Opcode::Halt => &[],
        }
    }

    /// Whether executing the opcode produces a destination value that a fault
    /// can perturb (a register write, or the word written by `store`).
    pub fn has_destination(self) -> bool {
        !matches!(
            self,
            Opcode::Br
                | Opcode::Brz
                | Opcode::Brnz
                | Opcode::Ret
                | Opcode::Lock
                | Opcode::Unlock
                | Opcode::Print
                | Opcode::Halt
        )
    }

    /// Whether the destination is a register (everything with a destination
    /// except `store`).
    pub fn writes_register(self) -> bool {
        self.has_destination() && self != Opcode::Store
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Ret | Opcode::Halt | Opcode::Br)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrClass {
    Arithmetic,
    LoadStore,
    Control,
    ThreadPrimitive,
    Io,
}

impl InstrClass {
    pub const ALL: [InstrClass; 5] = [
        InstrClass::Arithmetic,
        InstrClass::LoadStore,
        InstrClass::Control,
        InstrClass::ThreadPrimitive,
        InstrClass::Io,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::Arithmetic => "arithmetic",
            InstrClass::LoadStore => "load_store",
            InstrClass::Control => "control",
            InstrClass::ThreadPrimitive => "thread_primitive",
            InstrClass::Io => "io",
        }
    }
}

impl fmt::Display for InstrClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
    /// Base address of a global plus a word offset.
    Global { name: String, offset: i64 },
    Label(String),
    Func(String),
}

impl Operand {
    pub fn as_reg(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub site_id: SiteId,
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
}

impl Instruction {
    pub fn class(&self) -> InstrClass {
        self.opcode.class()
    }

    /// Destination register, if the instruction writes one.
    pub fn dest_reg(&self) -> Option<Reg> {
        if self.opcode.writes_register() {
            self.operands.first().and_then(Operand::as_reg)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub params: u8,
    pub body: Vec<Instruction>,
    /// Label name to the index of the instruction it precedes.
    pub labels: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDecl {
    pub name: String,
    pub words: u32,
    pub init: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub functions: Vec<Function>,
    pub entry: String,
    pub globals: Vec<GlobalDecl>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.functions.iter().flat_map(|f| f.body.iter())
    }

    pub fn site_count(&self) -> usize {
        self.functions.iter().map(|f| f.body.len()).sum()
    }

    /// Instruction for `site`; site ids are dense so this is a linear walk
    /// over functions only.
    pub fn instruction(&self, site: SiteId) -> Option<&Instruction> {
        let mut idx = site.index();
        for f in &self.functions {
            if idx < f.body.len() {
                return Some(&f.body[idx]);
            }
            idx -= f.body.len();
        }
        None
    }

    /// Opcode of every site, indexed by site id.
    pub fn site_opcodes(&self) -> Vec<Opcode> {
        self.instructions().map(|i| i.opcode).collect()
    }

    /// Word address of every global in a memory of `memory_words` words.
    /// Globals are packed in declaration order and end at the top of memory,
    /// so an index that runs past the data segment faults.
    pub fn global_layout(&self, memory_words: u64) -> Vec<(String, u64, u32)> {
        let mut next = memory_words.saturating_sub(self.global_words());
        self.globals
            .iter()
            .map(|g| {
                let base = next;
                next += u64::from(g.words);
                (g.name.clone(), base, g.words)
            })
            .collect()
    }

    pub fn global_words(&self) -> u64 {
        self.globals.iter().map(|g| u64::from(g.words)).sum()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        validate::validate(self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown opcode `{name}`")]
    UnknownOpcode { line: usize, name: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
    #[error(transparent)]
    Program(#[from] ValidationError),
}

impl IrError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IrError::Syntax { line, .. }
            | IrError::UnknownOpcode { line, .. }
            | IrError::DuplicateLabel { line, .. }
            | IrError::Invalid { line, .. } => Some(*line),
            IrError::Program(_) => None,
        }
    }
}
