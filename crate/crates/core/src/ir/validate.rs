use std::collections::HashSet;
use std::fmt;

use super::{Operand, Program, SiteId, Slot, REG_COUNT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationErrorKind {
    MissingEntry(String),
    DuplicateFunction(String),
    DuplicateGlobal(String),
    EmptyBody,
    MissingTerminator,
    UndefinedLabel(String),
    LabelOutOfRange(String),
    UndefinedFunction(String),
    UndefinedGlobal(String),
    RegisterOutOfRange(u8),
    TooManyParams(u8),
    Arity { expected: usize, found: usize },
    OperandKind { index: usize },
    GlobalInitTooLong { name: String, words: u32, init: usize },
    SiteOrder { expected: u32, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ValidationError {
    pub function: Option<String>,
    pub site: Option<SiteId>,
    pub kind: ValidationErrorKind,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationErrorKind::*;
        match &self.kind {
            MissingEntry(n) => write!(f, "entry function `{n}` not defined")?,
            DuplicateFunction(n) => write!(f, "duplicate function `{n}`")?,
            DuplicateGlobal(n) => write!(f, "duplicate global `{n}`")?,
            EmptyBody => write!(f, "function body is empty")?,
            MissingTerminator => write!(f, "function must end with ret, halt or br")?,
            UndefinedLabel(l) => write!(f, "undefined label `{l}`")?,
            LabelOutOfRange(l) => write!(f, "label `{l}` does not precede an instruction")?,
            UndefinedFunction(n) => write!(f, "undefined function `{n}`")?,
            UndefinedGlobal(n) => write!(f, "undefined global `{n}`")?,
            RegisterOutOfRange(r) => write!(f, "register r{r} out of range (max r{})", REG_COUNT - 1)?,
            TooManyParams(n) => write!(f, "{n} params exceeds register count")?,
            Arity { expected, found } => write!(f, "expected {expected} operands, found {found}")?,
            OperandKind { index } => write!(f, "operand {} has the wrong kind", index + 1)?,
            GlobalInitTooLong { name, words, init } => {
                write!(f, "global `{name}` has {init} initial values but only {words} words")?
            }
            SiteOrder { expected, found } => {
                write!(f, "site ids must be dense and ordered: expected {expected}, found {found}")?
            }
        }
        if let Some(func) = &self.function {
            write!(f, " (in fn {func})")?;
        }
        Ok(())
    }
}

fn err(function: Option<&str>, site: Option<SiteId>, kind: ValidationErrorKind) -> ValidationError {
    ValidationError {
        function: function.map(str::to_owned),
        site,
        kind,
    }
}

pub(super) fn validate(p: &Program) -> Result<(), ValidationError> {
    use ValidationErrorKind::*;

    let mut globals = HashSet::new();
    for g in &p.globals {
        if !globals.insert(g.name.as_str()) {
            return Err(err(None, None, DuplicateGlobal(g.name.clone())));
        }
        if g.init.len() > g.words as usize {
            return Err(err(
                None,
                None,
                GlobalInitTooLong {
                    name: g.name.clone(),
                    words: g.words,
                    init: g.init.len(),
                },
            ));
        }
    }

    let mut funcs = HashSet::new();
    for f in &p.functions {
        if !funcs.insert(f.name.as_str()) {
            return Err(err(None, None, DuplicateFunction(f.name.clone())));
        }
    }
    if !funcs.contains(p.entry.as_str()) {
        return Err(err(None, None, MissingEntry(p.entry.clone())));
    }

    let mut next_site = 0u32;
    for f in &p.functions {
        let fname = Some(f.name.as_str());
        if f.params as usize > REG_COUNT {
            return Err(err(fname, None, TooManyParams(f.params)));
        }
        let Some(last) = f.body.last() else {
            return Err(err(fname, None, EmptyBody));
        };
        for (label, &idx) in &f.labels {
            if idx >= f.body.len() {
                return Err(err(fname, None, LabelOutOfRange(label.clone())));
            }
        }
        for ins in &f.body {
            let site = Some(ins.site_id);
            if ins.site_id.0 != next_site {
                return Err(err(
                    fname,
                    site,
                    SiteOrder {
                        expected: next_site,
                        found: ins.site_id.0,
                    },
                ));
            }
            next_site += 1;

            let slots = ins.opcode.slots();
            if slots.len() != ins.operands.len() {
                return Err(err(
                    fname,
                    site,
                    Arity {
                        expected: slots.len(),
                        found: ins.operands.len(),
                    },
                ));
            }
            for (index, (slot, operand)) in slots.iter().zip(&ins.operands).enumerate() {
                let ok = match (slot, operand) {
                    (Slot::Reg | Slot::Src, Operand::Reg(r)) => {
                        if r.index() >= REG_COUNT {
                            return Err(err(fname, site, RegisterOutOfRange(r.0)));
                        }
                        true
                    }
                    (Slot::Src | Slot::Imm, Operand::Imm(_)) => true,
                    (Slot::Imm, Operand::Global { name, .. }) => {
                        if !globals.contains(name.as_str()) {
                            return Err(err(fname, site, UndefinedGlobal(name.clone())));
                        }
                        true
                    }
                    (Slot::Label, Operand::Label(l)) => {
                        if !f.labels.contains_key(l) {
                            return Err(err(fname, site, UndefinedLabel(l.clone())));
                        }
                        true
                    }
                    (Slot::Func, Operand::Func(n)) => {
                        if !funcs.contains(n.as_str()) {
                            return Err(err(fname, site, UndefinedFunction(n.clone())));
                        }
                        true
                    }
                    _ => false,
                };
                if !ok {
                    return Err(err(fname, site, OperandKind { index }));
                }
            }
        }
        if !last.opcode.is_terminator() {
            return Err(err(fname, Some(last.site_id), MissingTerminator));
        }
    }
    Ok(())
}
