use std::collections::BTreeMap;

use super::{Function, GlobalDecl, Instruction, IrError, Opcode, Operand, Program, Reg, SiteId, Slot};

/// Parses IR text into a validated [`Program`].
///
/// Site ids are assigned in textual order starting at 0. Errors carry the
/// 1-based source line where one can be attributed.
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let mut parser = Parser::default();
    for (idx, raw) in text.lines().enumerate() {
        parser.line(idx + 1, raw)?;
    }
    parser.finish()
}

#[derive(Default)]
struct Parser {
    functions: Vec<Function>,
    globals: Vec<GlobalDecl>,
    entry: Option<String>,
    current: Option<Function>,
    pending_labels: Vec<(String, usize)>,
    next_site: u32,
    /// Source line of every site, for attributing validation errors.
    site_lines: Vec<usize>,
}

fn syntax(line: usize, message: impl Into<String>) -> IrError {
    IrError::Syntax {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn ident(line: usize, s: &str, what: &str) -> Result<String, IrError> {
    if is_ident(s) {
        Ok(s.to_owned())
    } else {
        Err(syntax(line, format!("invalid {what} name `{s}`")))
    }
}

pub(crate) fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else if let Some(bin) = body.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        let v = body.parse::<u64>().ok()?;
        if !neg && v > i64::MAX as u64 {
            return None;
        }
        v
    } else {
        return None;
    };
    Some(if neg {
        (magnitude as i64).wrapping_neg()
    } else {
        magnitude as i64
    })
}

/// Integer literal, or a float literal (`1.5`, `-2e3`) stored as its bit
/// pattern.
fn parse_imm(s: &str) -> Option<i64> {
    if let Some(v) = parse_int(s) {
        return Some(v);
    }
    let looks_float = s.bytes().any(|b| b == b'.' || b == b'e' || b == b'E')
        && s.bytes().next().is_some_and(|b| b.is_ascii_digit() || b == b'-' || b == b'+' || b == b'.');
    if looks_float {
        s.parse::<f64>().ok().map(|f| f.to_bits() as i64)
    } else {
        None
    }
}

fn parse_reg(s: &str) -> Option<Reg> {
    let digits = s.strip_prefix('r')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<u8>().ok().map(Reg)
}

fn parse_global(line: usize, s: &str) -> Result<Operand, IrError> {
    let body = &s[1..];
    let (name, offset) = match body.find(['+', '-']) {
        Some(pos) => {
            let off = parse_int(&body[pos..])
                .ok_or_else(|| syntax(line, format!("invalid global offset in `{s}`")))?;
            (&body[..pos], off)
        }
        None => (body, 0),
    };
    Ok(Operand::Global {
        name: ident(line, name, "global")?,
        offset,
    })
}

fn parse_operand(line: usize, slot: Slot, tok: &str) -> Result<Operand, IrError> {
    let bad = || syntax(line, format!("invalid operand `{tok}`"));
    match slot {
        Slot::Reg => match parse_reg(tok) {
            Some(r) => Ok(Operand::Reg(r)),
            None if tok.starts_with('r') && tok[1..].bytes().all(|b| b.is_ascii_digit()) => {
                Err(syntax(line, format!("register `{tok}` out of range")))
            }
            None => Err(syntax(line, format!("expected register, found `{tok}`"))),
        },
        Slot::Src => parse_reg(tok)
            .map(Operand::Reg)
            .or_else(|| parse_imm(tok).map(Operand::Imm))
            .ok_or_else(bad),
        Slot::Imm => {
            if tok.starts_with('@') {
                parse_global(line, tok)
            } else {
                parse_imm(tok).map(Operand::Imm).ok_or_else(bad)
            }
        }
        Slot::Label => Ok(Operand::Label(ident(line, tok, "label")?)),
        Slot::Func => Ok(Operand::Func(ident(line, tok, "function")?)),
    }
}

impl Parser {
    fn line(&mut self, line: usize, raw: &str) -> Result<(), IrError> {
        let text = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if text.is_empty() {
            return Ok(());
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        match head {
            "fn" => self.function(line, rest),
            "global" => self.global(line, rest),
            "entry" => {
                if self.entry.is_some() {
                    return Err(syntax(line, "duplicate entry directive"));
                }
                self.entry = Some(ident(line, rest, "function")?);
                Ok(())
            }
            _ if head.ends_with(':') && rest.is_empty() => self.label(line, &head[..head.len() - 1]),
            _ => self.instruction(line, head, rest),
        }
    }

    fn close_function(&mut self) -> Result<(), IrError> {
        if let Some(f) = self.current.take() {
            if let Some((label, line)) = self.pending_labels.first() {
                return Err(syntax(*line, format!("label `{label}` does not precede an instruction")));
            }
            self.functions.push(f);
        }
        Ok(())
    }

    fn function(&mut self, line: usize, rest: &str) -> Result<(), IrError> {
        self.close_function()?;
        let mut toks = rest.split_whitespace();
        let name = ident(line, toks.next().unwrap_or(""), "function")?;
        let mut params = 0u8;
        for tok in toks {
            match tok.strip_prefix("params=") {
                Some(v) => {
                    params = v
                        .parse()
                        .map_err(|_| syntax(line, format!("invalid params count `{v}`")))?
                }
                None => return Err(syntax(line, format!("unexpected `{tok}` after function name"))),
            }
        }
        self.current = Some(Function {
            name,
            params,
            body: Vec::new(),
            labels: BTreeMap::new(),
        });
        Ok(())
    }

    fn global(&mut self, line: usize, rest: &str) -> Result<(), IrError> {
        let (name, attrs) = match rest.find(char::is_whitespace) {
            Some(pos) => (&rest[..pos], rest[pos..].trim()),
            None => (rest, ""),
        };
        let name = ident(line, name, "global")?;
        let mut words = None;
        let mut init = Vec::new();
        // `init=` swallows the remainder so values may be spaced after commas.
        let (head, init_text) = match attrs.find("init=") {
            Some(pos) => (&attrs[..pos], Some(&attrs[pos + 5..])),
            None => (attrs, None),
        };
        for tok in head.split_whitespace() {
            match tok.strip_prefix("words=") {
                Some(v) => {
                    words = Some(
                        v.parse::<u32>()
                            .map_err(|_| syntax(line, format!("invalid word count `{v}`")))?,
                    )
                }
                None => return Err(syntax(line, format!("unexpected `{tok}` in global"))),
            }
        }
        if let Some(values) = init_text {
            let compact: String = values.split_whitespace().collect();
            for v in compact.split(',') {
                init.push(parse_imm(v).ok_or_else(|| syntax(line, format!("invalid initial value `{v}`")))?);
            }
        }
        let words = words.ok_or_else(|| syntax(line, "global requires words=N"))?;
        self.globals.push(GlobalDecl { name, words, init });
        Ok(())
    }

    fn label(&mut self, line: usize, name: &str) -> Result<(), IrError> {
        let name = ident(line, name, "label")?;
        let Some(f) = self.current.as_mut() else {
            return Err(syntax(line, "label outside of a function"));
        };
        if f.labels.contains_key(&name) || self.pending_labels.iter().any(|(l, _)| *l == name) {
            return Err(IrError::DuplicateLabel { line, label: name });
        }
        self.pending_labels.push((name, line));
        Ok(())
    }

    fn instruction(&mut self, line: usize, mnemonic: &str, rest: &str) -> Result<(), IrError> {
        let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| IrError::UnknownOpcode {
            line,
            name: mnemonic.to_owned(),
        })?;
        let Some(f) = self.current.as_mut() else {
            return Err(syntax(line, "instruction outside of a function"));
        };
        let toks: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let slots = opcode.slots();
        if toks.len() != slots.len() {
            return Err(syntax(
                line,
                format!("`{mnemonic}` takes {} operands, found {}", slots.len(), toks.len()),
            ));
        }
        let operands = slots
            .iter()
            .zip(&toks)
            .map(|(slot, tok)| parse_operand(line, *slot, tok))
            .collect::<Result<Vec<_>, _>>()?;
        let index = f.body.len();
        for (label, _) in self.pending_labels.drain(..) {
            f.labels.insert(label, index);
        }
        f.body.push(Instruction {
            site_id: SiteId(self.next_site),
            opcode,
            operands,
        });
        self.next_site += 1;
        self.site_lines.push(line);
        Ok(())
    }

    fn finish(mut self) -> Result<Program, IrError> {
        self.close_function()?;
        let program = Program {
            functions: self.functions,
            entry: self.entry.unwrap_or_else(|| "main".to_owned()),
            globals: self.globals,
        };
        if let Err(e) = program.validate() {
            let line = e.site.and_then(|s| self.site_lines.get(s.index()).copied());
            return Err(match line {
                Some(line) => IrError::Invalid { line, source: e },
                None => IrError::Program(e),
            });
        }
        Ok(program)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ValidationErrorKind;

    #[test]
    fn minimal_program() {
        let p = parse_program("fn main\nmovi r0, 5\nprint r0\nhalt\n").unwrap();
        assert_eq!(p.site_count(), 3);
        let ids: Vec<u32> = p.instructions().map(|i| i.site_id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(p.entry, "main");
    }

    #[test]
    fn undefined_label_is_reported_with_line() {
        let err = parse_program("fn main\n  br nowhere\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(err.to_string().contains("undefined label"), "{err}");
        match err {
            IrError::Invalid { source, .. } => {
                assert_eq!(source.kind, ValidationErrorKind::UndefinedLabel("nowhere".into()))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_label() {
        let err = parse_program("fn main\na:\nmovi r0, 1\na:\nhalt\n").unwrap_err();
        assert!(matches!(err, IrError::DuplicateLabel { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn unknown_opcode() {
        let err = parse_program("fn main\n  frobnicate r1\n  halt\n").unwrap_err();
        assert!(matches!(err, IrError::UnknownOpcode { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn register_out_of_range() {
        let err = parse_program("fn main\n  movi r64, 1\n  halt\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn missing_terminator() {
        let err = parse_program("fn main\n  movi r1, 1\n").unwrap_err();
        assert!(err.to_string().contains("must end with"), "{err}");
    }

    #[test]
    fn trailing_label() {
        let err = parse_program("fn main\n  halt\nend:\n").unwrap_err();
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn globals_and_literals() {
        let src = "global tab words=4 init=1, -2, 0x10\nfn main\n  movi r1, @tab+2\n  movi r2, 1.5\n  load r3, r1, @tab\n  halt\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.globals[0].init, vec![1, -2, 16]);
        assert_eq!(
            p.functions[0].body[0].operands[1],
            Operand::Global { name: "tab".into(), offset: 2 }
        );
        assert_eq!(p.functions[0].body[1].operands[1], Operand::Imm(1.5f64.to_bits() as i64));
    }

    #[test]
    fn comments_and_entry() {
        let src = "# header\nentry start\nfn start params=2 # two args\n  ret r0 # done\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.entry, "start");
        assert_eq!(p.functions[0].params, 2);
    }

    #[test]
    fn int_literals() {
        assert_eq!(parse_int("-5"), Some(-5));
        assert_eq!(parse_int("0xffffffffffffffff"), Some(-1));
        assert_eq!(parse_int("9223372036854775808"), None);
        assert_eq!(parse_int("abc"), None);
    }
}
