use std::fmt::Write;

use super::{Operand, Program};

/// Renders a program in normalized IR text. `parse_program` of the output is
/// structurally equal to `p`.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for g in &p.globals {
        write!(out, "global {} words={}", g.name, g.words).unwrap();
        if !g.init.is_empty() {
            let values: Vec<String> = g.init.iter().map(i64::to_string).collect();
            write!(out, " init={}", values.join(",")).unwrap();
        }
        out.push('\n');
    }
    if p.entry != "main" {
        writeln!(out, "entry {}", p.entry).unwrap();
    }
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 || !out.is_empty() {
            out.push('\n');
        }
        write!(out, "fn {}", f.name).unwrap();
        if f.params > 0 {
            write!(out, " params={}", f.params).unwrap();
        }
        out.push('\n');
        for (idx, ins) in f.body.iter().enumerate() {
            for (label, _) in f.labels.iter().filter(|(_, &at)| at == idx) {
                writeln!(out, "{label}:").unwrap();
            }
            write!(out, "    {}", ins.opcode.mnemonic()).unwrap();
            for (k, op) in ins.operands.iter().enumerate() {
                out.push_str(if k == 0 { " " } else { ", " });
                write_operand(&mut out, op);
            }
            out.push('\n');
        }
    }
    out
}

fn write_operand(out: &mut String, op: &Operand) {
    match op {
        Operand::Reg(r) => write!(out, "{r}"),
        Operand::Imm(v) => write!(out, "{v}"),
        Operand::Global { name, offset: 0 } => write!(out, "@{name}"),
        Operand::Global { name, offset } if *offset > 0 => write!(out, "@{name}+{offset}"),
        Operand::Global { name, offset } => write!(out, "@{name}{offset}"),
        Operand::Label(l) | Operand::Func(l) => write!(out, "{l}"),
    }
    .unwrap();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, Opcode};

    const ALL_OPS: &str = "\
global g words=2 init=7
fn main
    movi r1, @g
    add r3, r1, r2
    sub r3, r3, 1
    mul r3, r3, r2
    div r3, r3, 1
    mod r3, r3, 5
    and r3, r3, 255
    or r3, r3, 1
    xor r3, r3, r1
    shl r3, r3, 2
    shr r3, r3, 1
    cmp r4, r3, r2
    mov r5, r4
    load r6, r1, 0
    store r6, r1, @g+1
    fadd r7, r6, r6
    fsub r7, r7, r6
    fmul r7, r7, r6
    fdiv r7, r7, r6
    spawn r8, worker, r1
    join r9, r8
    lock 0
    unlock r1
    call r10, worker
    print r10
    brz r10, out
    brnz r10, out
out:
    halt
fn worker params=1
    br tail
tail:
    ret r0
";

    #[test]
    fn every_mnemonic_exactly_once() {
        let p = parse_program(ALL_OPS).unwrap();
        let text = print_program(&p);
        for op in Opcode::ALL {
            let count = text
                .lines()
                .filter(|l| l.split_whitespace().next() == Some(op.mnemonic()))
                .count();
            assert_eq!(count, 1, "{op}");
        }
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn minimal_program_is_a_fixed_point() {
        let once = print_program(&parse_program("fn main\n movi r0,5\n  print r0\nhalt").unwrap());
        let twice = print_program(&parse_program(&once).unwrap());
        assert_eq!(once, twice);
        assert_eq!(once, "fn main\n    movi r0, 5\n    print r0\n    halt\n");
    }
}
