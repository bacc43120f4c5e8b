use std::collections::HashMap;
use std::io::Write as _;

use super::{
    digest_step, CrashCause, Dest, DestWrite, ExecHook, ExecutionResult, Protection, ReliabilityMap, RunLimits,
    Scheduler, StepEvent, Termination, Transfer, VmConfig, VmError, FNV_OFFSET,
};
use crate::ir::{Opcode, Operand, Program, Reg, SiteId, Word, REG_COUNT};

#[derive(Debug, Clone, Copy)]
enum Src {
    Reg(u8),
    Imm(u64),
}

#[derive(Debug, Clone, Copy)]
enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Cmp,
    Fadd,
    Fsub,
    Fmul,
    Fdiv,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Alu { op: AluOp, d: u8, a: u8, b: Src },
    Mov { d: u8, s: u8 },
    Movi { d: u8, v: u64 },
    Load { d: u8, base: u8, off: u64 },
    Store { v: u8, base: u8, off: u64 },
    Br { t: u32 },
    Brz { c: u8, t: u32 },
    Brnz { c: u8, t: u32 },
    Call { d: u8, f: u32 },
    Ret { s: u8 },
    Spawn { d: u8, f: u32, a: u8 },
    Join { d: u8, t: u8 },
    Lock(Src),
    Unlock(Src),
    Print { s: u8 },
    Halt,
}

#[derive(Debug, Clone, Copy)]
struct Lowered {
    site: u32,
    opcode: Opcode,
    op: Op,
}

#[derive(Debug, Clone)]
struct LoweredFn {
    params: u8,
    code: Vec<Lowered>,
}

/// A program lowered for execution: labels, functions and globals resolved,
/// initial memory laid out. Immutable and shareable across workers.
#[derive(Debug, Clone)]
pub struct Image {
    funcs: Vec<LoweredFn>,
    entry: u32,
    memory: Vec<Word>,
    config: VmConfig,
    site_count: usize,
}

impl Image {
    pub fn new(program: &Program, config: &VmConfig) -> Result<Image, VmError> {
        let needed = program.global_words();
        if needed > config.memory_words as u64 {
            return Err(VmError::MemoryTooSmall {
                needed,
                available: config.memory_words,
            });
        }
        let layout = program.global_layout(config.memory_words as u64);
        let global_base = |name: &str| {
            layout
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|(_, base, _)| *base)
                .expect("validated program")
        };
        let mut memory = vec![0; config.memory_words];
        for (g, (_, base, _)) in program.globals.iter().zip(&layout) {
            for (k, v) in g.init.iter().enumerate() {
                memory[*base as usize + k] = *v as u64;
            }
        }

        let reg = |o: &Operand| match o {
            Operand::Reg(r) => r.0,
            _ => unreachable!("validated program"),
        };
        let src = |o: &Operand| match o {
            Operand::Reg(r) => Src::Reg(r.0),
            Operand::Imm(v) => Src::Imm(*v as u64),
            _ => unreachable!("validated program"),
        };
        let imm = |o: &Operand| match o {
            Operand::Imm(v) => *v as u64,
            Operand::Global { name, offset } => global_base(name).wrapping_add(*offset as u64),
            _ => unreachable!("validated program"),
        };
        let func = |o: &Operand| match o {
            Operand::Func(n) => program.function_index(n).expect("validated program") as u32,
            _ => unreachable!("validated program"),
        };

        let mut funcs = Vec::with_capacity(program.functions.len());
        for f in &program.functions {
            let label = |o: &Operand| match o {
                Operand::Label(l) => f.labels[l] as u32,
                _ => unreachable!("validated program"),
            };
            let code = f
                .body
                .iter()
                .map(|ins| {
                    let o = &ins.operands;
                    let alu = |op| Op::Alu {
                        op,
                        d: reg(&o[0]),
                        a: reg(&o[1]),
                        b: src(&o[2]),
                    };
                    let op = match ins.opcode {
                        Opcode::Add => alu(AluOp::Add),
                        Opcode::Sub => alu(AluOp::Sub),
                        Opcode::Mul => alu(AluOp::Mul),
                        Opcode::Div => alu(AluOp::Div),
                        Opcode::Mod => alu(AluOp::Mod),
                        Opcode::And => alu(AluOp::And),
                        Opcode::Or => alu(AluOp::Or),
                        Opcode::Xor => alu(AluOp::Xor),
                        Opcode::Shl => alu(AluOp::Shl),
                        Opcode::Shr => alu(AluOp::Shr),
                        Opcode::Cmp => alu(AluOp::Cmp),
                        Opcode::Fadd => alu(AluOp::Fadd),
                        Opcode::Fsub => alu(AluOp::Fsub),
                        Opcode::Fmul => alu(AluOp::Fmul),
                        Opcode::Fdiv => alu(AluOp::Fdiv),
                        Opcode::Mov => Op::Mov {
                            d: reg(&o[0]),
                            s: reg(&o[1]),
                        },
                        Opcode::Movi => Op::Movi {
                            d: reg(&o[0]),
                            v: imm(&o[1]),
                        },
                        Opcode::Load => Op::Load {
                            d: reg(&o[0]),
                            base: reg(&o[1]),
                            off: imm(&o[2]),
                        },
                        Opcode::Store => Op::Store {
                            v: reg(&o[0]),
                            base: reg(&o[1]),
                            off: imm(&o[2]),
                        },
                        Opcode::Br => Op::Br { t: label(&o[0]) },
                        Opcode::Brz => Op::Brz {
                            c: reg(&o[0]),
                            t: label(&o[1]),
                        },
                        Opcode::Brnz => Op::Brnz {
                            c: reg(&o[0]),
                            t: label(&o[1]),
                        },
                        Opcode::Call => Op::Call {
                            d: reg(&o[0]),
                            f: func(&o[1]),
                        },
                        Opcode::Ret => Op::Ret { s: reg(&o[0]) },
                        Opcode::Spawn => Op::Spawn {
                            d: reg(&o[0]),
                            f: func(&o[1]),
                            a: reg(&o[2]),
                        },
                        Opcode::Join => Op::Join {
                            d: reg(&o[0]),
                            t: reg(&o[1]),
                        },
                        Opcode::Lock => Op::Lock(src(&o[0])),
                        Opcode::Unlock => Op::Unlock(src(&o[0])),
                        Opcode::Print => Op::Print { s: reg(&o[0]) },
                        Opcode::Halt => Op::Halt,
                    };
                    Lowered {
                        site: ins.site_id.0,
                        opcode: ins.opcode,
                        op,
                    }
                })
                .collect();
            funcs.push(LoweredFn { params: f.params, code });
        }

        Ok(Image {
            funcs,
            entry: program.function_index(&program.entry).expect("validated program") as u32,
            memory,
            config: config.clone(),
            site_count: program.site_count(),
        })
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn memory_words(&self) -> usize {
        self.memory.len()
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Runnable,
    BlockedJoin(u32),
    BlockedLock(u64),
    Finished,
}

#[derive(Clone)]
struct Frame {
    func: u32,
    pc: u32,
    regs: [Word; REG_COUNT],
    ret_dst: u8,
    call_site: u32,
    call_instance: u64,
}

impl Frame {
    fn new(func: u32) -> Self {
        Frame {
            func,
            pc: 0,
            regs: [0; REG_COUNT],
            ret_dst: 0,
            call_site: 0,
            call_instance: 0,
        }
    }
}

enum Outcome {
    Continue,
    Blocked,
    Finished,
    Halt,
    Crash(CrashCause),
}

pub(super) struct Machine<'a, H> {
    image: &'a Image,
    prot: Protection,
    hook: H,
    limits: RunLimits,
    mem: Vec<Word>,
    frames: Vec<Vec<Frame>>,
    status: Vec<Status>,
    exits: Vec<Option<Word>>,
    locks: HashMap<u64, u32>,
    output: Vec<u8>,
    counts: Vec<u64>,
    dynamic: u64,
    digest: u64,
    checkpoint_digest: Option<u64>,
    sched: Scheduler,
}

#[inline]
fn read(regs: &[Word; REG_COUNT], s: Src) -> Word {
    match s {
        Src::Reg(r) => regs[r as usize],
        Src::Imm(v) => v,
    }
}

#[inline]
fn alu(op: AluOp, x: Word, y: Word) -> Result<Word, CrashCause> {
    let f = |g: fn(f64, f64) -> f64| g(f64::from_bits(x), f64::from_bits(y)).to_bits();
    Ok(match op {
        AluOp::Add => x.wrapping_add(y),
        AluOp::Sub => x.wrapping_sub(y),
        AluOp::Mul => x.wrapping_mul(y),
        AluOp::Div => {
            if y == 0 {
                return Err(CrashCause::DivByZero);
            }
            (x as i64).wrapping_div(y as i64) as u64
        }
        AluOp::Mod => {
            if y == 0 {
                return Err(CrashCause::DivByZero);
            }
            (x as i64).wrapping_rem(y as i64) as u64
        }
        AluOp::And => x & y,
        AluOp::Or => x | y,
        AluOp::Xor => x ^ y,
        AluOp::Shl => x << (y & 63),
        AluOp::Shr => x >> (y & 63),
        AluOp::Cmp => u64::from((x as i64) < (y as i64)),
        AluOp::Fadd => f(|a, b| a + b),
        AluOp::Fsub => f(|a, b| a - b),
        AluOp::Fmul => f(|a, b| a * b),
        AluOp::Fdiv => f(|a, b| a / b),
    })
}

/// Passes a destination value through the hook; the replacement is dropped if
/// the destination is protected.
#[inline]
fn commit<H: ExecHook>(hook: &mut H, w: DestWrite) -> Word {
    match hook.on_write(&w) {
        Some(v) if !w.protected => v,
        _ => w.value,
    }
}

impl<'a, H: ExecHook> Machine<'a, H> {
    pub(super) fn new(
        image: &'a Image,
        input: &[Word],
        sched_seed: u64,
        limits: RunLimits,
        rmap: &ReliabilityMap,
        hook: H,
    ) -> Self {
        let mut main = Frame::new(image.entry);
        for (slot, v) in main.regs.iter_mut().zip(input) {
            *slot = *v;
        }
        Machine {
            image,
            prot: Protection::new(rmap, image.site_count),
            hook,
            limits,
            mem: image.memory.clone(),
            frames: vec![vec![main]],
            status: vec![Status::Runnable],
            exits: vec![None],
            locks: HashMap::new(),
            output: Vec::new(),
            counts: vec![0; image.site_count],
            dynamic: 0,
            digest: FNV_OFFSET,
            checkpoint_digest: if limits.checkpoint == Some(0) {
                Some(FNV_OFFSET)
            } else {
                None
            },
            sched: Scheduler::new(sched_seed),
        }
    }

    pub(super) fn run(mut self) -> ExecutionResult {
        let termination = self.schedule_loop();
        ExecutionResult {
            termination,
            output: self.output,
            dynamic_count: self.dynamic,
            trace_digest: self.digest,
            per_site_dynamic_counts: self.counts,
            checkpoint_digest: self.checkpoint_digest,
        }
    }

    fn schedule_loop(&mut self) -> Termination {
        let mut runnable = Vec::new();
        loop {
            runnable.clear();
            for (tid, st) in self.status.iter_mut().enumerate() {
                let wake = match *st {
                    Status::Runnable => true,
                    Status::BlockedJoin(t) => self.exits[t as usize].is_some(),
                    Status::BlockedLock(id) => !self.locks.contains_key(&id),
                    Status::Finished => false,
                };
                if wake {
                    *st = Status::Runnable;
                    runnable.push(tid as u32);
                }
            }
            if runnable.is_empty() {
                return if self.status.iter().all(|s| *s == Status::Finished) {
                    Termination::Halted
                } else {
                    Termination::Crashed(CrashCause::Deadlock)
                };
            }
            let (tid, quantum) = self.sched.next(&runnable);
            for _ in 0..quantum {
                if self.dynamic >= self.limits.budget {
                    return Termination::Hung;
                }
                match self.step(tid) {
                    Outcome::Continue => {}
                    Outcome::Blocked | Outcome::Finished => break,
                    Outcome::Halt => return Termination::Halted,
                    Outcome::Crash(c) => return Termination::Crashed(c),
                }
            }
        }
    }

    fn step(&mut self, tid: u32) -> Outcome {
        let image = self.image;
        let prot = &self.prot;
        let hook = &mut self.hook;
        let t = tid as usize;
        let thread_count = self.frames.len();
        let stack = &mut self.frames[t];
        let depth = stack.len();
        let frame = stack.last_mut().expect("runnable thread has a frame");
        let func = frame.func;
        let ins = &image.funcs[func as usize].code[frame.pc as usize];
        let site = ins.site;
        let step = self.dynamic;
        let instance = self.counts[site as usize];
        let site_reliable = prot.site(site);
        let mut event = StepEvent {
            step,
            tid,
            func,
            site: SiteId(site),
            opcode: ins.opcode,
            mem_read: None,
            mem_write: None,
            transfer: Transfer::None,
        };
        let reg_write = |d: u8, value: Word| DestWrite {
            step,
            site: SiteId(site),
            instance,
            tid,
            dest: Dest::Reg(Reg(d)),
            value,
            protected: site_reliable || prot.register(d),
        };
        let mut outcome = Outcome::Continue;
        let mut spawned = None;

        match ins.op {
            Op::Alu { op, d, a, b } => {
                let v = match alu(op, frame.regs[a as usize], read(&frame.regs, b)) {
                    Ok(v) => v,
                    Err(c) => return Outcome::Crash(c),
                };
                frame.regs[d as usize] = commit(hook, reg_write(d, v));
                frame.pc += 1;
            }
            Op::Mov { d, s } => {
                let v = frame.regs[s as usize];
                frame.regs[d as usize] = commit(hook, reg_write(d, v));
                frame.pc += 1;
            }
            Op::Movi { d, v } => {
                frame.regs[d as usize] = commit(hook, reg_write(d, v));
                frame.pc += 1;
            }
            Op::Load { d, base, off } => {
                let addr = frame.regs[base as usize].wrapping_add(off);
                if addr >= self.mem.len() as u64 {
                    return Outcome::Crash(CrashCause::OobMemory);
                }
                let v = self.mem[addr as usize];
                event.mem_read = Some(addr);
                frame.regs[d as usize] = commit(hook, reg_write(d, v));
                frame.pc += 1;
            }
            Op::Store { v, base, off } => {
                let addr = frame.regs[base as usize].wrapping_add(off);
                if addr >= self.mem.len() as u64 {
                    return Outcome::Crash(CrashCause::OobMemory);
                }
                let value = commit(
                    hook,
                    DestWrite {
                        step,
                        site: SiteId(site),
                        instance,
                        tid,
                        dest: Dest::Mem(addr),
                        value: frame.regs[v as usize],
                        protected: site_reliable || prot.address(addr),
                    },
                );
                self.mem[addr as usize] = value;
                event.mem_write = Some(addr);
                frame.pc += 1;
            }
            Op::Br { t: target } => frame.pc = target,
            Op::Brz { c, t: target } => {
                frame.pc = if frame.regs[c as usize] == 0 { target } else { frame.pc + 1 };
            }
            Op::Brnz { c, t: target } => {
                frame.pc = if frame.regs[c as usize] != 0 { target } else { frame.pc + 1 };
            }
            Op::Call { d, f } => {
                if depth >= image.config.max_call_depth {
                    return Outcome::Crash(CrashCause::StackOverflow);
                }
                let params = image.funcs[f as usize].params as usize;
                let mut callee = Frame::new(f);
                callee.regs[..params].copy_from_slice(&frame.regs[..params]);
                callee.ret_dst = d;
                callee.call_site = site;
                callee.call_instance = instance;
                frame.pc += 1;
                stack.push(callee);
                event.transfer = Transfer::Call { callee: f };
            }
            Op::Ret { s } => {
                let v = frame.regs[s as usize];
                let done = stack.pop().expect("frame");
                event.transfer = Transfer::Return;
                match stack.last_mut() {
                    Some(caller) => {
                        let d = done.ret_dst;
                        caller.regs[d as usize] = commit(
                            hook,
                            DestWrite {
                                step,
                                site: SiteId(done.call_site),
                                instance: done.call_instance,
                                tid,
                                dest: Dest::Reg(Reg(d)),
                                value: v,
                                protected: prot.site(done.call_site) || prot.register(d),
                            },
                        );
                    }
                    None => {
                        self.exits[t] = Some(v);
                        self.status[t] = Status::Finished;
                        outcome = Outcome::Finished;
                    }
                }
            }
            Op::Spawn { d, f, a } => {
                if thread_count >= image.config.max_threads {
                    return Outcome::Crash(CrashCause::ThreadLimit);
                }
                let new_tid = thread_count as u32;
                spawned = Some((f, frame.regs[a as usize]));
                frame.regs[d as usize] = commit(hook, reg_write(d, u64::from(new_tid)));
                frame.pc += 1;
                event.transfer = Transfer::Spawn {
                    tid: new_tid,
                    callee: f,
                };
            }
            Op::Join { d, t: treg } => {
                let target = frame.regs[treg as usize];
                if target >= thread_count as u64 || target == u64::from(tid) {
                    return Outcome::Crash(CrashCause::JoinInvalidTid);
                }
                match self.exits[target as usize] {
                    Some(v) => {
                        frame.regs[d as usize] = commit(hook, reg_write(d, v));
                        frame.pc += 1;
                    }
                    None => {
                        self.status[t] = Status::BlockedJoin(target as u32);
                        return Outcome::Blocked;
                    }
                }
            }
            Op::Lock(s) => {
                let id = read(&frame.regs, s);
                if self.locks.contains_key(&id) {
                    self.status[t] = Status::BlockedLock(id);
                    return Outcome::Blocked;
                }
                self.locks.insert(id, tid);
                frame.pc += 1;
            }
            Op::Unlock(s) => {
                let id = read(&frame.regs, s);
                if self.locks.get(&id) == Some(&tid) {
                    self.locks.remove(&id);
                }
                frame.pc += 1;
            }
            Op::Print { s } => {
                let _ = writeln!(self.output, "{}", frame.regs[s as usize] as i64);
                frame.pc += 1;
            }
            Op::Halt => outcome = Outcome::Halt,
        }

        if let Some((f, arg)) = spawned {
            let mut entry = Frame::new(f);
            entry.regs[0] = arg;
            self.frames.push(vec![entry]);
            self.status.push(Status::Runnable);
            self.exits.push(None);
        }

        self.counts[site as usize] += 1;
        self.dynamic += 1;
        self.digest = digest_step(self.digest, site, tid);
        if self.limits.checkpoint == Some(self.dynamic) {
            self.checkpoint_digest = Some(self.digest);
        }
        self.hook.on_step(&event);
        outcome
    }
}
