#![allow(dead_code)]

use std::collections::BTreeMap;

use picsim::domain::{MeterId, MeterSnapshot, RelayState, Seconds};
use picsim::pic_fw::{BusError, BusRead, Command, MeterBus, Opcode, PicConfig, PicState};
use picsim::proto::{Message, MessageKind};
use picsim::sched::{round_robin_step, RoundRobinConfig};
use rand::Rng;

pub const METERS: usize = 4;
/// Per-read bus cost; one collection takes 1.6 s, so a step that collects
/// is still busy when the next op arrives 1 s later.
const READ_COST: Seconds = 0.4;
const OP_SPACING: Seconds = 1.0;

pub struct ConstBus;

impl MeterBus for ConstBus {
    fn slots(&self) -> usize {
        METERS
    }

    fn identify(&mut self, slot: usize) -> Result<MeterId, BusError> {
        Ok(MeterId { station: 0, outlet: slot })
    }

    fn read(&mut self, meter: MeterId, start: Seconds) -> BusRead {
        BusRead {
            elapsed: READ_COST,
            result: Ok(MeterSnapshot {
                meter,
                volts: 208.0,
                amps: 8.0,
                watts: 1664.0,
                energy_kwh: start / 3600.0,
                relay: RelayState::On,
                captured_at: start + READ_COST,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Serial line and the seq the sender put on it, if well formed.
    Serial(String, Option<u64>),
    Tick,
    Step,
}

impl Op {
    pub fn command(seq: u64, opcode: Opcode) -> Self {
        Op::Serial(Command::new(seq, opcode).encode(), Some(seq))
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub replies: Vec<Message>,
    /// seq -> replies still owed (negative: extra replies).
    pub unanswered: BTreeMap<Option<u64>, i64>,
    pub isr_side_effects: usize,
    pub pushes: usize,
    pub expected_pushes: usize,
    pub future_cache: usize,
}

impl Outcome {
    pub fn lost_commands(&self) -> usize {
        self.unanswered.values().filter(|&&v| v > 0).count()
    }

    pub fn extra_replies(&self) -> usize {
        self.unanswered.values().filter(|&&v| v < 0).count()
    }

    pub fn is_clean(&self) -> bool {
        self.lost_commands() == 0
            && self.extra_replies() == 0
            && self.isr_side_effects == 0
            && self.pushes == self.expected_pushes
            && self.future_cache == 0
    }
}

/// Runs `ops` one per second, then steps the main loop until it is idle.
pub fn run_ops(ops: &[Op]) -> Outcome {
    let mut bus = ConstBus;
    let mut pic = PicState::startup_init(0, &mut bus, PicConfig::default()).expect("const bus answers");
    let mut out = Outcome::default();
    // index of each executed step, in op order; ticks are matched to the
    // first executed step after them
    let mut executed_steps = Vec::new();
    let mut tick_positions = Vec::new();
    let mut t = 0.0;

    let step = |pic: &mut PicState, now: Seconds, pos: usize, out: &mut Outcome, executed: &mut Vec<usize>| {
        if now >= pic.busy_until() {
            executed.push(pos);
        }
        let o = pic.main_loop_step(&mut ConstBus, now);
        for e in pic.cache() {
            if e.snapshot.is_some_and(|s| s.captured_at > o.busy_until + 1e-9) {
                out.future_cache += 1;
            }
        }
        out.replies.extend(o.messages);
    };

    for (pos, op) in ops.iter().enumerate() {
        t += OP_SPACING;
        match op {
            Op::Serial(line, seq) => {
                *out.unanswered.entry(*seq).or_default() += 1;
                let before = pic.clone();
                pic.on_serial_interrupt(line);
                if !only_flags_changed(&before, &pic) {
                    out.isr_side_effects += 1;
                }
            }
            Op::Tick => {
                tick_positions.push(pos);
                let before = pic.clone();
                pic.on_timer_interrupt();
                if !only_flags_changed(&before, &pic) {
                    out.isr_side_effects += 1;
                }
            }
            Op::Step => step(&mut pic, t, pos, &mut out, &mut executed_steps),
        }
    }
    let mut pos = ops.len();
    while pic.has_work() {
        t = t.max(pic.busy_until());
        step(&mut pic, t, pos, &mut out, &mut executed_steps);
        pos += 1;
        assert!(pos < ops.len() + 64, "main loop never went idle");
    }

    let mut batches: Vec<usize> = tick_positions
        .iter()
        .map(|&tick| *executed_steps.iter().find(|&&s| s > tick).expect("drain runs a step"))
        .collect();
    batches.dedup();
    out.expected_pushes = batches.len();
    for m in &out.replies {
        if m.kind == MessageKind::AggregatePacket && m.reply_to.is_none() {
            out.pushes += 1;
        } else {
            *out.unanswered.entry(m.reply_to).or_default() -= 1;
        }
    }
    out
}

fn only_flags_changed(before: &PicState, after: &PicState) -> bool {
    let mut masked = after.clone();
    masked.flags = before.flags.clone();
    &masked == before
}

/// Every ordering of `k` commands and `m` ticks, with an optional main-loop
/// step before each op and at the end.
pub fn exhaustive(k: usize, m: usize) -> Vec<Vec<Op>> {
    let n = k + m;
    let mut all = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        for steps in 0u32..(1 << (n + 1)) {
            let mut ops = Vec::new();
            let mut seq = 0;
            for i in 0..n {
                if steps & (1 << i) != 0 {
                    ops.push(Op::Step);
                }
                if mask & (1 << i) != 0 {
                    ops.push(Op::Tick);
                } else {
                    seq += 1;
                    let opcode = if seq % 2 == 1 {
                        Opcode::PowerInfoRequest
                    } else {
                        Opcode::SetPushPeriod(30.0)
                    };
                    ops.push(Op::command(seq, opcode));
                }
            }
            if steps & (1 << n) != 0 {
                ops.push(Op::Step);
            }
            all.push(ops);
        }
    }
    all
}

/// Up to 8 commands (some malformed or replayed) and 8 ticks with random
/// main-loop steps between them.
pub fn random_ops<R: Rng>(rng: &mut R) -> Vec<Op> {
    let k = rng.random_range(0..=8);
    let m = rng.random_range(0..=8);
    let mut kinds: Vec<bool> = std::iter::repeat_n(true, k).chain(std::iter::repeat_n(false, m)).collect();
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    let mut ops = Vec::new();
    let mut seq = 0;
    for is_cmd in kinds {
        if rng.random_bool(0.4) {
            ops.push(Op::Step);
        }
        if !is_cmd {
            ops.push(Op::Tick);
            continue;
        }
        match rng.random_range(0..10) {
            0 => ops.push(Op::Serial("\u{1}garbage".into(), None)),
            1 if seq > 0 => ops.push(Op::command(seq, Opcode::PowerInfoRequest)),
            2 => ops.push(Op::Serial(format!(r#"{{"seq":{},"op":99}}"#, seq + 1), Some(seq + 1))),
            r => {
                seq += 1;
                let opcode = match r % 3 {
                    0 => Opcode::PowerInfoRequest,
                    1 => Opcode::SetPushPeriod(rng.random_range(5.0..60.0)),
                    _ => Opcode::SetPushEnabled(true),
                };
                ops.push(Op::command(seq, opcode));
            }
        }
    }
    ops
}

/// Active-slot counts from a rotating queue: each slot serves the first
/// `k` plugged outlets and sends them to the back.
pub fn rotating_queue_counts(config: &RoundRobinConfig, plugged: &[bool], slots: u64) -> Vec<u64> {
    let mut queue: std::collections::VecDeque<usize> = (0..plugged.len()).filter(|&i| plugged[i]).collect();
    let mut counts = vec![0; plugged.len()];
    let k = config.max_concurrent.min(queue.len());
    for _ in 0..slots {
        for _ in 0..k {
            let o = queue.pop_front().expect("k <= queue length");
            counts[o] += 1;
            queue.push_back(o);
        }
    }
    counts
}

pub fn round_robin_counts(config: &RoundRobinConfig, plugged: &[bool], slots: u64) -> Vec<u64> {
    let mut counts = vec![0; plugged.len()];
    for s in 0..slots {
        let alloc = round_robin_step(config, plugged, s as f64 * config.slot_length);
        for (c, a) in counts.iter_mut().zip(alloc) {
            if a > 0.0 {
                *c += 1;
            }
        }
    }
    counts
}

/// Runs every instance with up to `max_outlets` outlets and `max_slots`
/// slots; returns the number of instances and the mismatches.
pub fn round_robin_oracle(max_outlets: usize, max_slots: u64) -> (usize, Vec<String>) {
    let mut instances = 0;
    let mut mismatches = Vec::new();
    for n in 1..=max_outlets {
        for mask in 0u32..(1 << n) {
            let plugged: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            for k in 1..=n {
                let config = RoundRobinConfig {
                    max_concurrent: k,
                    ..RoundRobinConfig::default()
                };
                for slots in 1..=max_slots {
                    instances += 1;
                    let got = round_robin_counts(&config, &plugged, slots);
                    let want = rotating_queue_counts(&config, &plugged, slots);
                    if got != want {
                        mismatches.push(format!("plugged {plugged:?} k {k} slots {slots}: {got:?} vs {want:?}"));
                    }
                }
            }
        }
    }
    (instances, mismatches)
}
