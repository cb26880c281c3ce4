mod common;

use common::{exhaustive, random_ops, run_ops, Op};
use picsim::pic_fw::Opcode;
use picsim::sim::RngStreams;

#[test]
fn exhaustive_small_interleavings_are_clean() {
    let mut cases = 0;
    for k in 0..=4 {
        for m in 0..=4 {
            for ops in exhaustive(k, m) {
                let out = run_ops(&ops);
                assert!(out.is_clean(), "{ops:?}\n{out:?}");
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 62_762);
}

#[test]
fn random_interleavings_are_clean() {
    let mut rng = RngStreams::new(2024).stream("fw/random");
    for _ in 0..2_000 {
        let ops = random_ops(&mut rng);
        let out = run_ops(&ops);
        assert!(out.is_clean(), "{ops:?}\n{out:?}");
    }
}

#[test]
fn ticks_during_a_collection_coalesce_into_one_push() {
    let ops = [Op::Tick, Op::Step, Op::Tick, Op::Tick, Op::Tick];
    let out = run_ops(&ops);
    assert_eq!(out.pushes, 2);
    assert_eq!(out.expected_pushes, 2);
}

#[test]
fn request_during_collection_is_answered_after_it() {
    let ops = [Op::Tick, Op::Step, Op::command(1, Opcode::PowerInfoRequest)];
    let out = run_ops(&ops);
    assert!(out.is_clean());
    let push = out.replies.iter().position(|m| m.reply_to.is_none()).unwrap();
    let reply = out.replies.iter().position(|m| m.reply_to == Some(1)).unwrap();
    assert!(push < reply);
    assert!(out.replies[reply].sent_at >= out.replies[push].sent_at);
}

#[test]
fn fifth_command_overflows_and_still_gets_a_reply() {
    let ops: Vec<Op> = (1..=5).map(|s| Op::command(s, Opcode::PowerInfoRequest)).collect();
    let out = run_ops(&ops);
    assert!(out.is_clean(), "{out:?}");
    let err = out.replies.iter().find(|m| m.reply_to == Some(5)).unwrap();
    assert_eq!(err.kind, picsim::proto::MessageKind::Error);
}
