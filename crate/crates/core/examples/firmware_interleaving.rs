//! Drives the PIC firmware by hand: commands and timer ticks arriving while
//! a collection is running are latched and served afterwards.
//!
//! `cargo run --example firmware_interleaving`

use picsim::domain::{ChargingStation, EvModel};
use picsim::latency::{LinkKind, NetworkModels, SegmentStreams, StationLinks};
use picsim::pic_fw::{Command, Opcode, PicConfig, PicState, SimMeterBus};
use picsim::sim::RngStreams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut station = ChargingStation::new(0, 4, 40.0, LinkKind::ThreeG);
    station.plug(0, EvModel::default(), 0.0)?;
    let models = NetworkModels::fixed(4.5, 0.5);
    let mut links = StationLinks::new(&models, LinkKind::ThreeG, SegmentStreams::derive(&RngStreams::new(7), "fw"));
    let mut bus = SimMeterBus::new(&station, &mut links);
    let mut pic = PicState::startup_init(0, &mut bus, PicConfig::default())?;
    println!("registered {:?}, phase {:?}", pic.registered_meters(), pic.phase());

    pic.on_timer_interrupt();
    let out = pic.main_loop_step(&mut bus, 0.0);
    println!("t=0.0 push started, busy until {} s", out.busy_until);

    // Both arrive mid-collection: only flags change.
    pic.on_command(&Command::new(1, Opcode::PowerInfoRequest));
    pic.on_serial_interrupt(r#"{"seq":2,"op":2,"period_s":10.0}"#);
    pic.on_serial_interrupt("not a command");
    println!("t=1.0 latched {} commands, push_data={}", pic.flags.pending.len(), pic.flags.push_data);
    assert!(pic.main_loop_step(&mut bus, 1.0).messages.is_empty());

    let out = pic.main_loop_step(&mut bus, pic.busy_until());
    for m in &out.messages {
        println!("  {:?} seq {} reply_to {:?} at {} s", m.kind, m.seq, m.reply_to, m.sent_at);
    }
    println!("push period now {} s", pic.push_period());
    Ok(())
}
