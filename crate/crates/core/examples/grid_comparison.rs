//! Runs the shipped grid scenarios for all three protocols and prints the
//! load curve. Pass a seed as the first argument (default 1).

use std::path::Path;

use cormen::batch::run_batch;
use cormen::scenario::load_scenario;
use cormen::sim::ProtocolKind;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let configs: Vec<_> = ["grid3x3", "grid5x3", "grid5x5"]
        .iter()
        .map(|n| load_scenario(&dir.join(format!("{n}.scn"))).expect("shipped scenario parses"))
        .collect();

    let rows = run_batch(&configs, &ProtocolKind::ALL, &[seed]).expect("runs are clean");
    for config in &configs {
        println!("{} (seed {seed})", config.name);
        println!("{:>8} {:>6} {:>24} {:>24} {:>18}", "t_s", "flows", "throughput bps c/cope/p", "pdr c/cope/p", "coded c/cope");
        let pick = |p: ProtocolKind| rows.iter().filter(move |r| r.scenario == config.name && r.protocol == p);
        let cormen: Vec<_> = pick(ProtocolKind::Cormen).collect();
        let cope: Vec<_> = pick(ProtocolKind::Cope).collect();
        let plain: Vec<_> = pick(ProtocolKind::Plain).collect();
        for ((a, b), c) in cormen.iter().zip(&cope).zip(&plain) {
            let (ra, rb, rc) = (&a.checkpoint.report, &b.checkpoint.report, &c.checkpoint.report);
            println!(
                "{:>8.0} {:>6} {:>8.0}/{:>7.0}/{:>7.0} {:>8.3}/{:>7.3}/{:>7.3} {:>9}/{:>8}",
                a.checkpoint.t_s,
                a.checkpoint.flows_active,
                ra.avg_throughput_bps,
                rb.avg_throughput_bps,
                rc.avg_throughput_bps,
                ra.pdr,
                rb.pdr,
                rc.pdr,
                ra.counters.tx_coded_frames,
                rb.counters.tx_coded_frames
            );
        }
        println!();
    }
}
