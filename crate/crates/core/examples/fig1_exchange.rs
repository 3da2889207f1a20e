//! Alice and Bob swap one packet through a relay. Plain forwarding needs
//! four DATA transmissions; a relay that XORs the two packets needs three.

use std::path::Path;

use cormen::scenario::load_scenario;
use cormen::sim::{run, ProtocolKind};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig1_chain.scn");
    let base = load_scenario(&path).expect("shipped scenario parses");

    for protocol in ProtocolKind::ALL {
        let mut config = base.clone();
        config.protocol = protocol;
        config.trace = true;
        let result = run(&config, config.seed);
        let c = &result.summary.counters;
        println!(
            "{protocol:>6}: {} DATA frames ({} coded), {} of {} packets delivered",
            c.tx_data_frames, c.tx_coded_frames, result.summary.delivered, result.summary.generated
        );
        if protocol == ProtocolKind::Cormen {
            for line in result.trace.iter().filter(|l| l.contains(" tx DATA")) {
                println!("        {}", line.split(" len=").next().unwrap_or(line));
            }
        }
    }
}
