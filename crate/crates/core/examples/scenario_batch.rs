//! Parses a scenario from text, runs it under every protocol with two
//! seeds, and writes the checkpoint CSV to stdout.

use cormen::batch::{run_batch, write_csv};
use cormen::scenario::parse_scenario;
use cormen::sim::ProtocolKind;

const SCENARIO: &str = "
[topology]
rows = 2
cols = 3

[flows]
flow 0 5 start 1 stop 11
flow 5 0 start 3 stop 11

[sim]
duration = 15
";

fn main() {
    let mut parsed = parse_scenario(SCENARIO).expect("valid scenario");
    parsed.name = "two_by_three".into();
    let config = parsed.to_sim_config().expect("valid scenario");

    let rows = run_batch(&[config], &ProtocolKind::ALL, &[1, 2]).expect("clean runs");
    write_csv(std::io::stdout().lock(), &rows).expect("stdout");

    let typo = parse_scenario("[protocol]\nprotocol = cromen\nqueue_size = 4\n").unwrap_err();
    eprintln!("a broken file reports every problem:\n{typo}");
}
