//! ETX from delivery ratios, from probe counts, and along grid routes.

use cormen::topology::{
    build_grid, estimate_etx_from_probes, link_etx, simulate_probe_log, NodeId, RouteTable,
};

fn main() {
    println!("ETX(0.9, 0.8) = {:.10}", link_etx(0.9, 0.8).unwrap());

    let lossy = build_grid(1, 2, 200.0, 0.8, 0.8).unwrap();
    let (a, b) = (NodeId(0), NodeId(1));
    for duration in [10.0, 100.0, 1000.0] {
        let log = simulate_probe_log(&lossy, duration, 3);
        let est = estimate_etx_from_probes(&log, &[(a, b)], duration, duration)[&(a, b)];
        println!(
            "{duration:>6} s of probes: d_f {:.3} d_r {:.3} ETX {:.4} (true {:.4})",
            est.d_f,
            est.d_r,
            est.etx,
            link_etx(0.8, 0.8).unwrap()
        );
    }

    let grid = build_grid(3, 3, 200.0, 1.0, 1.0).unwrap();
    let routes = RouteTable::new(&grid);
    let (src, dst) = (NodeId(0), NodeId(8));
    println!("3x3 route {:?} -> {:?}: {:?}, ETX {}", src, dst, routes.path(src, dst).unwrap(), routes.etx(src, dst));
}
