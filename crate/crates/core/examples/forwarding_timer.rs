//! Forwarding-timer table: better-ranked candidates and candidates with
//! more packets to mix fire first.

use cormen::protocol::forwarding_timer;

fn main() {
    let t_slot = 0.005;
    let etx = 3.0;
    print!("   i \\ n");
    for n in 1..=4 {
        print!("{n:>9}");
    }
    println!();
    for i in 1..=4 {
        print!("{i:>8}");
        for n in 1..=4 {
            print!("{:>7.2}ms", forwarding_timer(i, n, etx, t_slot).unwrap() * 1e3);
        }
        println!();
    }
    println!("rank 0 is rejected: {}", forwarding_timer(0, 1, etx, t_slot).unwrap_err());
}
