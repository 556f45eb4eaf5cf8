//! Locate a worker's home by intersecting the cloaks of repeated requests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sc_privacy::adversary::{observe_cloaks, triangulate};
use sc_privacy::{Location, WorkerId};

fn main() -> sc_privacy::Result<()> {
    let home = Location::new(4.0, 7.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs = observe_cloaks(home, 0.5, 10, WorkerId(0), &mut rng)?;
    let t = triangulate(&obs, 50_000, 1)?;
    for n in 1..=t.observations() {
        println!("{n:>2} requests: feasible area {:.4} km^2", t.area_after(n));
    }
    println!("home still inside: {}", t.contains(&home));
    Ok(())
}
