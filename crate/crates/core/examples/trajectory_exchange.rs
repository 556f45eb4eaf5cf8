//! Exchange trajectories between workers and compare the two commit rules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sc_privacy::exchange::{run_exchange, skewed_stores, write_trajectories, ExchangeConfig, ExchangeVariant};

fn main() -> sc_privacy::Result<()> {
    for variant in [ExchangeVariant::Local, ExchangeVariant::Global] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stores = skewed_stores(10, 20, 8.0, 0.6, &mut rng)?;
        let cfg = ExchangeConfig {
            variant,
            ..ExchangeConfig::default()
        };
        let out = run_exchange(stores, &cfg, &mut rng)?;
        println!(
            "{variant:?}: {} of {} swaps committed, mean entropy {:.4} -> {:.4}",
            out.committed,
            out.attempted,
            out.mean_entropy_trace[0],
            out.mean_entropy_trace.last().unwrap()
        );
        if variant == ExchangeVariant::Global {
            let text = write_trajectories(&out.stores);
            println!("first stored line: {}", text.lines().next().unwrap_or(""));
        }
    }
    Ok(())
}
