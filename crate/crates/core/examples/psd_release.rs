//! Publish an adaptive-grid PSD of 1000 workers and query it.

use sc_privacy::dp::{build_psd, PrivacyBudget, PsdConfig};
use sc_privacy::sim::{generate_scenario, ScenarioConfig};
use sc_privacy::Rect;

fn main() -> sc_privacy::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            tasks: 0,
            ..ScenarioConfig::default()
        },
        1,
    )?;
    let locs: Vec<_> = sc.workers.iter().map(|w| w.location).collect();
    let psd = build_psd(&locs, &sc.world, PrivacyBudget::even(0.5)?, &PsdConfig::default())?;

    println!("{} leaves, epsilon spent {}", psd.leaf_count(), psd.spent_epsilon());
    let quarter = Rect::new(0.0, 0.0, 10.0, 10.0)?;
    let truth = locs.iter().filter(|p| quarter.contains(p)).count();
    println!(
        "lower-left quarter: noisy {:.1}, true {truth}",
        psd.query_noisy_count(&quarter)
    );
    Ok(())
}
