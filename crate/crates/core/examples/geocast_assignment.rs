//! Assign one task through a geocast region chosen from noisy counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sc_privacy::dp::{build_psd, PrivacyBudget, PsdConfig};
use sc_privacy::geocast::{assign_task, utility, worker_leaves, GeocastConfig, LeafGrid};
use sc_privacy::sim::{generate_scenario, ScenarioConfig};
use sc_privacy::DisclosureLedger;

fn main() -> sc_privacy::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            tasks: 1,
            epochs: 1,
            ..ScenarioConfig::default()
        },
        2,
    )?;
    let locs: Vec<_> = sc.workers.iter().map(|w| w.location).collect();
    let psd = build_psd(&locs, &sc.world, PrivacyBudget::even(1.0)?, &PsdConfig::default())?;
    let grid = LeafGrid::new(&psd);
    let leaves = worker_leaves(&grid, &sc.workers);

    let cfg = GeocastConfig::default();
    println!("one worker at p=0.9 gives U = {:.2}", utility(0.9, 1.0)?);
    let mut budgets: Vec<f64> = sc.workers.iter().map(|w| w.travel_budget).collect();
    let mut ledger = DisclosureLedger::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let task = &sc.tasks[0][0];
    let a = assign_task(
        &grid,
        &leaves,
        task,
        &sc.workers,
        &mut budgets,
        &cfg,
        &mut rng,
        &mut ledger,
    )?;
    println!(
        "region of {} cells, {:.1} estimated workers, U = {:.3}",
        a.region.cells.len(),
        a.region.estimated_workers,
        a.region.utility
    );
    println!("{} notified, assigned {:?}", a.notified, a.assigned);
    println!("disclosures: {:?}", ledger.summary());
    Ok(())
}
