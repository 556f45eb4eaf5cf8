//! Push-mode assignment over cloaks: server-side greedy, worker-side refinement.

use sc_privacy::sim::{generate_scenario, ScenarioConfig};
use sc_privacy::stac::{cloak_workers, distance_matrix, g_stac, refine_all, Estimator};

fn main() -> sc_privacy::Result<()> {
    let cfg = ScenarioConfig {
        workers: 40,
        tasks: 15,
        epochs: 1,
        travel_budget: 12.0,
        ..ScenarioConfig::default()
    };
    let sc = generate_scenario(&cfg, 4)?;
    let tasks = &sc.tasks[0];
    let cloaked = cloak_workers(&sc.workers)?;

    for estimator in [
        Estimator::Centroid,
        Estimator::Expected {
            samples: 10_000,
            seed: 1,
        },
    ] {
        let d_hat = distance_matrix(&cloaked, tasks, estimator)?;
        let global = g_stac(&cloaked, tasks, 0.8, &d_hat)?;
        let rows = refine_all(&cloaked, &global, tasks, 2)?;
        let tc: f64 = rows.iter().map(|r| r.tc).sum();
        let repaired = rows.iter().filter(|r| r.repaired).count();
        println!(
            "{estimator:?}: TU {:.2} (infeasible {}), estimated TC {:.2}, refined TC {tc:.2}, {repaired} rows repaired",
            global.tu, global.infeasible, global.tc
        );
    }
    Ok(())
}
