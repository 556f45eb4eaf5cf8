//! Pull-mode k-anonymous querying: cloak, select, serve and share.

use sc_privacy::geometry::voronoi_diagram;
use sc_privacy::piri::{form_all_queries, select_queries, serve_and_share};
use sc_privacy::sim::{generate_scenario, ScenarioConfig};
use sc_privacy::DisclosureLedger;

fn main() -> sc_privacy::Result<()> {
    let cfg = ScenarioConfig {
        workers: 60,
        tasks: 10,
        epochs: 1,
        anonymity_k: 4,
        ..ScenarioConfig::default()
    };
    let sc = generate_scenario(&cfg, 3)?;
    let sites: Vec<_> = sc.workers.iter().map(|w| (w.id, w.location)).collect();
    let voronoi = voronoi_diagram(&sites, &sc.world)?;

    let queries = form_all_queries(&sc.workers, &voronoi)?;
    let selected = select_queries(&queries);
    println!("{} queries formed, {} submitted", queries.len(), selected.len());

    let mut ledger = DisclosureLedger::new();
    let delivery = serve_and_share(&queries, &selected, &sc.tasks[0], &voronoi, &mut ledger, 0)?;
    for t in &sc.tasks[0] {
        println!("{} -> {:?}", t.id, delivery.recipient(t.id));
    }
    println!("disclosures: {:?}", ledger.summary());
    Ok(())
}
