//! Run every mechanism against the non-private baseline and print the means.

use sc_privacy::cli::summary_table;
use sc_privacy::sim::{
    metrics_csv, run_experiment, DpGeocastConfig, ExchangeMechanismConfig, MechanismConfig, NamedMechanism, PiriConfig,
    ScenarioConfig, StacConfig,
};

fn main() -> sc_privacy::Result<()> {
    let scenario = ScenarioConfig {
        workers: 400,
        tasks: 80,
        epochs: 2,
        ..ScenarioConfig::default()
    };
    let mechanisms: Vec<NamedMechanism> = [
        MechanismConfig::Baseline,
        MechanismConfig::DpGeocast(DpGeocastConfig::default()),
        MechanismConfig::Piri(PiriConfig::default()),
        MechanismConfig::Stac(StacConfig::default()),
        MechanismConfig::Exchange(ExchangeMechanismConfig::default()),
    ]
    .into_iter()
    .map(NamedMechanism::new)
    .collect();
    let results = run_experiment(&scenario, &mechanisms, &[0, 1, 2], 3)?;
    print!("{}", summary_table(&results));
    let csv = metrics_csv(&results)?;
    println!("{} CSV rows", csv.lines().count() - 1);
    Ok(())
}
