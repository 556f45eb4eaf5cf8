//! Range-dependency and all-inclusivity leaks on small hand-placed instances.

use sc_privacy::adversary::{
    detect_all_inclusivity, detect_range_dependency, queries_with_scheme, singleton_count, RadiusScheme,
};
use sc_privacy::geometry::voronoi_diagram;
use sc_privacy::piri::{form_all_queries, select_queries};
use sc_privacy::{AcceptanceModel, Location, Rect, Worker, WorkerId};

fn workers(points: &[(f64, f64)], k: usize) -> Vec<Worker> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Worker {
            id: WorkerId(i as u32),
            location: Location::new(x, y),
            travel_budget: 50.0,
            anonymity_k: k,
            acceptance: AcceptanceModel::default(),
        })
        .collect()
}

fn main() -> sc_privacy::Result<()> {
    let world = Rect::world(10.0, 10.0)?;

    let pair = workers(&[(2.0, 5.0), (3.0, 5.0)], 2);
    let v = voronoi_diagram(&pair.iter().map(|w| (w.id, w.location)).collect::<Vec<_>>(), &world)?;
    for scheme in [RadiusScheme::Naive, RadiusScheme::GroupMax] {
        let qs = queries_with_scheme(&pair, &v, scheme)?;
        let hits = singleton_count(&detect_range_dependency(&qs, &pair, &v, scheme)?);
        println!("range dependency, {scheme:?}: {hits} issuers identified");
    }

    let trio = workers(&[(5.0, 5.0), (6.0, 5.0), (4.5, 6.0)], 2);
    let v = voronoi_diagram(&trio.iter().map(|w| (w.id, w.location)).collect::<Vec<_>>(), &world)?;
    let qs = form_all_queries(&trio, &v)?;
    let all: Vec<Rect> = qs.iter().map(|q| q.cloak).collect();
    let chosen: Vec<Rect> = select_queries(&qs).iter().map(|&i| qs[i].cloak).collect();
    println!("all-inclusivity, submit all: {:?}", detect_all_inclusivity(&all, &trio));
    println!(
        "all-inclusivity, selected:   {:?}",
        detect_all_inclusivity(&chosen, &trio)
    );
    Ok(())
}
