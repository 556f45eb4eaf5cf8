use std::collections::HashMap;

use super::{convex_polygon_contains, polygon_area, smallest_enclosing_circle, Disc, Rect};
use crate::error::{invalid, Result};
use crate::model::{Location, WorkerId};

/// Offset applied to each repeat of a coincident site.
pub const COINCIDENT_JITTER: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCell {
    pub owner: WorkerId,
    /// Site after coincident-point jitter.
    pub site: Location,
    /// Counter-clockwise vertices, clipped to the world rectangle.
    pub polygon: Vec<Location>,
    /// Smallest circle enclosing the cell.
    pub enclosing: Disc,
    /// Radius of the smallest circle centred on the owner that encloses the
    /// cell; a range query of this radius around the owner retrieves every
    /// point of the cell.
    pub reach: f64,
}

impl VoronoiCell {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    pub fn contains(&self, p: &Location) -> bool {
        convex_polygon_contains(&self.polygon, p, 1e-9)
    }

    /// True when every vertex lies inside `rect`.
    pub fn inside(&self, rect: &Rect) -> bool {
        self.polygon.iter().all(|v| rect.contains_with_tolerance(v, 1e-9))
    }
}

#[derive(Debug, Clone)]
pub struct VoronoiDiagram {
    world: Rect,
    cells: Vec<VoronoiCell>,
}

impl VoronoiDiagram {
    pub fn world(&self) -> &Rect {
        &self.world
    }

    pub fn cells(&self) -> &[VoronoiCell] {
        &self.cells
    }

    pub fn cell(&self, index: usize) -> &VoronoiCell {
        &self.cells[index]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the cell owning `p`: the nearest site, lower index on ties.
    pub fn locate(&self, p: &Location) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.cells.iter().enumerate() {
            let dx = c.site.x - p.x;
            let dy = c.site.y - p.y;
            let d = dx * dx + dy * dy;
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn index_of(&self, owner: WorkerId) -> Option<usize> {
        self.cells.iter().position(|c| c.owner == owner)
    }
}

/// Keeps the part of `poly` on the owner's side of the bisector between
/// `site` and `other`.
fn clip_half_plane(poly: &[Location], site: &Location, other: &Location) -> Vec<Location> {
    let nx = other.x - site.x;
    let ny = other.y - site.y;
    let mx = 0.5 * (site.x + other.x);
    let my = 0.5 * (site.y + other.y);
    let side = |p: &Location| (p.x - mx) * nx + (p.y - my) * ny;

    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let sa = side(&a);
        let sb = side(&b);
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push(Location::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }
    out
}

fn jitter_coincident(sites: &[Location], world: &Rect) -> Vec<Location> {
    let mut seen: HashMap<(u64, u64), u32> = HashMap::new();
    sites
        .iter()
        .map(|p| {
            let n = seen.entry((p.x.to_bits(), p.y.to_bits())).or_insert(0);
            let shift = f64::from(*n) * COINCIDENT_JITTER;
            *n += 1;
            if shift == 0.0 {
                return *p;
            }
            let nudge = |v: f64, hi: f64| if v + shift <= hi { v + shift } else { v - shift };
            Location::new(nudge(p.x, world.max_x), nudge(p.y, world.max_y))
        })
        .collect()
}

/// Voronoi diagram of the given sites, every cell clipped to `world`.
///
/// Each cell is the world rectangle intersected with the half-planes towards
/// its site, visiting other sites nearest-first and stopping once a site is
/// farther than twice the current cell's reach.
pub fn voronoi_diagram(sites: &[(WorkerId, Location)], world: &Rect) -> Result<VoronoiDiagram> {
    if sites.is_empty() {
        return Err(invalid("voronoi diagram needs at least one site"));
    }
    if let Some((id, _)) = sites.iter().find(|(_, p)| !p.is_finite()) {
        return Err(invalid(format!("site {id} is not finite")));
    }
    let points: Vec<Location> = sites.iter().map(|(_, p)| *p).collect();
    let points = jitter_coincident(&points, world);
    let world_poly = world.corners().to_vec();

    let mut cells = Vec::with_capacity(points.len());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for (i, site) in points.iter().enumerate() {
        order.clear();
        order.extend(
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (site.distance(q), j)),
        );
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut poly = world_poly.clone();
        for &(d, j) in &order {
            let reach = poly.iter().map(|v| site.distance(v)).fold(0.0, f64::max);
            if d > 2.0 * reach {
                break;
            }
            poly = clip_half_plane(&poly, site, &points[j]);
            if poly.is_empty() {
                break;
            }
        }
        if poly.is_empty() {
            // site outside the world: keep a degenerate cell at the site
            poly.push(*site);
        }
        let reach = poly.iter().map(|v| site.distance(v)).fold(0.0, f64::max);
        cells.push(VoronoiCell {
            owner: sites[i].0,
            site: *site,
            enclosing: smallest_enclosing_circle(&poly),
            polygon: poly,
            reach,
        });
    }
    Ok(VoronoiDiagram { world: *world, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sites(points: &[(f64, f64)]) -> Vec<(WorkerId, Location)> {
        points
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (WorkerId(i as u32), Location::new(*x, *y)))
            .collect()
    }

    fn random_sites(n: usize, seed: u64, size: f64) -> Vec<(WorkerId, Location)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (
                    WorkerId(i as u32),
                    Location::new(rng.random_range(0.0..size), rng.random_range(0.0..size)),
                )
            })
            .collect()
    }

    fn brute_nearest(sites: &[(WorkerId, Location)], p: &Location) -> usize {
        let mut best = 0;
        for (i, (_, s)) in sites.iter().enumerate() {
            if s.distance(p) < sites[best].1.distance(p) {
                best = i;
            }
        }
        best
    }

    #[test]
    fn empty_input_rejected() {
        let world = Rect::world(10.0, 10.0).unwrap();
        assert!(voronoi_diagram(&[], &world).is_err());
    }

    #[test]
    fn two_sites_split_on_bisector() {
        let world = Rect::world(10.0, 10.0).unwrap();
        let d = voronoi_diagram(&sites(&[(2.0, 5.0), (6.0, 5.0)]), &world).unwrap();
        assert!((d.cell(0).area() - 40.0).abs() < 1e-9);
        assert!((d.cell(1).area() - 60.0).abs() < 1e-9);
        assert!(d.cell(0).polygon.iter().all(|v| v.x <= 4.0 + 1e-12));
        assert!(d.cell(1).polygon.iter().all(|v| v.x >= 4.0 - 1e-12));
    }

    #[test]
    fn square_corners_give_equal_quadrants() {
        let world = Rect::world(10.0, 10.0).unwrap();
        let d = voronoi_diagram(&sites(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]), &world).unwrap();
        for c in d.cells() {
            assert!((c.area() - 25.0).abs() < 1e-9);
            assert!((c.enclosing.radius - 50f64.sqrt() / 2.0).abs() < 1e-9);
            assert!((c.reach - 50f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_sites_are_jittered() {
        let world = Rect::world(10.0, 10.0).unwrap();
        let d = voronoi_diagram(&sites(&[(5.0, 5.0), (5.0, 5.0), (1.0, 1.0)]), &world).unwrap();
        let total: f64 = d.cells().iter().map(|c| c.area()).sum();
        assert!((total - 100.0).abs() < 1e-6);
        assert_ne!(d.cell(0).site, d.cell(1).site);
    }

    #[test]
    fn cells_partition_the_world() {
        let world = Rect::world(100.0, 100.0).unwrap();
        for seed in 0..5 {
            let s = random_sites(200, seed, 100.0);
            let d = voronoi_diagram(&s, &world).unwrap();
            let total: f64 = d.cells().iter().map(|c| c.area()).sum();
            assert!(
                (total - world.area()).abs() < 1e-6 * world.area(),
                "seed {seed}: {total}"
            );
        }
    }

    #[test]
    fn membership_matches_nearest_neighbour_oracle() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let s = random_sites(10, 42, 100.0);
        let d = voronoi_diagram(&s, &world).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = Location::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let owner = brute_nearest(&s, &p);
            assert!(d.cell(owner).contains(&p));
            assert_eq!(d.locate(&p), owner);
        }
    }

    #[test]
    fn membership_oracle_on_large_instances() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let s = random_sites(200, 3, 100.0);
        let d = voronoi_diagram(&s, &world).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5_000 {
            let p = Location::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let owner = brute_nearest(&s, &p);
            assert!(d.cell(owner).contains(&p));
            // interior points of other cells are not claimed
            let claimed = d
                .cells()
                .iter()
                .filter(|c| convex_polygon_contains(&c.polygon, &p, -1e-7))
                .count();
            assert!(claimed <= 1);
        }
    }
}
