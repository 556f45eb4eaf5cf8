use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::laplace::laplace_sample;
use crate::error::{invalid, Result};
use crate::geometry::Rect;
use crate::model::Location;

/// ε split between the two grid levels; `level1 + level2 == total` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub total: f64,
    pub level1: f64,
    pub level2: f64,
}

impl PrivacyBudget {
    /// Splits `total` so that level 1 receives `level1_fraction` of it.
    pub fn split(total: f64, level1_fraction: f64) -> Result<Self> {
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {total}")));
        }
        if !(level1_fraction > 0.0 && level1_fraction < 1.0) {
            return Err(invalid(format!(
                "level-1 budget fraction must lie in (0, 1), got {level1_fraction}"
            )));
        }
        // The larger share is computed by subtraction so the sum is exact.
        let (level1, level2) = if level1_fraction <= 0.5 {
            let level2 = total - total * level1_fraction;
            (total - level2, level2)
        } else {
            let level1 = total - total * (1.0 - level1_fraction);
            (level1, total - level1)
        };
        let budget = PrivacyBudget { total, level1, level2 };
        budget.validate()?;
        Ok(budget)
    }

    pub fn even(total: f64) -> Result<Self> {
        Self::split(total, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level1 > 0.0 && self.level2 > 0.0) {
            return Err(invalid("both grid levels need a positive budget"));
        }
        if self.level1 + self.level2 != self.total {
            return Err(invalid(format!(
                "budget split {} + {} does not add up to {}",
                self.level1, self.level2, self.total
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdConfig {
    /// Level-1 grid is `level1_granularity × level1_granularity`.
    pub level1_granularity: usize,
    /// Constant `c₂` in the level-2 granularity rule.
    pub granularity_constant: f64,
    pub seed: u64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            level1_granularity: 8,
            granularity_constant: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub bounds: Rect,
    /// Signed noisy worker count; negative values are kept as released.
    pub noisy_count: f64,
    pub level: u8,
    /// Children are laid out row-major, `granularity × granularity`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<GridCell>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub granularity: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// One application of the Laplace mechanism over a whole grid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpend {
    pub level: u8,
    pub epsilon: f64,
    pub noise_scale: f64,
    pub cells: usize,
}

/// A released two-level adaptive grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub world: Rect,
    pub level1_granularity: usize,
    pub granularity_constant: f64,
    pub budget: PrivacyBudget,
    pub seed: u64,
    /// Level-1 cells, row-major with rows along y.
    pub cells: Vec<GridCell>,
    pub spends: Vec<BudgetSpend>,
}

/// Level-2 granularity for a level-1 cell with noisy count `noisy`.
///
/// `⌈√(N′·ε₂/c₂)⌉`, at least one, and capped at `⌈√N′⌉` so that a level-2
/// cell is still expected to hold a worker.
pub fn level2_granularity(noisy: f64, epsilon2: f64, granularity_constant: f64) -> usize {
    let adaptive = (noisy.max(0.0) * epsilon2 / granularity_constant).sqrt().ceil();
    let cap = noisy.max(1.0).sqrt().ceil();
    let m = adaptive.min(cap).max(1.0);
    if m.is_finite() {
        m as usize
    } else {
        1
    }
}

fn split_rect(bounds: &Rect, m: usize) -> Vec<Rect> {
    let edge = |lo: f64, hi: f64, i: usize| {
        if i == m {
            hi
        } else {
            lo + (hi - lo) * i as f64 / m as f64
        }
    };
    let mut out = Vec::with_capacity(m * m);
    for row in 0..m {
        for col in 0..m {
            out.push(Rect {
                min_x: edge(bounds.min_x, bounds.max_x, col),
                max_x: edge(bounds.min_x, bounds.max_x, col + 1),
                min_y: edge(bounds.min_y, bounds.max_y, row),
                max_y: edge(bounds.min_y, bounds.max_y, row + 1),
            });
        }
    }
    out
}

fn grid_index(bounds: &Rect, m: usize, p: &Location) -> usize {
    let axis = |v: f64, lo: f64, hi: f64| {
        let span = hi - lo;
        if span <= 0.0 {
            return 0;
        }
        let i = ((v - lo) / span * m as f64).floor();
        (i.max(0.0) as usize).min(m - 1)
    };
    let col = axis(p.x, bounds.min_x, bounds.max_x);
    let row = axis(p.y, bounds.min_y, bounds.max_y);
    row * m + col
}

pub fn build_psd(locations: &[Location], world: &Rect, budget: PrivacyBudget, config: &PsdConfig) -> Result<Psd> {
    budget.validate()?;
    if config.level1_granularity < 1 {
        return Err(invalid("level-1 granularity must be at least 1"));
    }
    if !(config.granularity_constant > 0.0) {
        return Err(invalid("granularity constant must be positive"));
    }
    let m1 = config.level1_granularity;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut members: Vec<Vec<Location>> = vec![Vec::new(); m1 * m1];
    for p in locations {
        members[grid_index(world, m1, p)].push(*p);
    }

    let scale1 = 1.0 / budget.level1;
    let mut cells = Vec::with_capacity(m1 * m1);
    for (bounds, inside) in split_rect(world, m1).into_iter().zip(&members) {
        let noisy_count = inside.len() as f64 + laplace_sample(scale1, &mut rng)?;
        cells.push(GridCell {
            bounds,
            noisy_count,
            level: 1,
            children: Vec::new(),
            granularity: 0,
        });
    }

    let scale2 = 1.0 / budget.level2;
    let mut level2_cells = 0;
    for (cell, inside) in cells.iter_mut().zip(&members) {
        let m2 = level2_granularity(cell.noisy_count, budget.level2, config.granularity_constant);
        let mut counts = vec![0usize; m2 * m2];
        for p in inside {
            counts[grid_index(&cell.bounds, m2, p)] += 1;
        }
        let mut children = Vec::with_capacity(m2 * m2);
        for (bounds, n) in split_rect(&cell.bounds, m2).into_iter().zip(counts) {
            children.push(GridCell {
                bounds,
                noisy_count: n as f64 + laplace_sample(scale2, &mut rng)?,
                level: 2,
                children: Vec::new(),
                granularity: 0,
            });
        }
        level2_cells += children.len();
        cell.children = children;
        cell.granularity = m2;
    }

    Ok(Psd {
        world: *world,
        level1_granularity: m1,
        granularity_constant: config.granularity_constant,
        budget,
        seed: config.seed,
        cells,
        spends: vec![
            BudgetSpend {
                level: 1,
                epsilon: budget.level1,
                noise_scale: scale1,
                cells: m1 * m1,
            },
            BudgetSpend {
                level: 2,
                epsilon: budget.level2,
                noise_scale: scale2,
                cells: level2_cells,
            },
        ],
    })
}

impl Psd {
    /// Hand-built PSD with a uniform level-2 granularity and the given leaf
    /// counts in [`Psd::leaves`] order. Level-1 counts are the leaf sums.
    pub fn from_leaf_counts(
        world: &Rect,
        level1_granularity: usize,
        level2_granularity: usize,
        leaf_counts: &[f64],
    ) -> Result<Psd> {
        let m1 = level1_granularity;
        let m2 = level2_granularity;
        if m1 < 1 || m2 < 1 {
            return Err(invalid("granularities must be at least 1"));
        }
        if leaf_counts.len() != m1 * m1 * m2 * m2 {
            return Err(invalid(format!(
                "expected {} leaf counts, got {}",
                m1 * m1 * m2 * m2,
                leaf_counts.len()
            )));
        }
        let mut chunks = leaf_counts.chunks(m2 * m2);
        let cells = split_rect(world, m1)
            .into_iter()
            .map(|bounds| {
                let counts = chunks.next().expect("chunk per level-1 cell");
                let children: Vec<GridCell> = split_rect(&bounds, m2)
                    .into_iter()
                    .zip(counts)
                    .map(|(b, c)| GridCell {
                        bounds: b,
                        noisy_count: *c,
                        level: 2,
                        children: Vec::new(),
                        granularity: 0,
                    })
                    .collect();
                GridCell {
                    bounds,
                    noisy_count: counts.iter().sum(),
                    level: 1,
                    children,
                    granularity: m2,
                }
            })
            .collect();
        Ok(Psd {
            world: *world,
            level1_granularity: m1,
            granularity_constant: 5.0,
            budget: PrivacyBudget::even(f64::MAX)?,
            seed: 0,
            cells,
            spends: Vec::new(),
        })
    }

    /// Level-2 cells in release order: level-1 cells row-major, each
    /// followed by its children row-major.
    pub fn leaves(&self) -> impl Iterator<Item = &GridCell> + '_ {
        self.cells.iter().flat_map(|c| c.children.iter())
    }

    pub fn leaf_count(&self) -> usize {
        self.cells.iter().map(|c| c.children.len()).sum()
    }

    pub fn locate_level1(&self, p: &Location) -> usize {
        grid_index(&self.world, self.level1_granularity, p)
    }

    /// Flat leaf index of the level-2 cell that counted `p`.
    pub fn locate_leaf(&self, p: &Location) -> usize {
        let top = self.locate_level1(p);
        let offset: usize = self.cells[..top].iter().map(|c| c.children.len()).sum();
        let cell = &self.cells[top];
        offset + grid_index(&cell.bounds, cell.granularity.max(1), p)
    }

    /// Total ε consumed by the recorded noise applications.
    pub fn spent_epsilon(&self) -> f64 {
        self.spends.iter().map(|s| s.epsilon).sum()
    }

    /// Noisy worker count inside `region`, assuming workers are uniform
    /// within each level-2 cell; clamped below at zero.
    pub fn query_noisy_count(&self, region: &Rect) -> f64 {
        let total: f64 = self
            .leaves()
            .map(|c| {
                let area = c.bounds.area();
                if area <= 0.0 {
                    0.0
                } else {
                    c.noisy_count * c.bounds.overlap_area(region) / area
                }
            })
            .sum();
        total.max(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("psd serialises")
    }

    pub fn from_json(text: &str) -> Result<Psd> {
        serde_json::from_str(text).map_err(|e| invalid(format!("bad psd json: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_points(n: usize, size: f64, seed: u64) -> Vec<Location> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Location::new(rng.random_range(0.0..size), rng.random_range(0.0..size)))
            .collect()
    }

    #[test]
    fn budget_split_is_exact() {
        for total in [0.1, 0.5, 1.0, 0.3, 7.7, 10.0] {
            for f in [0.1, 0.25, 0.5, 0.7, 0.9] {
                let b = PrivacyBudget::split(total, f).unwrap();
                assert_eq!(b.level1 + b.level2, b.total);
            }
        }
        assert!(PrivacyBudget::even(0.0).is_err());
        assert!(PrivacyBudget::split(1.0, 1.0).is_err());
    }

    #[test]
    fn granularity_example_from_noisy_counts() {
        // ε₂ / c₂ = 0.03: 200 → 3×3, 50 → 2×2
        assert_eq!(level2_granularity(200.0, 0.15, 5.0), 3);
        assert_eq!(level2_granularity(50.0, 0.15, 5.0), 2);
    }

    #[test]
    fn granularity_edge_cases() {
        assert_eq!(level2_granularity(-40.0, 1.0, 5.0), 1);
        assert_eq!(level2_granularity(0.0, 1.0, 5.0), 1);
        // cap keeps about one worker per level-2 cell
        assert_eq!(level2_granularity(9.0, 1e6, 5.0), 3);
    }

    #[test]
    fn granularity_is_monotone_in_noisy_count() {
        for eps2 in [0.05, 0.25, 1.0, 5.0] {
            let mut prev = 0;
            for i in -100..2000 {
                let m = level2_granularity(i as f64 * 0.5, eps2, 5.0);
                assert!(m >= prev);
                prev = m;
            }
        }
    }

    #[test]
    fn zero_noise_limit_reproduces_true_counts() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let pts = uniform_points(500, 100.0, 4);
        let budget = PrivacyBudget::even(1e12).unwrap();
        let psd = build_psd(&pts, &world, budget, &PsdConfig::default()).unwrap();
        let mut truth = vec![0usize; psd.leaf_count()];
        for p in &pts {
            truth[psd.locate_leaf(p)] += 1;
        }
        for (cell, n) in psd.leaves().zip(truth) {
            assert!((cell.noisy_count - n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn each_worker_counted_once_per_level() {
        let world = Rect::world(10.0, 10.0).unwrap();
        let mut pts = uniform_points(40, 10.0, 2);
        // boundary points
        pts.push(Location::new(10.0, 10.0));
        pts.push(Location::new(0.0, 5.0));
        pts.push(Location::new(5.0, 5.0));
        let budget = PrivacyBudget::even(1e12).unwrap();
        let cfg = PsdConfig {
            level1_granularity: 4,
            ..PsdConfig::default()
        };
        let psd = build_psd(&pts, &world, budget, &cfg).unwrap();
        let l1: f64 = psd.cells.iter().map(|c| c.noisy_count).sum();
        let l2: f64 = psd.leaves().map(|c| c.noisy_count).sum();
        assert!((l1 - pts.len() as f64).abs() < 1e-6);
        assert!((l2 - pts.len() as f64).abs() < 1e-6);
        for p in &pts {
            let containing = psd.leaves().filter(|c| c.bounds.contains(p)).count();
            assert!(containing >= 1);
            let leaf = psd.leaves().nth(psd.locate_leaf(p)).unwrap();
            assert!(leaf.bounds.contains(p));
        }
    }

    #[test]
    fn children_tile_parents() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let pts = uniform_points(1000, 100.0, 5);
        let psd = build_psd(&pts, &world, PrivacyBudget::even(10.0).unwrap(), &PsdConfig::default()).unwrap();
        for c in &psd.cells {
            assert_eq!(c.children.len(), c.granularity * c.granularity);
            let area: f64 = c.children.iter().map(|k| k.bounds.area()).sum();
            assert!((area - c.bounds.area()).abs() < 1e-9);
            assert!(c.children.iter().all(|k| k.level == 2 && k.children.is_empty()));
            assert_eq!(c.children.last().unwrap().bounds.max_x, c.bounds.max_x);
            assert_eq!(c.children.last().unwrap().bounds.max_y, c.bounds.max_y);
        }
    }

    #[test]
    fn budget_consumed_exactly_once() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let budget = PrivacyBudget::split(0.7, 0.3).unwrap();
        let psd = build_psd(&uniform_points(100, 100.0, 1), &world, budget, &PsdConfig::default()).unwrap();
        assert_eq!(psd.spends.len(), 2);
        assert_eq!(psd.spent_epsilon(), 0.7);
        assert_eq!(psd.spends[0].noise_scale, 1.0 / budget.level1);
        assert_eq!(psd.spends[1].noise_scale, 1.0 / budget.level2);
    }

    #[test]
    fn noisy_total_within_three_sigma() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let pts = uniform_points(1000, 100.0, 17);
        let budget = PrivacyBudget::even(1.0).unwrap();
        let psd = build_psd(
            &pts,
            &world,
            budget,
            &PsdConfig {
                seed: 3,
                ..PsdConfig::default()
            },
        )
        .unwrap();
        let total: f64 = psd.leaves().map(|c| c.noisy_count).sum();
        let sigma = (psd.leaf_count() as f64 * 2.0 / (budget.level2 * budget.level2)).sqrt();
        assert!((total - 1000.0).abs() <= 3.0 * sigma, "total {total}, sigma {sigma}");
    }

    #[test]
    fn empty_worker_set_is_all_noise() {
        let world = Rect::world(10.0, 10.0).unwrap();
        let psd = build_psd(&[], &world, PrivacyBudget::even(1.0).unwrap(), &PsdConfig::default()).unwrap();
        assert_eq!(psd.cells.len(), 64);
        assert!(psd.leaves().any(|c| c.noisy_count != 0.0));
    }

    #[test]
    fn query_noisy_count_examples() {
        let world = Rect::world(4.0, 4.0).unwrap();
        let counts: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
        let psd = Psd::from_leaf_counts(&world, 2, 2, &counts).unwrap();
        let total: f64 = counts.iter().sum();
        assert!((psd.query_noisy_count(&world) - total.max(0.0)).abs() < 1e-9);

        let leaves: Vec<&GridCell> = psd.leaves().collect();
        let cell = leaves[10].bounds;
        assert!((psd.query_noisy_count(&cell) - leaves[10].noisy_count.max(0.0)).abs() < 1e-9);
        let negative = leaves[0].bounds;
        assert_eq!(psd.query_noisy_count(&negative), 0.0);

        let half = Rect::new(cell.min_x, cell.min_y, 0.5 * (cell.min_x + cell.max_x), cell.max_y).unwrap();
        assert!((psd.query_noisy_count(&half) - 0.5 * leaves[10].noisy_count).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let world = Rect::world(20.0, 20.0).unwrap();
        let psd = build_psd(
            &uniform_points(50, 20.0, 3),
            &world,
            PrivacyBudget::even(2.0).unwrap(),
            &PsdConfig::default(),
        )
        .unwrap();
        let back = Psd::from_json(&psd.to_json()).unwrap();
        assert_eq!(back, psd);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let world = Rect::world(100.0, 100.0).unwrap();
        let pts = uniform_points(300, 100.0, 8);
        let b = PrivacyBudget::even(0.5).unwrap();
        let cfg = PsdConfig {
            seed: 12,
            ..PsdConfig::default()
        };
        assert_eq!(
            build_psd(&pts, &world, b, &cfg).unwrap(),
            build_psd(&pts, &world, b, &cfg).unwrap()
        );
    }
}
