use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Disc, Rect};
use crate::error::{invalid, Result};
use crate::model::Location;

/// Lower bound on the number of Monte-Carlo samples.
pub const MIN_RESOLUTION: usize = 10_000;

/// Monte-Carlo estimate of the common area of a set of discs.
///
/// Samples are drawn once over the bounding box of the first disc, so the
/// estimate for any prefix of the disc list reuses the same points and the
/// area is non-increasing as discs are appended.
#[derive(Debug, Clone)]
pub struct RegionIntersection {
    discs: Vec<Disc>,
    frame: Rect,
    samples: Vec<Location>,
    /// Number of samples inside the first `i + 1` discs.
    prefix_hits: Vec<usize>,
}

impl RegionIntersection {
    pub fn area(&self) -> f64 {
        self.prefix_area(self.discs.len())
    }

    /// Estimated area of the intersection of the first `n` discs (`n >= 1`).
    pub fn prefix_area(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.discs.len());
        self.frame.area() * self.prefix_hits[n - 1] as f64 / self.samples.len() as f64
    }

    /// Estimated areas after each disc is added.
    pub fn area_sequence(&self) -> Vec<f64> {
        (1..=self.discs.len()).map(|n| self.prefix_area(n)).collect()
    }

    /// No Monte-Carlo sample landed in every disc.
    pub fn is_empty(&self) -> bool {
        self.prefix_hits.last().copied().unwrap_or(0) == 0
    }

    /// Exact membership: `p` lies in every disc.
    pub fn contains(&self, p: &Location) -> bool {
        self.discs.iter().all(|d| d.contains(p))
    }

    pub fn discs(&self) -> &[Disc] {
        &self.discs
    }

    pub fn resolution(&self) -> usize {
        self.samples.len()
    }
}

pub fn region_intersection(discs: &[Disc], resolution: usize, seed: u64) -> Result<RegionIntersection> {
    let first = discs
        .first()
        .ok_or_else(|| invalid("region intersection needs at least one disc"))?;
    if resolution < MIN_RESOLUTION {
        return Err(invalid(format!(
            "resolution must be at least {MIN_RESOLUTION} samples, got {resolution}"
        )));
    }
    let frame = first.bounding_rect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Location> = (0..resolution)
        .map(|_| {
            Location::new(
                frame.min_x + rng.random::<f64>() * frame.width(),
                frame.min_y + rng.random::<f64>() * frame.height(),
            )
        })
        .collect();

    let mut alive = vec![true; samples.len()];
    let mut prefix_hits = Vec::with_capacity(discs.len());
    for disc in discs {
        let mut hits = 0;
        for (p, a) in samples.iter().zip(alive.iter_mut()) {
            if *a {
                *a = disc.contains(p);
                hits += usize::from(*a);
            }
        }
        prefix_hits.push(hits);
    }
    Ok(RegionIntersection {
        discs: discs.to_vec(),
        frame,
        samples,
        prefix_hits,
    })
}
