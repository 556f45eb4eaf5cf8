use super::Disc;
use crate::model::Location;

const EPS: f64 = 1e-12;

fn covers(disc: &Disc, p: &Location) -> bool {
    disc.center.distance(p) <= disc.radius * (1.0 + EPS) + EPS
}

fn from_two(a: &Location, b: &Location) -> Disc {
    let center = Location::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
    Disc {
        center,
        radius: center.distance(a).max(center.distance(b)),
    }
}

fn from_three(a: &Location, b: &Location, c: &Location) -> Disc {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    if d.abs() <= EPS {
        // collinear: the widest pair spans the triple
        let pairs = [from_two(a, b), from_two(a, c), from_two(b, c)];
        return pairs
            .into_iter()
            .max_by(|p, q| p.radius.total_cmp(&q.radius))
            .expect("three candidate pairs");
    }
    let a2 = a.x * a.x + a.y * a.y;
    let b2 = b.x * b.x + b.y * b.y;
    let c2 = c.x * c.x + c.y * c.y;
    let center = Location::new(
        (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
        (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
    );
    let radius = center.distance(a).max(center.distance(b)).max(center.distance(c));
    Disc { center, radius }
}

/// Minimum-radius disc containing every vertex (Welzl, iterative form).
///
/// Panics on an empty slice.
pub fn smallest_enclosing_circle(points: &[Location]) -> Disc {
    assert!(!points.is_empty(), "enclosing circle of an empty point set");
    let mut disc = Disc {
        center: points[0],
        radius: 0.0,
    };
    for i in 1..points.len() {
        if covers(&disc, &points[i]) {
            continue;
        }
        disc = Disc {
            center: points[i],
            radius: 0.0,
        };
        for j in 0..i {
            if covers(&disc, &points[j]) {
                continue;
            }
            disc = from_two(&points[i], &points[j]);
            for k in 0..j {
                if !covers(&disc, &points[k]) {
                    disc = from_three(&points[i], &points[j], &points[k]);
                }
            }
        }
    }
    disc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: the smallest disc defined by any support pair or
    /// triple that contains all points.
    fn brute_force(points: &[Location]) -> f64 {
        if points.len() == 1 {
            return 0.0;
        }
        let contains_all = |d: &Disc| points.iter().all(|p| d.center.distance(p) <= d.radius + 1e-9);
        let mut best = f64::INFINITY;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = from_two(&points[i], &points[j]);
                if contains_all(&d) {
                    best = best.min(d.radius);
                }
                for k in j + 1..points.len() {
                    let d = from_three(&points[i], &points[j], &points[k]);
                    if contains_all(&d) {
                        best = best.min(d.radius);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn unit_square() {
        let sq = [
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(1.0, 1.0),
            Location::new(0.0, 1.0),
        ];
        let d = smallest_enclosing_circle(&sq);
        assert!((d.center.x - 0.5).abs() < 1e-12 && (d.center.y - 0.5).abs() < 1e-12);
        assert!((d.radius - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_point() {
        let d = smallest_enclosing_circle(&[Location::new(3.0, -2.0)]);
        assert_eq!(d.radius, 0.0);
    }

    #[test]
    fn collinear_points() {
        let pts = [
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(4.0, 0.0),
        ];
        let d = smallest_enclosing_circle(&pts);
        assert!((d.radius - 2.0).abs() < 1e-12);
    }

    fn random_octagon(seed: u64) -> Vec<Location> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cx: f64 = rng.random_range(-5.0..5.0);
        let cy: f64 = rng.random_range(-5.0..5.0);
        let mut angles: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles
            .into_iter()
            .map(|a| {
                let r: f64 = rng.random_range(0.5..3.0);
                Location::new(cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_octagons() {
        for seed in 0..200 {
            let pts = random_octagon(seed);
            let d = smallest_enclosing_circle(&pts);
            let oracle = brute_force(&pts);
            assert!(
                (d.radius - oracle).abs() < 1e-9,
                "seed {seed}: {} vs {}",
                d.radius,
                oracle
            );
            for p in &pts {
                assert!(d.center.distance(p) <= d.radius + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn radius_invariant_under_rigid_motion(
            seed in 0u64..10_000, theta in 0.0f64..std::f64::consts::TAU,
            tx in -50.0f64..50.0, ty in -50.0f64..50.0,
        ) {
            let pts = random_octagon(seed);
            let (s, c) = theta.sin_cos();
            let moved: Vec<Location> = pts
                .iter()
                .map(|p| Location::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty))
                .collect();
            let a = smallest_enclosing_circle(&pts).radius;
            let b = smallest_enclosing_circle(&moved).radius;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
