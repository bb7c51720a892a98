//! Deterministic random balls inside a grid domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::field::{Grid2D, Point};

/// A Euclidean ball `B(y, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub y: Point,
    pub r: f64,
}

/// Draws `count` balls with radii uniform in `[r_min, r_max]` and centers
/// snapped to grid nodes, keeping every ball inside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSampler {
    pub count: usize,
    pub seed: u64,
    pub r_min: f64,
    pub r_max: f64,
}

const ATTEMPTS_PER_BALL: usize = 1000;

impl BallSampler {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return input("ball sampler count must be positive");
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite()) {
            return input(format!(
                "ball radii need 0 < r_min ≤ r_max, got [{}, {}]",
                self.r_min, self.r_max
            ));
        }
        Ok(())
    }

    /// Balls for `grid`. Centers are nodes of `grid`, so the same balls are
    /// reusable on any refinement that keeps those nodes.
    pub fn sample(&self, grid: &Grid2D) -> Result<Vec<Ball>> {
        self.validate()?;
        let [a1, b1, a2, b2] = grid.domain();
        if 2.0 * self.r_min > (b1 - a1).min(b2 - a2) {
            return input(format!("r_min = {} does not fit in the domain", self.r_min));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.count);
        let mut attempts = 0;
        while out.len() < self.count {
            attempts += 1;
            if attempts > ATTEMPTS_PER_BALL * self.count {
                return input(format!(
                    "could not place {} balls with radii in [{}, {}] inside the domain",
                    self.count, self.r_min, self.r_max
                ));
            }
            let r = if self.r_max > self.r_min {
                rng.gen_range(self.r_min..=self.r_max)
            } else {
                self.r_min
            };
            if 2.0 * r > (b1 - a1).min(b2 - a2) {
                continue;
            }
            let raw = [
                rng.gen_range(a1 + r..=b1 - r),
                rng.gen_range(a2 + r..=b2 - r),
            ];
            let (i, j) = grid.nearest_node(raw);
            let y = grid.node(i, j);
            if grid.distance_to_boundary(y) >= r {
                out.push(Ball { y, r });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balls_are_inside_and_reproducible() {
        let g = Grid2D::new(33, 17, [-1.0, 1.0, 0.0, 1.0]).unwrap();
        let s = BallSampler {
            count: 200,
            seed: 11,
            r_min: 0.05,
            r_max: 0.45,
        };
        let a = s.sample(&g).unwrap();
        assert_eq!(a, s.sample(&g).unwrap());
        for b in &a {
            assert!(g.distance_to_boundary(b.y) >= b.r);
            assert!((0.05..=0.45).contains(&b.r));
            let (i, j) = g.nearest_node(b.y);
            assert_eq!(g.node(i, j), b.y);
        }
        let other = BallSampler { seed: 12, ..s }.sample(&g).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn impossible_radii_are_rejected() {
        let g = Grid2D::unit_square(9).unwrap();
        let too_big = BallSampler {
            count: 1,
            seed: 0,
            r_min: 0.6,
            r_max: 0.7,
        };
        assert!(too_big.sample(&g).is_err());
        let inverted = BallSampler {
            count: 1,
            seed: 0,
            r_min: 0.3,
            r_max: 0.2,
        };
        assert!(inverted.sample(&g).is_err());
    }
}
