//! Relative parameter deviation box and its weighting.
//!
//! Uncertainty is expressed as relative deviations `delta` of the six
//! physical parameters (m1, m2, l1, l2, J1, J2): the true value is
//! `p_i (1 + delta_i)` with `|delta_i| <= bound_i`. The ellipsoidal
//! weighting used by the constraint-tightening margins is the diagonal
//! matrix of squared bounds, so a unit ball in the weighted norm matches
//! the box corners component-wise.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use thiserror::Error;

use crate::dynamics::NP;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("deviation bound {index} = {value} must lie in [0, 1)")]
    BoundOutOfRange { index: usize, value: f64 },
}

/// Box of admissible relative parameter deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintySet {
    /// Per-parameter relative bounds, each in `[0, 1)`.
    pub bounds: SVector<f64, NP>,
}

impl UncertaintySet {
    pub fn new(bounds: SVector<f64, NP>) -> Result<Self, UncertaintyError> {
        for (index, &value) in bounds.iter().enumerate() {
            if !(0.0..1.0).contains(&value) || !value.is_finite() {
                return Err(UncertaintyError::BoundOutOfRange { index, value });
            }
        }
        Ok(UncertaintySet { bounds })
    }

    /// Uniform bound on every parameter.
    pub fn uniform(bound: f64) -> Result<Self, UncertaintyError> {
        Self::new(SVector::repeat(bound))
    }

    /// Diagonal weighting `W_p = diag(bounds^2)` for the margin computation.
    pub fn weighting(&self) -> SMatrix<f64, NP, NP> {
        SMatrix::from_diagonal(&self.bounds.map(|b| b * b))
    }

    /// One deviation vector drawn uniformly from the box.
    pub fn sample(&self, rng: &mut impl Rng) -> SVector<f64, NP> {
        self.bounds.map(|b| {
            if b == 0.0 {
                0.0
            } else {
                rng.random_range(-b..=b)
            }
        })
    }

    pub fn contains(&self, delta: &SVector<f64, NP>) -> bool {
        delta
            .iter()
            .zip(self.bounds.iter())
            .all(|(d, b)| d.abs() <= *b)
    }
}

impl Default for UncertaintySet {
    /// Bench uncertainty: 25 % on masses and inertias, 24 % on rod lengths.
    fn default() -> Self {
        UncertaintySet::new(SVector::from([0.25, 0.25, 0.24, 0.24, 0.25, 0.25])).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighting_is_diagonal_of_squared_bounds() {
        let set = UncertaintySet::default();
        let w = set.weighting();
        let diag = [0.0625, 0.0625, 0.0576, 0.0576, 0.0625, 0.0625];
        for i in 0..NP {
            for j in 0..NP {
                let expect = if i == j { diag[i] } else { 0.0 };
                assert_abs_diff_eq!(w[(i, j)], expect, epsilon = 1e-15);
            }
        }

        let mixed =
            UncertaintySet::new(SVector::from([0.05, 0.1, 0.2, 0.0, 0.15, 0.3])).unwrap();
        assert_abs_diff_eq!(mixed.weighting()[(2, 2)], 0.04, epsilon = 1e-15);
        assert_eq!(mixed.weighting()[(3, 3)], 0.0);
    }

    #[test]
    fn bounds_outside_unit_interval_are_rejected() {
        assert!(UncertaintySet::uniform(0.999).is_ok());
        assert!(UncertaintySet::uniform(1.0).is_err());
        assert!(UncertaintySet::uniform(-0.1).is_err());
        assert!(UncertaintySet::uniform(f64::NAN).is_err());
    }

    #[test]
    fn samples_stay_in_the_box_and_reproduce_under_a_fixed_seed() {
        let set = UncertaintySet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hit_upper_half = [false; NP];
        let mut hit_lower_half = [false; NP];
        for _ in 0..2000 {
            let d = set.sample(&mut rng);
            assert!(set.contains(&d));
            for i in 0..NP {
                hit_upper_half[i] |= d[i] > 0.05;
                hit_lower_half[i] |= d[i] < -0.05;
            }
        }
        // Both halves of every interval get visited.
        assert!(hit_upper_half.iter().all(|&h| h));
        assert!(hit_lower_half.iter().all(|&h| h));

        let a = set.sample(&mut ChaCha8Rng::seed_from_u64(7));
        let b = set.sample(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_bound_pins_the_component() {
        let set = UncertaintySet::new(SVector::from([0.1, 0.0, 0.1, 0.0, 0.1, 0.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = set.sample(&mut rng);
            assert_eq!(d[1], 0.0);
            assert_eq!(d[3], 0.0);
            assert_eq!(d[5], 0.0);
        }
    }
}
