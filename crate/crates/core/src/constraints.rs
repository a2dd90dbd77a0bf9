//! Path constraints, sensitivity-based tightening, and signed residuals.
//!
//! Two constraint classes are robustified: the inter-rod separation
//! `cos(phi2 - phi1) <= cos(dphi_min)` (a smooth embedding of the minimum
//! opening angle) and the thrust magnitude bounds. Each tightened constraint
//! `y(x) <= y_max` is shrunk by a margin
//!
//! ```text
//!   alpha = sqrt(Pi_y W_p Pi_y^T + eps_s^2),   Pi_y = J_yx Pi
//! ```
//!
//! the worst-case first-order variation of `y` over the ellipsoidal
//! relaxation of the deviation box. The `eps_s` term sits under the square
//! root so the margin is differentiable in `Pi` everywhere (it equals
//! `eps_s` at `Pi_y = 0` and converges to `||Pi_y||_W + eps_s` away from
//! zero). Torque and rate bounds are plain boxes, never tightened.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::dynamics::{ExtendedState, NP, NX};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("minimum separation angle {0} rad must lie in (0, pi)")]
    InvalidSeparationAngle(f64),
    #[error("box bound pair ({lower}, {upper}) must satisfy lower < upper")]
    InvalidBoxPair { lower: f64, upper: f64 },
    #[error("weighted quadratic form evaluated to {0}; weighting must be PSD")]
    NegativeQuadraticForm(f64),
}

/// Which scalar constraint a spec describes. Vehicle indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// y = cos(phi2 - phi1) <= cos(dphi_min).
    Separation,
    /// y = f_Rj <= f_max.
    ThrustUpper(usize),
    /// y = -f_Rj <= -f_min.
    ThrustLower(usize),
}

/// One scalar inequality `y(x) <= y_max`, optionally tightened.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub y_max: f64,
    pub tightened: bool,
}

impl ConstraintSpec {
    /// Separation constraint from a minimum opening angle [rad].
    pub fn separation(dphi_min: f64, tightened: bool) -> Result<Self, ConstraintError> {
        if !(dphi_min > 0.0 && dphi_min < std::f64::consts::PI) {
            return Err(ConstraintError::InvalidSeparationAngle(dphi_min));
        }
        Ok(ConstraintSpec {
            kind: ConstraintKind::Separation,
            y_max: dphi_min.cos(),
            tightened,
        })
    }

    pub fn thrust_upper(vehicle: usize, f_max: f64, tightened: bool) -> Self {
        ConstraintSpec {
            kind: ConstraintKind::ThrustUpper(vehicle),
            y_max: f_max,
            tightened,
        }
    }

    pub fn thrust_lower(vehicle: usize, f_min: f64, tightened: bool) -> Self {
        ConstraintSpec {
            kind: ConstraintKind::ThrustLower(vehicle),
            y_max: -f_min,
            tightened,
        }
    }
}

/// Box bounds on actuator states and rate inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSets {
    /// Thrust magnitude bounds [N].
    pub f_r_min: f64,
    pub f_r_max: f64,
    /// Torque bounds [N m].
    pub tau_min: f64,
    pub tau_max: f64,
    /// Thrust rate bounds [N/s].
    pub df_r_min: f64,
    pub df_r_max: f64,
    /// Torque rate bounds [N m/s].
    pub dtau_min: f64,
    pub dtau_max: f64,
}

impl BoxSets {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        for (lower, upper) in [
            (self.f_r_min, self.f_r_max),
            (self.tau_min, self.tau_max),
            (self.df_r_min, self.df_r_max),
            (self.dtau_min, self.dtau_max),
        ] {
            if !(lower < upper) {
                return Err(ConstraintError::InvalidBoxPair { lower, upper });
            }
        }
        Ok(())
    }
}

impl Default for BoxSets {
    /// Bench actuator limits.
    fn default() -> Self {
        BoxSets {
            f_r_min: 3.0,
            f_r_max: 20.0,
            tau_min: -5.0,
            tau_max: 5.0,
            df_r_min: -200.0,
            df_r_max: 200.0,
            dtau_min: -100.0,
            dtau_max: 100.0,
        }
    }
}

/// Constraint value y(x).
pub fn constraint_value(spec: &ConstraintSpec, x: &ExtendedState) -> f64 {
    match spec.kind {
        ConstraintKind::Separation => separation_value(x),
        ConstraintKind::ThrustUpper(j) => thrust(x, j),
        ConstraintKind::ThrustLower(j) => -thrust(x, j),
    }
}

/// Separation embedding y = cos(phi2 - phi1); satisfied iff y <= cos(dphi_min).
pub fn separation_value(x: &ExtendedState) -> f64 {
    (x.phi2 - x.phi1).cos()
}

fn thrust(x: &ExtendedState, vehicle: usize) -> f64 {
    match vehicle {
        0 => x.f_r1,
        _ => x.f_r2,
    }
}

/// Gradient J_yx = dy/dx as a 12-vector.
pub fn constraint_state_jacobian(spec: &ConstraintSpec, x: &ExtendedState) -> SVector<f64, NX> {
    let mut row = SVector::zeros();
    match spec.kind {
        ConstraintKind::Separation => {
            let s = (x.phi2 - x.phi1).sin();
            row[0] = s;
            row[1] = -s;
        }
        ConstraintKind::ThrustUpper(j) => row[8 + j] = 1.0,
        ConstraintKind::ThrustLower(j) => row[8 + j] = -1.0,
    }
    row
}

/// Constraint sensitivity Pi_y = J_yx Pi (the constraint is purely
/// state-dependent, so there is no direct parameter term).
pub fn constraint_sensitivity(
    spec: &ConstraintSpec,
    x: &ExtendedState,
    pi: &SMatrix<f64, NX, NP>,
) -> SVector<f64, NP> {
    (pi.transpose() * constraint_state_jacobian(spec, x)).into()
}

/// Tightening margin alpha = sqrt(Pi_y W_p Pi_y^T + eps_s^2).
pub fn tightening_margin(
    pi_y: &SVector<f64, NP>,
    w_p: &SMatrix<f64, NP, NP>,
    eps_s: f64,
) -> Result<f64, ConstraintError> {
    let q = pi_y.dot(&(w_p * pi_y));
    if q < -1e-12 {
        return Err(ConstraintError::NegativeQuadraticForm(q));
    }
    Ok((q.max(0.0) + eps_s * eps_s).sqrt())
}

/// Signed stage residual: `y + alpha - y_max` when tightened,
/// `y - y_max` otherwise. Nonpositive means (tightened-)feasible.
pub fn tightened_residual(
    spec: &ConstraintSpec,
    x: &ExtendedState,
    pi: &SMatrix<f64, NX, NP>,
    w_p: &SMatrix<f64, NP, NP>,
    eps_s: f64,
) -> Result<f64, ConstraintError> {
    let y = constraint_value(spec, x);
    if !spec.tightened {
        return Ok(y - spec.y_max);
    }
    let pi_y = constraint_sensitivity(spec, x, pi);
    Ok(y + tightening_margin(&pi_y, w_p, eps_s)? - spec.y_max)
}

/// Reporting residuals on the true closed-loop state:
/// `(s_delta, s_fR1, s_fR2)` with `s <= 0` meaning satisfied.
pub fn signed_residuals(x: &ExtendedState, dphi_min: f64, f_r_max: f64) -> (f64, f64, f64) {
    (
        separation_value(x) - dphi_min.cos(),
        x.f_r1 - f_r_max,
        x.f_r2 - f_r_max,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::UncertaintySet;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn state_with(phi1: f64, phi2: f64, f_r1: f64, f_r2: f64) -> ExtendedState {
        ExtendedState {
            phi1,
            phi2,
            f_r1,
            f_r2,
            ..Default::default()
        }
    }

    #[test]
    fn separation_activates_exactly_at_the_minimum_angle() {
        let spec = ConstraintSpec::separation(30.0 * DEG, false).unwrap();
        let at = |dphi: f64| {
            constraint_value(&spec, &state_with(0.2, 0.2 + dphi, 5.0, 5.0)) - spec.y_max
        };
        assert!(at(90.0 * DEG) < 0.0);
        assert_abs_diff_eq!(at(90.0 * DEG), -0.8660254037844387, epsilon = 1e-12);
        assert_abs_diff_eq!(at(30.0 * DEG), 0.0, epsilon = 1e-12);
        assert!(at(10.0 * DEG) > 0.0);

        assert!(ConstraintSpec::separation(0.0, false).is_err());
        assert!(ConstraintSpec::separation(std::f64::consts::PI, false).is_err());
    }

    #[test]
    fn jacobian_rows_are_selectors_or_separation_gradient() {
        let x = state_with(0.3, 1.1, 6.0, 11.0);
        let up1 = constraint_state_jacobian(&ConstraintSpec::thrust_upper(0, 20.0, false), &x);
        for i in 0..NX {
            assert_eq!(up1[i], if i == 8 { 1.0 } else { 0.0 });
        }
        let lo2 = constraint_state_jacobian(&ConstraintSpec::thrust_lower(1, 3.0, false), &x);
        for i in 0..NX {
            assert_eq!(lo2[i], if i == 9 { -1.0 } else { 0.0 });
        }

        // Aligned rods sit at the cosine extremum: zero gradient.
        let sep = ConstraintSpec::separation(30.0 * DEG, false).unwrap();
        let flat = constraint_state_jacobian(&sep, &state_with(0.4, 0.4, 5.0, 5.0));
        assert_eq!(flat.norm(), 0.0);

        // Finite-difference agreement on random states.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let x = state_with(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(3.0..20.0),
                rng.random_range(3.0..20.0),
            );
            let row = constraint_state_jacobian(&sep, &x);
            let h = 1e-7;
            for k in 0..2 {
                let mut hi = x;
                let mut lo = x;
                match k {
                    0 => {
                        hi.phi1 += h;
                        lo.phi1 -= h;
                    }
                    _ => {
                        hi.phi2 += h;
                        lo.phi2 -= h;
                    }
                }
                let fd = (separation_value(&hi) - separation_value(&lo)) / (2.0 * h);
                assert_abs_diff_eq!(row[k], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sensitivity_row_projects_the_state_gradient_through_pi() {
        let x = state_with(0.3, 1.1, 6.0, 11.0);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pi = SMatrix::<f64, NX, NP>::from_fn(|_, _| rng.random_range(-2.0..2.0));

        let up = ConstraintSpec::thrust_upper(0, 20.0, true);
        let pi_y = constraint_sensitivity(&up, &x, &pi);
        for c in 0..NP {
            assert_eq!(pi_y[c], pi[(8, c)]);
        }
        assert_eq!(
            constraint_sensitivity(&up, &x, &SMatrix::zeros()),
            SVector::<f64, NP>::zeros()
        );

        // First-order Taylor check: y(x + Pi d) - y(x) = Pi_y . d + O(|d|^2).
        let sep = ConstraintSpec::separation(30.0 * DEG, true).unwrap();
        let pi_y = constraint_sensitivity(&sep, &x, &pi);
        for _ in 0..20 {
            let d = SVector::<f64, NP>::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 1e-5;
            let shifted = ExtendedState::from_vector(&(x.to_vector() + pi * d));
            let dy = separation_value(&shifted) - separation_value(&x);
            assert_abs_diff_eq!(dy, pi_y.dot(&d), epsilon = 1e-8);
        }
    }

    #[test]
    fn margin_is_the_weighted_norm_with_a_smooth_floor() {
        let w = UncertaintySet::default().weighting();
        let eps = 1e-12;
        assert_abs_diff_eq!(
            tightening_margin(&SVector::zeros(), &w, eps).unwrap(),
            eps,
            epsilon = 1e-18
        );

        let e1 = SVector::<f64, NP>::from([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(
            tightening_margin(&e1, &w, eps).unwrap(),
            0.25,
            epsilon = 1e-12
        );

        // Positive homogeneity once the floor is negligible.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pi_y = SVector::<f64, NP>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a1 = tightening_margin(&pi_y, &w, 1e-300).unwrap();
        let a3 = tightening_margin(&(-3.0 * pi_y), &w, 1e-300).unwrap();
        assert_abs_diff_eq!(a3, 3.0 * a1, epsilon = 1e-12);

        // Indefinite weighting is rejected.
        let bad = -SMatrix::<f64, NP, NP>::identity();
        assert!(tightening_margin(&e1, &bad, eps).is_err());
    }

    #[test]
    fn margin_grows_with_the_uncertainty_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..100 {
            let pi_y = SVector::<f64, NP>::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let base = SVector::<f64, NP>::from_fn(|_, _| rng.random_range(0.0..0.4));
            let mut bigger = base;
            let k = rng.random_range(0..NP);
            bigger[k] += rng.random_range(0.0..0.4);
            let wa = UncertaintySet::new(base).unwrap().weighting();
            let wb = UncertaintySet::new(bigger).unwrap().weighting();
            let a = tightening_margin(&pi_y, &wa, 1e-12).unwrap();
            let b = tightening_margin(&pi_y, &wb, 1e-12).unwrap();
            assert!(b >= a - 1e-15);
        }
    }

    #[test]
    fn tightened_residual_dominates_the_nominal_one() {
        let w = UncertaintySet::default().weighting();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let specs = [
            ConstraintSpec::separation(30.0 * DEG, true).unwrap(),
            ConstraintSpec::thrust_upper(0, 20.0, true),
            ConstraintSpec::thrust_lower(1, 3.0, true),
        ];
        for _ in 0..100 {
            let x = state_with(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(3.0..20.0),
                rng.random_range(3.0..20.0),
            );
            let pi = SMatrix::<f64, NX, NP>::from_fn(|_, _| rng.random_range(-2.0..2.0));
            for spec in specs {
                let tight = tightened_residual(&spec, &x, &pi, &w, 1e-12).unwrap();
                let mut plain = spec;
                plain.tightened = false;
                let nominal = tightened_residual(&plain, &x, &pi, &w, 1e-12).unwrap();
                assert!(tight >= nominal);
                // Tube-feasible implies nominal-feasible.
                if tight <= 0.0 {
                    assert!(nominal <= 0.0);
                }
            }
        }

        // Zero sensitivity: the gap is exactly eps_s.
        let spec = ConstraintSpec::thrust_upper(0, 20.0, true);
        let x = state_with(0.1, 0.9, 12.0, 12.0);
        let tight = tightened_residual(&spec, &x, &SMatrix::zeros(), &w, 1e-12).unwrap();
        assert_abs_diff_eq!(tight, 12.0 - 20.0 + 1e-12, epsilon = 1e-15);
    }

    #[test]
    fn reporting_residuals_match_the_stated_conventions() {
        let x = state_with(0.0, 90.0 * DEG, 20.0, 12.0);
        let (s_delta, s_f1, s_f2) = signed_residuals(&x, 30.0 * DEG, 20.0);
        assert_abs_diff_eq!(s_delta, -0.8660254037844387, epsilon = 1e-12);
        assert_abs_diff_eq!(s_f1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s_f2, -8.0, epsilon = 1e-15);

        // Invariant under winding both rod angles by a full turn.
        let wound = state_with(
            x.phi1 + 2.0 * std::f64::consts::PI,
            x.phi2 + 2.0 * std::f64::consts::PI,
            x.f_r1,
            x.f_r2,
        );
        let (w_delta, ..) = signed_residuals(&wound, 30.0 * DEG, 20.0);
        assert_abs_diff_eq!(w_delta, s_delta, epsilon = 1e-12);
    }

    #[test]
    fn default_boxes_hold_the_bench_limits_and_validate() {
        let b = BoxSets::default();
        assert_eq!((b.f_r_min, b.f_r_max), (3.0, 20.0));
        assert_eq!((b.tau_min, b.tau_max), (-5.0, 5.0));
        assert_eq!((b.df_r_min, b.df_r_max), (-200.0, 200.0));
        assert_eq!((b.dtau_min, b.dtau_max), (-100.0, 100.0));
        assert!(b.validate().is_ok());

        let bad = BoxSets {
            f_r_min: 20.0,
            f_r_max: 3.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
