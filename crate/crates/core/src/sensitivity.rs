//! Vector-field Jacobians, parametric sensitivities, and the augmented model.
//!
//! The sensitivity matrix `Pi = dx/d(delta)` (12x6) obeys the variational
//! equation `dPi/dt = f_x Pi + f_p` along a trajectory. Stacking `x` with
//! `vec(Pi)` (column-major) gives an 84-state augmented system integrated
//! with the same RK4 step as the plain model, so state and sensitivity stay
//! discretely consistent.
//!
//! Discrete-time Jacobians of the RK4 maps are computed with batched
//! forward-mode differentiation over the shared dynamics kernel — exact to
//! machine precision, no step-size tuning. For the augmented step the
//! Jacobian has the block structure
//!
//! ```text
//!   d(x+, vecPi+)/d(x, vecPi) = [ A_x        0        ]
//!                               [ D    I_6 (x) A_x    ]
//! ```
//!
//! because the sensitivity dynamics are affine in `Pi` and an RK4 step of an
//! affine ODE differentiates to the same RK4 recursion that produces `A_x`.
//! Only `A_x`, `B_x`, and the coupling blocks `D`, `D_u` are materialized.

use nalgebra::{SMatrix, SVector};

use crate::dynamics::{
    k_daccel_dp, k_daccel_dx, k_vf, kp_of, ControlRate, ExtendedState, Kp,
    PhysicalParams, NP, NU, NX,
};
use crate::scalar::{Multi, Real};

/// Augmented state dimension: 12 states + 12x6 sensitivity entries.
pub const NXA: usize = NX + NX * NP;

/// State together with its parametric sensitivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedState {
    pub x: ExtendedState,
    /// Sensitivity dx/d(delta) [mixed units per relative deviation].
    pub pi: SMatrix<f64, NX, NP>,
}

impl AugmentedState {
    /// Start of a sensitivity horizon: known state, zero sensitivity.
    pub fn from_state(x: ExtendedState) -> Self {
        AugmentedState {
            x,
            pi: SMatrix::zeros(),
        }
    }

    /// Pack as `[x; vec(Pi)]` with column-major `vec`.
    pub fn to_vector(&self) -> SVector<f64, NXA> {
        let mut v = SVector::<f64, NXA>::zeros();
        v.fixed_rows_mut::<NX>(0).copy_from(&self.x.to_vector());
        v.fixed_rows_mut::<{ NX * NP }>(NX)
            .copy_from_slice(self.pi.as_slice());
        v
    }

    pub fn from_vector(v: &SVector<f64, NXA>) -> Self {
        AugmentedState {
            x: ExtendedState::from_vector(&v.fixed_rows::<NX>(0).into_owned()),
            pi: SMatrix::from_column_slice(&v.as_slice()[NX..]),
        }
    }
}

/// State Jacobian f_x of the continuous vector field (independent of u).
pub fn jacobian_fx(x: &ExtendedState, p: &PhysicalParams) -> SMatrix<f64, NX, NX> {
    let kp = kp_of::<f64>(p);
    let rows = k_daccel_dx(&x.to_array(), &kp);
    let mut fx = SMatrix::<f64, NX, NX>::zeros();
    for i in 0..4 {
        fx[(i, 4 + i)] = 1.0; // d(angles)/dt = rates
    }
    for c in 0..NX {
        fx[(4, c)] = rows[0][c];
        fx[(5, c)] = rows[1][c];
    }
    fx[(6, 10)] = 1.0 / p.j1;
    fx[(7, 11)] = 1.0 / p.j2;
    fx
}

/// Input Jacobian f_u: rates drive the four actuator states directly.
pub fn jacobian_fu() -> SMatrix<f64, NX, NU> {
    let mut fu = SMatrix::zeros();
    for j in 0..NU {
        fu[(8 + j, j)] = 1.0;
    }
    fu
}

/// Deviation Jacobian f_p = df/d(delta) at delta = 0 around the given
/// parameters. Columns follow (m1, m2, l1, l2, J1, J2).
pub fn jacobian_fp(x: &ExtendedState, p: &PhysicalParams) -> SMatrix<f64, NX, NP> {
    let kp = kp_of::<f64>(p);
    let rows = k_daccel_dp(&x.to_array(), &kp);
    let mut fp = SMatrix::<f64, NX, NP>::zeros();
    for c in 0..NP {
        fp[(4, c)] = rows[0][c];
        fp[(5, c)] = rows[1][c];
    }
    // d(tau/J(1+delta))/d(delta) at 0.
    fp[(6, 4)] = -x.tau1 / p.j1;
    fp[(7, 5)] = -x.tau2 / p.j2;
    fp
}

/// Right-hand side of the variational equation, dPi/dt = f_x Pi + f_p.
pub fn sensitivity_rhs(
    x: &ExtendedState,
    pi: &SMatrix<f64, NX, NP>,
    p: &PhysicalParams,
) -> SMatrix<f64, NX, NP> {
    jacobian_fx(x, p) * pi + jacobian_fp(x, p)
}

// Columns of the rod-acceleration Jacobian that can be nonzero.
const ACC_COLS: [usize; 8] = [0, 1, 2, 3, 4, 5, 8, 9];

/// Augmented right-hand side over a generic scalar. `xa` holds
/// `[x; vec(Pi)]` column-major, so `Pi[r][c]` sits at `12 + 12 c + r`.
fn k_aug_rhs<S: Real>(xa: &[S; NXA], u: &[S; NU], p: &Kp<S>) -> [S; NXA] {
    let x: [S; NX] = xa[..NX].try_into().unwrap();
    let dx = k_vf(&x, u, p);
    let dacc_dx = k_daccel_dx(&x, p);
    let dacc_dp = k_daccel_dp(&x, p);

    let mut out = [S::of(0.0); NXA];
    out[..NX].copy_from_slice(&dx);
    for c in 0..NP {
        let col = &xa[NX + NX * c..NX + NX * (c + 1)];
        let o = &mut out[NX + NX * c..NX + NX * (c + 1)];
        // Angle rows follow the rate rows of the same column.
        o[0] = col[4];
        o[1] = col[5];
        o[2] = col[6];
        o[3] = col[7];
        for i in 0..2 {
            let mut acc = dacc_dp[i][c];
            for &k in &ACC_COLS {
                acc = acc + dacc_dx[i][k] * col[k];
            }
            o[4 + i] = acc;
        }
        o[6] = col[10] / p.j1;
        o[7] = col[11] / p.j2;
        if c == 4 {
            o[6] = o[6] - x[10] / p.j1;
        }
        if c == 5 {
            o[7] = o[7] - x[11] / p.j2;
        }
        // Actuator rows of Pi are constant in time.
    }
    out
}

/// Augmented vector field on the packed `[x; vec(Pi)]` vector.
pub fn augmented_rhs(
    xa: &SVector<f64, NXA>,
    u: &ControlRate,
    p: &PhysicalParams,
) -> SVector<f64, NXA> {
    let arr: [f64; NXA] = (*xa).into();
    SVector::from(k_aug_rhs(
        &arr,
        &[u.df_r1, u.df_r2, u.dtau1, u.dtau2],
        &kp_of::<f64>(p),
    ))
}

/// Classic fourth-order Runge-Kutta step shared by every integration path
/// (plant, sensitivity propagation, prediction rollout).
pub fn rk4_step<const N: usize>(
    mut rhs: impl FnMut(&SVector<f64, N>, &ControlRate) -> SVector<f64, N>,
    s: &SVector<f64, N>,
    u: &ControlRate,
    h: f64,
) -> SVector<f64, N> {
    let k1 = rhs(s, u);
    let k2 = rhs(&(s + 0.5 * h * k1), u);
    let k3 = rhs(&(s + 0.5 * h * k2), u);
    let k4 = rhs(&(s + h * k3), u);
    s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// RK4 over generic-scalar arrays; mirrors [`rk4_step`] stage for stage.
fn rk4_arr<S: Real, const N: usize>(
    rhs: impl Fn(&[S; N]) -> [S; N],
    s: &[S; N],
    h: f64,
) -> [S; N] {
    let half = S::of(0.5 * h);
    let full = S::of(h);
    let sixth = S::of(h / 6.0);
    let two = S::of(2.0);

    let k1 = rhs(s);
    let mut s2 = *s;
    for i in 0..N {
        s2[i] = s[i] + half * k1[i];
    }
    let k2 = rhs(&s2);
    for i in 0..N {
        s2[i] = s[i] + half * k2[i];
    }
    let k3 = rhs(&s2);
    for i in 0..N {
        s2[i] = s[i] + full * k3[i];
    }
    let k4 = rhs(&s2);
    let mut out = *s;
    for i in 0..N {
        out[i] = s[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    out
}

/// One RK4 step of the plain model with a zero-order-hold input.
pub fn step_state(
    x: &ExtendedState,
    u: &ControlRate,
    p: &PhysicalParams,
    h: f64,
) -> ExtendedState {
    let next = rk4_step(
        |v, uu| crate::dynamics::vector_field(&ExtendedState::from_vector(v), uu, p),
        &x.to_vector(),
        u,
        h,
    );
    ExtendedState::from_vector(&next)
}

/// Jacobians of one discrete augmented step (see module docs for the block
/// structure; the `I (x) A_x` block is implied, not stored).
#[derive(Clone, Debug)]
pub struct AugmentedStepJacobians {
    /// d x+ / d x.
    pub a_x: SMatrix<f64, NX, NX>,
    /// d x+ / d u.
    pub b_x: SMatrix<f64, NX, NU>,
    /// d Pi+ / d x_k for each state component k (coupling block D).
    pub dpi_dx: [SMatrix<f64, NX, NP>; NX],
    /// d Pi+ / d u_j for each input component j.
    pub dpi_du: [SMatrix<f64, NX, NP>; NU],
}

/// One forward-mode pass with `K` seed directions over the augmented step.
/// `seed(i)` returns the lane of packed entry `i` (states first, then the
/// four inputs at indices NXA..NXA+4), or None for unseeded entries.
fn aug_pass<const K: usize>(
    xa: &[f64; NXA],
    u: &[f64; NU],
    p: &PhysicalParams,
    h: f64,
    seed: impl Fn(usize) -> Option<usize>,
) -> ([f64; NXA], Vec<[f64; K]>) {
    let mut xs = [Multi::<K>::con(0.0); NXA];
    for i in 0..NXA {
        xs[i] = match seed(i) {
            Some(lane) => Multi::var(xa[i], lane),
            None => Multi::con(xa[i]),
        };
    }
    let mut us = [Multi::<K>::con(0.0); NU];
    for j in 0..NU {
        us[j] = match seed(NXA + j) {
            Some(lane) => Multi::var(u[j], lane),
            None => Multi::con(u[j]),
        };
    }
    let kp = kp_of::<Multi<K>>(p);
    let out = rk4_arr(|s| k_aug_rhs(s, &us, &kp), &xs, h);
    let mut value = [0.0; NXA];
    let mut lanes = vec![[0.0; K]; NXA];
    for i in 0..NXA {
        value[i] = out[i].v;
        lanes[i] = out[i].d;
    }
    (value, lanes)
}

/// Discrete augmented step with exact Jacobian blocks.
pub fn augmented_step_jacobians(
    xa: &SVector<f64, NXA>,
    u: &ControlRate,
    p: &PhysicalParams,
    h: f64,
) -> (SVector<f64, NXA>, AugmentedStepJacobians) {
    let arr: [f64; NXA] = (*xa).into();
    let uarr = [u.df_r1, u.df_r2, u.dtau1, u.dtau2];

    // Three passes: states 0..6, states 6..12, inputs.
    let (value, lo) = aug_pass::<NP>(&arr, &uarr, p, h, |i| (i < 6).then_some(i));
    let (_, hi) = aug_pass::<NP>(&arr, &uarr, p, h, |i| (6..12).contains(&i).then(|| i - 6));
    let (_, du) = aug_pass::<NU>(&arr, &uarr, p, h, |i| i.checked_sub(NXA));

    let mut a_x = SMatrix::<f64, NX, NX>::zeros();
    let mut b_x = SMatrix::<f64, NX, NU>::zeros();
    let mut dpi_dx = [SMatrix::<f64, NX, NP>::zeros(); NX];
    let mut dpi_du = [SMatrix::<f64, NX, NP>::zeros(); NU];
    for r in 0..NX {
        for k in 0..6 {
            a_x[(r, k)] = lo[r][k];
            a_x[(r, 6 + k)] = hi[r][k];
        }
        for j in 0..NU {
            b_x[(r, j)] = du[r][j];
        }
    }
    for c in 0..NP {
        for r in 0..NX {
            let i = NX + NX * c + r;
            for k in 0..6 {
                dpi_dx[k][(r, c)] = lo[i][k];
                dpi_dx[6 + k][(r, c)] = hi[i][k];
            }
            for j in 0..NU {
                dpi_du[j][(r, c)] = du[i][j];
            }
        }
    }
    (
        SVector::from(value),
        AugmentedStepJacobians {
            a_x,
            b_x,
            dpi_dx,
            dpi_du,
        },
    )
}

/// Discrete step of the plain model with exact (A, B).
pub fn step_jacobians(
    x: &ExtendedState,
    u: &ControlRate,
    p: &PhysicalParams,
    h: f64,
) -> (SVector<f64, NX>, SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>) {
    let xarr = x.to_array();
    let uarr = [u.df_r1, u.df_r2, u.dtau1, u.dtau2];
    let kp_a = kp_of::<Multi<NX>>(p);
    let mut xs = [Multi::<NX>::con(0.0); NX];
    for i in 0..NX {
        xs[i] = Multi::var(xarr[i], i);
    }
    let us_const = uarr.map(Multi::<NX>::con);
    let out_a = rk4_arr(|s| k_vf(s, &us_const, &kp_a), &xs, h);

    let kp_b = kp_of::<Multi<NU>>(p);
    let xs_const = xarr.map(Multi::<NU>::con);
    let mut us = [Multi::<NU>::con(0.0); NU];
    for j in 0..NU {
        us[j] = Multi::var(uarr[j], j);
    }
    let out_b = rk4_arr(|s| k_vf(s, &us, &kp_b), &xs_const, h);

    let mut next = SVector::<f64, NX>::zeros();
    let mut a = SMatrix::<f64, NX, NX>::zeros();
    let mut b = SMatrix::<f64, NX, NU>::zeros();
    for r in 0..NX {
        next[r] = out_a[r].v;
        for c in 0..NX {
            a[(r, c)] = out_a[r].d[c];
        }
        for c in 0..NU {
            b[(r, c)] = out_b[r].d[c];
        }
    }
    (next, a, b)
}
