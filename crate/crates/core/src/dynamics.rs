//! Planar two-vehicle rigid-link chain model.
//!
//! Two point-mass vehicles are linked by massless rigid rods: rod 1 from a
//! fixed pivot at the origin to vehicle 1, rod 2 from vehicle 1 to vehicle 2.
//! Each vehicle applies a thrust of magnitude `f_Rj` along its body axis
//! (tilt `theta_j` from vertical) and a torque `tau_j` about its own axis.
//! Thrust and torque are first-order actuator states driven by rate inputs,
//! which makes thrust bounds plain state bounds in the OCP.
//!
//! State (12): `[phi1, phi2, th1, th2, dphi1, dphi2, dth1, dth2, fR1, fR2,
//! tau1, tau2]`; rod angles `phi` are measured from the horizontal x-axis,
//! tilts `th` from the vertical z-axis. Input (4): actuator rates
//! `[dfR1, dfR2, dtau1, dtau2]`.
//!
//! The core expressions are written once over a generic scalar (see
//! `crate::scalar`) so the same code path serves plain evaluation and
//! forward-mode differentiation of the discrete-time maps.

use nalgebra::{Matrix2, SVector, Vector2};
use thiserror::Error;

use crate::scalar::Real;

/// Number of model states.
pub const NX: usize = 12;
/// Number of rate inputs.
pub const NU: usize = 4;
/// Number of uncertain physical parameters (m1, m2, l1, l2, J1, J2).
pub const NP: usize = 6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter {name} = {value} must be positive")]
    NonPositiveParameter { name: &'static str, value: f64 },
}

/// Physical parameters of the chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalParams {
    /// Vehicle count (fixed at 2 for this model).
    pub n: usize,
    /// Vehicle masses [kg].
    pub m1: f64,
    pub m2: f64,
    /// Rod lengths [m].
    pub l1: f64,
    pub l2: f64,
    /// Vehicle rotational inertias [kg m^2].
    pub j1: f64,
    pub j2: f64,
    /// Gravitational acceleration [m/s^2].
    pub g: f64,
}

impl PhysicalParams {
    pub fn new(
        m1: f64,
        m2: f64,
        l1: f64,
        l2: f64,
        j1: f64,
        j2: f64,
        g: f64,
    ) -> Result<Self, ModelError> {
        let fields = [
            ("m1", m1),
            ("m2", m2),
            ("l1", l1),
            ("l2", l2),
            ("j1", j1),
            ("j2", j2),
            ("g", g),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        Ok(PhysicalParams {
            n: 2,
            m1,
            m2,
            l1,
            l2,
            j1,
            j2,
            g,
        })
    }

    /// The six uncertain parameters in deviation order.
    pub fn uncertain(&self) -> [f64; NP] {
        [self.m1, self.m2, self.l1, self.l2, self.j1, self.j2]
    }
}

impl Default for PhysicalParams {
    /// Bench model: equal vehicles, 0.942 m rods.
    fn default() -> Self {
        PhysicalParams::new(0.457, 0.457, 0.942, 0.942, 0.123, 0.123, 9.81).unwrap()
    }
}

/// Scale the six uncertain parameters by relative deviations
/// `p_i * (1 + delta_i)`; gravity is exact. Fails if a scaled parameter
/// would become nonpositive.
pub fn apply_deviations(
    p: &PhysicalParams,
    delta: &SVector<f64, NP>,
) -> Result<PhysicalParams, ModelError> {
    PhysicalParams::new(
        p.m1 * (1.0 + delta[0]),
        p.m2 * (1.0 + delta[1]),
        p.l1 * (1.0 + delta[2]),
        p.l2 * (1.0 + delta[3]),
        p.j1 * (1.0 + delta[4]),
        p.j2 * (1.0 + delta[5]),
        p.g,
    )
}

/// Planar point in the vertical x-z plane [m].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlanarVec {
    pub x: f64,
    pub z: f64,
}

impl PlanarVec {
    pub fn new(x: f64, z: f64) -> Self {
        PlanarVec { x, z }
    }
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.z)
    }
}

/// Full model state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExtendedState {
    /// Rod angles from horizontal [rad].
    pub phi1: f64,
    pub phi2: f64,
    /// Thrust tilts from vertical [rad].
    pub th1: f64,
    pub th2: f64,
    /// Rod angle rates [rad/s].
    pub dphi1: f64,
    pub dphi2: f64,
    /// Tilt rates [rad/s].
    pub dth1: f64,
    pub dth2: f64,
    /// Thrust magnitudes [N].
    pub f_r1: f64,
    pub f_r2: f64,
    /// Tilt torques [N m].
    pub tau1: f64,
    pub tau2: f64,
}

impl ExtendedState {
    pub fn to_vector(&self) -> SVector<f64, NX> {
        SVector::from(self.to_array())
    }

    pub fn from_vector(v: &SVector<f64, NX>) -> Self {
        ExtendedState {
            phi1: v[0],
            phi2: v[1],
            th1: v[2],
            th2: v[3],
            dphi1: v[4],
            dphi2: v[5],
            dth1: v[6],
            dth2: v[7],
            f_r1: v[8],
            f_r2: v[9],
            tau1: v[10],
            tau2: v[11],
        }
    }

    pub fn to_array(&self) -> [f64; NX] {
        [
            self.phi1, self.phi2, self.th1, self.th2, self.dphi1, self.dphi2, self.dth1,
            self.dth2, self.f_r1, self.f_r2, self.tau1, self.tau2,
        ]
    }
}

/// Actuator rate input.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlRate {
    /// Thrust rates [N/s].
    pub df_r1: f64,
    pub df_r2: f64,
    /// Torque rates [N m/s].
    pub dtau1: f64,
    pub dtau2: f64,
}

impl ControlRate {
    pub fn to_vector(&self) -> SVector<f64, NU> {
        SVector::from([self.df_r1, self.df_r2, self.dtau1, self.dtau2])
    }

    pub fn from_vector(v: &SVector<f64, NU>) -> Self {
        ControlRate {
            df_r1: v[0],
            df_r2: v[1],
            dtau1: v[2],
            dtau2: v[3],
        }
    }
}

// ---------------------------------------------------------------------------
// Generic kernel. All closed-form model expressions live here; the public
// f64 wrappers below and the forward-mode passes in `sensitivity` share them.
// ---------------------------------------------------------------------------

/// Parameters lifted into the generic scalar type.
#[derive(Clone, Copy)]
pub(crate) struct Kp<S> {
    pub m1: S,
    pub m2: S,
    pub l1: S,
    pub l2: S,
    pub j1: S,
    pub j2: S,
    pub g: S,
}

pub(crate) fn kp_of<S: Real>(p: &PhysicalParams) -> Kp<S> {
    Kp {
        m1: S::of(p.m1),
        m2: S::of(p.m2),
        l1: S::of(p.l1),
        l2: S::of(p.l2),
        j1: S::of(p.j1),
        j2: S::of(p.j2),
        g: S::of(p.g),
    }
}

/// Rod accelerations from the 2x2 rod subsystem: M(q) ddq + b(q, dq) = Q.
#[inline]
pub(crate) fn k_rod_accel<S: Real>(x: &[S; NX], p: &Kp<S>) -> [S; 2] {
    let (r1, r2) = k_forcing(x, p);
    let (a, bc, d, det) = k_mass_entries(x, p);
    let dd1 = (d * r1 - bc * r2) / det;
    let dd2 = (a * r2 - bc * r1) / det;
    [dd1, dd2]
}

/// Mass matrix entries (a, b*cos, d) and determinant.
#[inline]
fn k_mass_entries<S: Real>(x: &[S; NX], p: &Kp<S>) -> (S, S, S, S) {
    let cd = (x[1] - x[0]).cos();
    let a = (p.m1 + p.m2) * p.l1 * p.l1;
    let bc = p.m2 * p.l1 * p.l2 * cd;
    let d = p.m2 * p.l2 * p.l2;
    (a, bc, d, a * d - bc * bc)
}

/// Generalized forcing r = Q_phi - bias on the rod coordinates.
#[inline]
fn k_forcing<S: Real>(x: &[S; NX], p: &Kp<S>) -> (S, S) {
    let sd = (x[1] - x[0]).sin();
    let b = p.m2 * p.l1 * p.l2;
    let q1 = p.l1 * (x[8] * (x[0] - x[2]).cos() + x[9] * (x[0] - x[3]).cos());
    let q2 = p.l2 * x[9] * (x[1] - x[3]).cos();
    let bias1 = -b * sd * x[5] * x[5] + (p.m1 + p.m2) * p.g * p.l1 * x[0].cos();
    let bias2 = b * sd * x[4] * x[4] + p.m2 * p.g * p.l2 * x[1].cos();
    (q1 - bias1, q2 - bias2)
}

/// Continuous-time vector field f(x, u).
#[inline]
pub(crate) fn k_vf<S: Real>(x: &[S; NX], u: &[S; NU], p: &Kp<S>) -> [S; NX] {
    let dd = k_rod_accel(x, p);
    [
        x[4],
        x[5],
        x[6],
        x[7],
        dd[0],
        dd[1],
        x[10] / p.j1,
        x[11] / p.j2,
        u[0],
        u[1],
        u[2],
        u[3],
    ]
}

/// Axial rod-stress pair (fL1, fL2), positive in tension, from a Newton
/// balance on each vehicle projected onto its rod direction.
#[inline]
pub(crate) fn k_link_stresses<S: Real>(x: &[S; NX], p: &Kp<S>) -> [S; 2] {
    let dd = k_rod_accel(x, p);
    let (s1, c1) = (x[0].sin(), x[0].cos());
    let (s2, c2) = (x[1].sin(), x[1].cos());
    // Vehicle accelerations: p1 = l1 e(phi1), p2 = p1 + l2 e(phi2).
    let a1x = p.l1 * (-dd[0] * s1 - x[4] * x[4] * c1);
    let a1z = p.l1 * (dd[0] * c1 - x[4] * x[4] * s1);
    let a2x = a1x + p.l2 * (-dd[1] * s2 - x[5] * x[5] * c2);
    let a2z = a1z + p.l2 * (dd[1] * c2 - x[5] * x[5] * s2);
    // Thrust directions t_j = (-sin th_j, cos th_j); gravity (0, -g).
    let (t1x, t1z) = (-x[2].sin(), x[2].cos());
    let (t2x, t2z) = (-x[3].sin(), x[3].cos());
    // Outer rod: project vehicle-2 balance onto u2 = (p1 - p2)/l2 = -e(phi2).
    let r2x = p.m2 * a2x - x[9] * t2x;
    let r2z = p.m2 * (a2z + p.g) - x[9] * t2z;
    let fl2 = -(c2 * r2x + s2 * r2z);
    // Inner rod: vehicle-1 balance includes the pull from rod 2 along e(phi2).
    let r1x = p.m1 * a1x - x[8] * t1x - fl2 * c2;
    let r1z = p.m1 * (a1z + p.g) - x[8] * t1z - fl2 * s2;
    let fl1 = -(c1 * r1x + s1 * r1z);
    [fl1, fl2]
}

/// Rows 4..5 of the state Jacobian: d(rod accel)/dx, all 12 columns.
#[inline]
pub(crate) fn k_daccel_dx<S: Real>(x: &[S; NX], p: &Kp<S>) -> [[S; NX]; 2] {
    let z = S::of(0.0);
    let two = S::of(2.0);
    let delta = x[1] - x[0];
    let (sd, cd) = (delta.sin(), delta.cos());
    let b = p.m2 * p.l1 * p.l2;
    let (bs, bc) = (b * sd, b * cd);
    let (a, _, d, det) = k_mass_entries(x, p);
    let dd = k_rod_accel(x, p);
    let (s11, c11) = ((x[0] - x[2]).sin(), (x[0] - x[2]).cos());
    let (s12, c12) = ((x[0] - x[3]).sin(), (x[0] - x[3]).cos());
    let (s22, c22) = ((x[1] - x[3]).sin(), (x[1] - x[3]).cos());
    let msum = p.m1 + p.m2;

    // dr/dx_k and (dM/dx_k) ddq, nonzero only for the listed columns.
    let dm_dd = [bs * dd[1], bs * dd[0]]; // (dM/dphi1) ddq; dM/dphi2 negates it
    let col = |r: [S; 2], mterm: [S; 2]| -> [S; 2] {
        let w1 = r[0] - mterm[0];
        let w2 = r[1] - mterm[1];
        [(d * w1 - bc * w2) / det, (a * w2 - bc * w1) / det]
    };

    let c_phi1 = col(
        [
            -(p.l1 * (x[8] * s11 + x[9] * s12)) - bc * x[5] * x[5] + msum * p.g * p.l1 * x[0].sin(),
            bc * x[4] * x[4],
        ],
        dm_dd,
    );
    let c_phi2 = col(
        [
            bc * x[5] * x[5],
            -(p.l2 * x[9] * s22) - bc * x[4] * x[4] + p.m2 * p.g * p.l2 * x[1].sin(),
        ],
        [-dm_dd[0], -dm_dd[1]],
    );
    let c_th1 = col([p.l1 * x[8] * s11, z], [z, z]);
    let c_th2 = col([p.l1 * x[9] * s12, p.l2 * x[9] * s22], [z, z]);
    let c_dphi1 = col([z, -(two * bs * x[4])], [z, z]);
    let c_dphi2 = col([two * bs * x[5], z], [z, z]);
    let c_fr1 = col([p.l1 * c11, z], [z, z]);
    let c_fr2 = col([p.l1 * c12, p.l2 * c22], [z, z]);

    let mut rows = [[z; NX]; 2];
    for (i, row) in rows.iter_mut().enumerate() {
        row[0] = c_phi1[i];
        row[1] = c_phi2[i];
        row[2] = c_th1[i];
        row[3] = c_th2[i];
        row[4] = c_dphi1[i];
        row[5] = c_dphi2[i];
        row[8] = c_fr1[i];
        row[9] = c_fr2[i];
    }
    rows
}

/// Rows 4..5 of the deviation Jacobian: d(rod accel)/d(delta) at delta = 0,
/// columns ordered (m1, m2, l1, l2, J1, J2). Each column is the derivative
/// with respect to the physical parameter scaled by its current value.
#[inline]
pub(crate) fn k_daccel_dp<S: Real>(x: &[S; NX], p: &Kp<S>) -> [[S; NP]; 2] {
    let z = S::of(0.0);
    let two = S::of(2.0);
    let delta = x[1] - x[0];
    let (sd, cd) = (delta.sin(), delta.cos());
    let (a, bc, d, det) = k_mass_entries(x, p);
    let dd = k_rod_accel(x, p);
    let (c1, c2) = (x[0].cos(), x[1].cos());
    let c11 = (x[0] - x[2]).cos();
    let c12 = (x[0] - x[3]).cos();
    let c22 = (x[1] - x[3]).cos();
    let msum = p.m1 + p.m2;
    let dphi1_2 = x[4] * x[4];
    let dphi2_2 = x[5] * x[5];

    let minv = |w1: S, w2: S| -> [S; 2] { [(d * w1 - bc * w2) / det, (a * w2 - bc * w1) / det] };
    // Column for parameter theta: M^-1 (dr/dth - (dM/dth) ddq) * theta.
    let col = |dr: [S; 2], dm: [[S; 2]; 2], scale: S| -> [S; 2] {
        let w1 = dr[0] - (dm[0][0] * dd[0] + dm[0][1] * dd[1]);
        let w2 = dr[1] - (dm[1][0] * dd[0] + dm[1][1] * dd[1]);
        let v = minv(w1, w2);
        [v[0] * scale, v[1] * scale]
    };

    let ll = p.l1 * p.l2;
    let c_m1 = col(
        [-(p.g * p.l1 * c1), z],
        [[p.l1 * p.l1, z], [z, z]],
        p.m1,
    );
    let c_m2 = col(
        [
            ll * sd * dphi2_2 - p.g * p.l1 * c1,
            -(ll * sd * dphi1_2) - p.g * p.l2 * c2,
        ],
        [[p.l1 * p.l1, ll * cd], [ll * cd, p.l2 * p.l2]],
        p.m2,
    );
    let c_l1 = col(
        [
            x[8] * c11 + x[9] * c12 + p.m2 * p.l2 * sd * dphi2_2 - msum * p.g * c1,
            -(p.m2 * p.l2 * sd * dphi1_2),
        ],
        [
            [two * msum * p.l1, p.m2 * p.l2 * cd],
            [p.m2 * p.l2 * cd, z],
        ],
        p.l1,
    );
    let c_l2 = col(
        [
            p.m2 * p.l1 * sd * dphi2_2,
            x[9] * c22 - p.m2 * p.l1 * sd * dphi1_2 - p.m2 * p.g * c2,
        ],
        [
            [z, p.m2 * p.l1 * cd],
            [p.m2 * p.l1 * cd, two * p.m2 * p.l2],
        ],
        p.l2,
    );

    let mut rows = [[z; NP]; 2];
    for (i, row) in rows.iter_mut().enumerate() {
        row[0] = c_m1[i];
        row[1] = c_m2[i];
        row[2] = c_l1[i];
        row[3] = c_l2[i];
        // Inertia deviations do not enter the rod subsystem.
    }
    rows
}

// ---------------------------------------------------------------------------
// Public f64 interface.
// ---------------------------------------------------------------------------

/// Vehicle positions (p1, p2) for rod angles (phi1, phi2).
pub fn forward_kinematics(phi1: f64, phi2: f64, p: &PhysicalParams) -> (PlanarVec, PlanarVec) {
    let p1 = PlanarVec::new(p.l1 * phi1.cos(), p.l1 * phi1.sin());
    let p2 = PlanarVec::new(p1.x + p.l2 * phi2.cos(), p1.z + p.l2 * phi2.sin());
    (p1, p2)
}

/// Rod-coordinate mass matrix M(phi1, phi2).
pub fn mass_matrix(phi1: f64, phi2: f64, p: &PhysicalParams) -> Matrix2<f64> {
    let cd = (phi2 - phi1).cos();
    let a = (p.m1 + p.m2) * p.l1 * p.l1;
    let bc = p.m2 * p.l1 * p.l2 * cd;
    let d = p.m2 * p.l2 * p.l2;
    Matrix2::new(a, bc, bc, d)
}

/// Coriolis/centrifugal plus gravity terms b(q, dq) of the rod subsystem.
pub fn bias_terms(phi: &Vector2<f64>, dphi: &Vector2<f64>, p: &PhysicalParams) -> Vector2<f64> {
    let sd = (phi[1] - phi[0]).sin();
    let b = p.m2 * p.l1 * p.l2;
    Vector2::new(
        -b * sd * dphi[1] * dphi[1] + (p.m1 + p.m2) * p.g * p.l1 * phi[0].cos(),
        b * sd * dphi[0] * dphi[0] + p.m2 * p.g * p.l2 * phi[1].cos(),
    )
}

/// Generalized thrust forces Q_phi on the rod coordinates.
pub fn generalized_thrust(
    phi: &Vector2<f64>,
    theta: &Vector2<f64>,
    f_r: &Vector2<f64>,
    p: &PhysicalParams,
) -> Vector2<f64> {
    Vector2::new(
        p.l1 * (f_r[0] * (phi[0] - theta[0]).cos() + f_r[1] * (phi[0] - theta[1]).cos()),
        p.l2 * f_r[1] * (phi[1] - theta[1]).cos(),
    )
}

/// Rod and tilt accelerations (ddphi, ddth).
pub fn accelerations(x: &ExtendedState, p: &PhysicalParams) -> (Vector2<f64>, Vector2<f64>) {
    let dd = k_rod_accel(&x.to_array(), &kp_of::<f64>(p));
    (
        Vector2::new(dd[0], dd[1]),
        Vector2::new(x.tau1 / p.j1, x.tau2 / p.j2),
    )
}

/// Continuous-time vector field of the 12-state model.
pub fn vector_field(x: &ExtendedState, u: &ControlRate, p: &PhysicalParams) -> SVector<f64, NX> {
    SVector::from(k_vf(
        &x.to_array(),
        &[u.df_r1, u.df_r2, u.dtau1, u.dtau2],
        &kp_of::<f64>(p),
    ))
}

/// Axial rod stresses (fL1, fL2) [N], positive in tension.
pub fn link_stresses(x: &ExtendedState, p: &PhysicalParams) -> Vector2<f64> {
    let fl = k_link_stresses(&x.to_array(), &kp_of::<f64>(p));
    Vector2::new(fl[0], fl[1])
}

/// Mechanical energy: rod kinetic + tilt kinetic + gravitational potential.
pub fn total_energy(x: &ExtendedState, p: &PhysicalParams) -> f64 {
    let dphi = Vector2::new(x.dphi1, x.dphi2);
    let m = mass_matrix(x.phi1, x.phi2, p);
    let (p1, p2) = forward_kinematics(x.phi1, x.phi2, p);
    0.5 * dphi.dot(&(m * dphi))
        + 0.5 * (p.j1 * x.dth1 * x.dth1 + p.j2 * x.dth2 * x.dth2)
        + p.g * (p.m1 * p1.z + p.m2 * p2.z)
}
