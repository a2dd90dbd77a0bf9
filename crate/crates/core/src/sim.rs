//! Closed-loop trial: the plant integrates the true (deviated) model at
//! the fast rate while the controller, fed only measured states and the
//! nominal parameters, updates at every other plant step and holds its
//! rate command in between. Model-plant mismatch therefore comes only
//! from the parameter deviations.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::constraints::{
    constraint_sensitivity, signed_residuals, tightening_margin, ConstraintError, ConstraintSpec,
};
use crate::dynamics::{
    apply_deviations, link_stresses, ControlRate, ExtendedState, ModelError, PhysicalParams, NP,
    NX,
};
use crate::ocp::{Controller, ControllerMode, OcpConfig, OcpError};
use crate::qp::QpStatus;
use crate::reference::{EllipseSpec, ReferenceError, ReferenceTable};
use crate::sensitivity::{augmented_rhs, rk4_step, step_state, AugmentedState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error("invalid timing: {0}")]
    InvalidTiming(&'static str),
}

/// Everything a single closed-loop run needs besides the deviations.
#[derive(Clone, Debug)]
pub struct SimConfig {
    /// Plant integration step [s].
    pub plant_dt: f64,
    /// Trial duration [s].
    pub t_final: f64,
    /// Initial rod-angle offsets from the reference start [rad].
    pub e_phi0: [f64; 2],
    /// Stress reference applied to both rods [N].
    pub fl_ref: f64,
    pub ellipse: EllipseSpec,
    pub ocp: OcpConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            plant_dt: 0.005,
            t_final: 12.0,
            e_phi0: [-8.0_f64.to_radians(), 4.0_f64.to_radians()],
            fl_ref: 10.0,
            ellipse: EllipseSpec::default(),
            ocp: OcpConfig::default(),
        }
    }
}

/// One plant-rate sample of the closed loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub x: ExtendedState,
    /// Rate command active over [t, t + dt).
    pub u: ControlRate,
    pub phi_d: [f64; 2],
    /// True rod stresses and their reference [N].
    pub fl: [f64; 2],
    pub fl_d: [f64; 2],
    pub e_phi: [f64; 2],
    pub e_fl: [f64; 2],
    /// Signed constraint residuals (negative = satisfied).
    pub s_delta: f64,
    pub s_fr: [f64; 2],
    /// Back-off margins from the owning control step [cos / N / N].
    pub alpha: [f64; 3],
    pub qp_status: QpStatus,
    pub qp_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrialLog {
    pub rows: Vec<LogRow>,
}

/// Scalar end-of-trial figures used for classification and reporting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSummary {
    pub qp_failures: usize,
    pub control_steps: usize,
    pub max_s_delta: f64,
    pub max_s_fr1: f64,
    pub max_s_fr2: f64,
    pub min_f_r1: f64,
    pub min_f_r2: f64,
    /// Root-mean-square rod-angle tracking error over the trial [rad].
    pub rmse_phi: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub log: TrialLog,
    pub summary: TrialSummary,
}

pub fn status_label(status: QpStatus) -> &'static str {
    match status {
        QpStatus::Solved => "solved",
        QpStatus::MaxIterations => "max_iterations",
        QpStatus::PrimalInfeasible => "primal_infeasible",
        QpStatus::DualInfeasible => "dual_infeasible",
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    (k >= 1.0 && (r - k).abs() < 1e-9).then_some(k as usize)
}

/// Static pre-tensioned start: at the given pose, choose thrust vectors
/// so each vehicle balances its weight plus the rod stresses `fl` (both
/// rods in tension). Rates and torques are zero, so the state is an
/// equilibrium of the nominal model and the only initial output error
/// is the configured angle offset.
pub fn pretensioned_start(
    phi: [f64; 2],
    fl: [f64; 2],
    p0: &PhysicalParams,
    boxes: &crate::constraints::BoxSets,
) -> ExtendedState {
    let rod = |a: f64| (a.cos(), a.sin());
    let (r1x, r1z) = rod(phi[0]);
    let (r2x, r2z) = rod(phi[1]);
    // Vehicle 2 carries its weight plus rod-2 tension pulling inward;
    // vehicle 1 additionally reacts rod-2's pull on its far end.
    let v2 = (fl[1] * r2x, p0.m2 * p0.g + fl[1] * r2z);
    let v1 = (
        fl[0] * r1x - fl[1] * r2x,
        p0.m1 * p0.g + fl[0] * r1z - fl[1] * r2z,
    );
    let thrust = |v: (f64, f64)| {
        let mag = (v.0 * v.0 + v.1 * v.1).sqrt();
        // Thrust direction (-sin th, cos th) aligned with v.
        (mag.clamp(boxes.f_r_min, boxes.f_r_max), (-v.0).atan2(v.1))
    };
    let (f_r1, th1) = thrust(v1);
    let (f_r2, th2) = thrust(v2);
    ExtendedState {
        phi1: phi[0],
        phi2: phi[1],
        th1,
        th2,
        f_r1,
        f_r2,
        ..ExtendedState::default()
    }
}

/// Run one closed-loop trial with true parameters p0 * (1 + delta).
pub fn run_trial(
    cfg: &SimConfig,
    p0: &PhysicalParams,
    deltas: &SVector<f64, NP>,
) -> Result<TrialOutput, SimError> {
    if !(cfg.plant_dt > 0.0) {
        return Err(SimError::InvalidTiming("plant step must be positive"));
    }
    let substeps = integer_ratio(cfg.ocp.ts, cfg.plant_dt)
        .ok_or(SimError::InvalidTiming("control period must be an integer multiple of the plant step"))?;
    let n_steps = integer_ratio(cfg.t_final, cfg.plant_dt)
        .ok_or(SimError::InvalidTiming("duration must be an integer multiple of the plant step"))?;

    let p_true = apply_deviations(p0, deltas)?;
    let table = ReferenceTable::build(&cfg.ellipse, p0, cfg.fl_ref, cfg.plant_dt)?;
    let tube = cfg.ocp.mode == ControllerMode::Tube;

    // Start on the reference with the configured angle offsets, rods
    // already holding the stress reference (nominal masses).
    let r0 = table.rows[0].point;
    let x0 = pretensioned_start(
        [r0.phi_d[0] + cfg.e_phi0[0], r0.phi_d[1] + cfg.e_phi0[1]],
        r0.fl_d,
        p0,
        &cfg.ocp.boxes,
    );

    let mut ctrl = Controller::new(cfg.ocp.clone(), *p0, &x0)?;
    let diag_specs = [
        ConstraintSpec::separation(cfg.ocp.dphi_min, true)?,
        ConstraintSpec::thrust_upper(0, cfg.ocp.boxes.f_r_max, true),
        ConstraintSpec::thrust_upper(1, cfg.ocp.boxes.f_r_max, true),
    ];

    let mut x = x0;
    let mut pi_ctrl = SMatrix::<f64, NX, NP>::zeros();
    let mut u = ControlRate::default();
    let mut alpha = [0.0; 3];
    let mut qp_status = QpStatus::Solved;
    let mut qp_time_ms = 0.0;

    let mut rows = Vec::with_capacity(n_steps + 1);
    let mut qp_failures = 0usize;
    let mut control_steps = 0usize;
    let mut sum_ms = 0.0;
    let mut max_ms = 0.0_f64;
    let mut sq_err = 0.0;

    for k in 0..=n_steps {
        let t = k as f64 * cfg.plant_dt;
        if k % substeps == 0 {
            // Controller sample: margins from the measured pair, then one
            // real-time pass, then advance the guess and the sensitivity.
            if tube {
                for (slot, spec) in diag_specs.iter().enumerate() {
                    let pi_y = constraint_sensitivity(spec, &x, &pi_ctrl);
                    alpha[slot] =
                        tightening_margin(&pi_y, &cfg.ocp.w_p, cfg.ocp.eps_s).map_err(OcpError::from)?;
                }
            }
            let (stages, term) = table.window(t, cfg.ocp.ts, cfg.ocp.n);
            let rep = ctrl.rti_step(&x, &pi_ctrl, &stages, &term)?;
            ctrl.shift();
            u = rep.u0;
            qp_status = rep.qp_status;
            qp_time_ms = rep.solve_time_ms;
            qp_failures += rep.failed as usize;
            control_steps += 1;
            sum_ms += rep.solve_time_ms;
            max_ms = max_ms.max(rep.solve_time_ms);
            if tube {
                let xa = AugmentedState { x, pi: pi_ctrl }.to_vector();
                let next = rk4_step(|v, uu| augmented_rhs(v, uu, p0), &xa, &u, cfg.ocp.ts);
                pi_ctrl = AugmentedState::from_vector(&next).pi;
            }
        }

        let dr = &table.rows[k.min(table.rows.len() - 1)];
        let fl = link_stresses(&x, &p_true);
        let (s_delta, s_fr1, s_fr2) = signed_residuals(&x, cfg.ocp.dphi_min, cfg.ocp.boxes.f_r_max);
        let e_phi = [x.phi1 - dr.point.phi_d[0], x.phi2 - dr.point.phi_d[1]];
        sq_err += e_phi[0] * e_phi[0] + e_phi[1] * e_phi[1];
        rows.push(LogRow {
            t,
            x,
            u,
            phi_d: dr.point.phi_d,
            fl: [fl[0], fl[1]],
            fl_d: dr.point.fl_d,
            e_phi,
            e_fl: [fl[0] - dr.point.fl_d[0], fl[1] - dr.point.fl_d[1]],
            s_delta,
            s_fr: [s_fr1, s_fr2],
            alpha,
            qp_status,
            qp_time_ms,
        });

        if k < n_steps {
            x = step_state(&x, &u, &p_true, cfg.plant_dt);
        }
    }

    let summary = TrialSummary {
        qp_failures,
        control_steps,
        max_s_delta: rows.iter().map(|r| r.s_delta).fold(f64::NEG_INFINITY, f64::max),
        max_s_fr1: rows.iter().map(|r| r.s_fr[0]).fold(f64::NEG_INFINITY, f64::max),
        max_s_fr2: rows.iter().map(|r| r.s_fr[1]).fold(f64::NEG_INFINITY, f64::max),
        min_f_r1: rows.iter().map(|r| r.x.f_r1).fold(f64::INFINITY, f64::min),
        min_f_r2: rows.iter().map(|r| r.x.f_r2).fold(f64::INFINITY, f64::min),
        rmse_phi: (sq_err / (2.0 * rows.len() as f64)).sqrt(),
        mean_solve_ms: sum_ms / control_steps.max(1) as f64,
        max_solve_ms: max_ms,
    };
    Ok(TrialOutput {
        log: TrialLog { rows },
        summary,
    })
}
