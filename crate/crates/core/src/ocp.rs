//! Receding-horizon controller built on a condensed Gauss-Newton step.
//!
//! Each control period performs one linearize / condense / solve / update
//! pass over the stored guess trajectory (real-time iteration). States are
//! eliminated through the discrete dynamics, so the QP decision vector is
//! the stacked input correction. In tube mode the trajectory additionally
//! carries the parametric sensitivity, and the separation / thrust rows
//! are tightened by the sensitivity-weighted back-off before being handed
//! to the QP.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use thiserror::Error;

use crate::constraints::{
    constraint_sensitivity, constraint_state_jacobian, constraint_value, tightening_margin,
    BoxSets, ConstraintError, ConstraintSpec,
};
use crate::dynamics::{
    k_link_stresses, k_rod_accel, kp_of, ControlRate, ExtendedState, PhysicalParams, NP, NU, NX,
};
use crate::qp::{QpError, QpProblem, QpSettings, QpSolver, QpStatus, INFINITY_BOUND};
use crate::reference::ReferencePoint;
use crate::scalar::Multi;
use crate::sensitivity::{
    augmented_rhs, augmented_step_jacobians, rk4_step, step_jacobians, AugmentedState,
};
use crate::uncertainty::UncertaintySet;

/// Stage output dimension [phi; f_L; dphi; ddphi].
pub const NY: usize = 8;
/// Terminal output dimension [phi; f_L].
pub const NY_TERM: usize = 4;
/// Quadratic penalty on the rate inputs [cost/(units/s)^2]. The outputs
/// barely see late-horizon torque rates, so without this the subproblem
/// is nearly singular along those lanes.
const RATE_WEIGHT: f64 = 2e-4;
/// Levenberg damping on the per-pass rate correction [cost/(units/s)^2].
const DU_DAMPING: f64 = 2e-4;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("subproblem ended with status {0:?}")]
    QpNotSolved(QpStatus),
    #[error("no convergence after {passes} passes; last step norm {step_norm:.3e}")]
    NotConverged { passes: usize, step_norm: f64 },
    #[error("horizon must contain at least one stage")]
    EmptyHorizon,
    #[error("window carries {got} stage references, controller expects {expected}")]
    WindowMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerMode {
    /// Constraints enforced on the predicted trajectory as-is.
    Nominal,
    /// Separation and thrust rows backed off by the sensitivity margin.
    Tube,
}

/// Diagonal output weights, stored already expanded to output size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub stage: SVector<f64, NY>,
    pub terminal: SVector<f64, NY_TERM>,
}

impl Weights {
    /// Expand per-quantity weights [w_phi, w_fL, w_dphi, w_ddphi] and
    /// [w_phi, w_fL] over both rods.
    pub fn from_pairs(stage: [f64; 4], terminal: [f64; 2]) -> Self {
        Weights {
            stage: SVector::from([
                stage[0], stage[0], stage[1], stage[1], stage[2], stage[2], stage[3], stage[3],
            ]),
            terminal: SVector::from([terminal[0], terminal[0], terminal[1], terminal[1]]),
        }
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::from_pairs([5.0, 1.0, 0.1, 0.1], [50.0, 10.0])
    }
}

#[derive(Clone, Debug)]
pub struct OcpConfig {
    pub mode: ControllerMode,
    /// Horizon length [stages].
    pub n: usize,
    /// Stage duration [s].
    pub ts: f64,
    pub weights: Weights,
    pub boxes: BoxSets,
    /// Minimum opening angle between the rods [rad].
    pub dphi_min: f64,
    /// Deviation weighting for the tightening margin.
    pub w_p: SMatrix<f64, NP, NP>,
    /// Margin floor keeping the back-off smooth at zero sensitivity.
    pub eps_s: f64,
    pub qp: QpSettings,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            mode: ControllerMode::Tube,
            n: 30,
            ts: 0.01,
            weights: Weights::default(),
            boxes: BoxSets::default(),
            dphi_min: 30.0_f64.to_radians(),
            w_p: UncertaintySet::default().weighting(),
            eps_s: 1e-12,
            qp: QpSettings::default(),
        }
    }
}

/// Size of the underlying decision trajectory (states, sensitivities in
/// tube mode, and inputs) before condensing eliminates the state part.
pub fn decision_variable_count(mode: ControllerMode, n: usize) -> usize {
    let per_state = match mode {
        ControllerMode::Nominal => NX,
        ControllerMode::Tube => NX + NX * NP,
    };
    per_state * (n + 1) + NU * n
}

/// Number of inequality rows handed to the QP: input boxes on every
/// stage plus per-stage path rows from stage 1 through the terminal one.
pub fn constraint_row_count(mode: ControllerMode, n: usize) -> usize {
    let per_stage = match mode {
        // separation + 2 two-sided thrust rows + 2 torque rows
        ControllerMode::Nominal => 5,
        // separation + 4 one-sided tightened thrust rows + 2 torque rows
        ControllerMode::Tube => 7,
    };
    NU * n + per_stage * n
}

/// Stage outputs [phi1, phi2, fL1, fL2, dphi1, dphi2, ddphi1, ddphi2].
pub fn stage_output(x: &ExtendedState, p: &PhysicalParams) -> SVector<f64, NY> {
    let a = x.to_array();
    let kp = kp_of::<f64>(p);
    let dd = k_rod_accel(&a, &kp);
    let fl = k_link_stresses(&a, &kp);
    SVector::from([a[0], a[1], fl[0], fl[1], a[4], a[5], dd[0], dd[1]])
}

/// Terminal outputs [phi1, phi2, fL1, fL2].
pub fn terminal_output(x: &ExtendedState, p: &PhysicalParams) -> SVector<f64, NY_TERM> {
    let h = stage_output(x, p);
    SVector::from([h[0], h[1], h[2], h[3]])
}

fn output_lanes(x: &ExtendedState, p: &PhysicalParams) -> [Multi<NX>; NY] {
    let a = x.to_array();
    let mut xs = [Multi::<NX>::con(0.0); NX];
    for (i, xi) in xs.iter_mut().enumerate() {
        *xi = Multi::var(a[i], i);
    }
    let kp = kp_of::<Multi<NX>>(p);
    let dd = k_rod_accel(&xs, &kp);
    let fl = k_link_stresses(&xs, &kp);
    [xs[0], xs[1], fl[0], fl[1], xs[4], xs[5], dd[0], dd[1]]
}

/// Stage output value and Jacobian (outputs do not depend on the input).
pub fn stage_output_jacobian(
    x: &ExtendedState,
    p: &PhysicalParams,
) -> (SVector<f64, NY>, SMatrix<f64, NY, NX>) {
    let out = output_lanes(x, p);
    let mut h = SVector::zeros();
    let mut jac = SMatrix::zeros();
    for (r, o) in out.iter().enumerate() {
        h[r] = o.v;
        for c in 0..NX {
            jac[(r, c)] = o.d[c];
        }
    }
    (h, jac)
}

/// Terminal output value and Jacobian.
pub fn terminal_output_jacobian(
    x: &ExtendedState,
    p: &PhysicalParams,
) -> (SVector<f64, NY_TERM>, SMatrix<f64, NY_TERM, NX>) {
    let out = output_lanes(x, p);
    let mut h = SVector::zeros();
    let mut jac = SMatrix::zeros();
    for r in 0..NY_TERM {
        h[r] = out[r].v;
        for c in 0..NX {
            jac[(r, c)] = out[r].d[c];
        }
    }
    (h, jac)
}

/// Guess trajectory the controller refines in place.
#[derive(Clone, Debug)]
pub struct DecisionTrajectory {
    /// n + 1 states.
    pub states: Vec<ExtendedState>,
    /// n + 1 sensitivities (kept at zero in nominal mode).
    pub pis: Vec<SMatrix<f64, NX, NP>>,
    /// n inputs.
    pub inputs: Vec<ControlRate>,
}

/// Outcome of one controller pass.
#[derive(Clone, Copy, Debug)]
pub struct RtiReport {
    pub u0: ControlRate,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Largest input correction [N/s or N m/s]; a stationarity proxy.
    pub step_norm: f64,
    pub solve_time_ms: f64,
    /// True when the QP did not solve and the previous input was held.
    pub failed: bool,
}

pub struct Controller {
    cfg: OcpConfig,
    p0: PhysicalParams,
    traj: DecisionTrajectory,
    solver: QpSolver,
    /// [separation, f1 upper, f1 lower, f2 upper, f2 lower].
    path_specs: [ConstraintSpec; 5],
    last_u0: ControlRate,
}

impl Controller {
    /// Cold start around a constant pose: every stage holds `x0`, inputs
    /// are zero, and in tube mode the sensitivity guess is rolled out at
    /// the pinned state.
    pub fn new(cfg: OcpConfig, p0: PhysicalParams, x0: &ExtendedState) -> Result<Self, OcpError> {
        if cfg.n == 0 {
            return Err(OcpError::EmptyHorizon);
        }
        cfg.boxes.validate()?;
        let tightened = cfg.mode == ControllerMode::Tube;
        let path_specs = [
            ConstraintSpec::separation(cfg.dphi_min, tightened)?,
            ConstraintSpec::thrust_upper(0, cfg.boxes.f_r_max, tightened),
            ConstraintSpec::thrust_lower(0, cfg.boxes.f_r_min, tightened),
            ConstraintSpec::thrust_upper(1, cfg.boxes.f_r_max, tightened),
            ConstraintSpec::thrust_lower(1, cfg.boxes.f_r_min, tightened),
        ];
        let states = vec![*x0; cfg.n + 1];
        let inputs = vec![ControlRate::default(); cfg.n];
        let mut pis = vec![SMatrix::zeros(); cfg.n + 1];
        if tightened {
            for i in 0..cfg.n {
                let xa = AugmentedState { x: *x0, pi: pis[i] }.to_vector();
                let next = rk4_step(|v, u| augmented_rhs(v, u, &p0), &xa, &inputs[i], cfg.ts);
                pis[i + 1] = AugmentedState::from_vector(&next).pi;
            }
        }
        let qp = cfg.qp;
        Ok(Controller {
            cfg,
            p0,
            traj: DecisionTrajectory { states, pis, inputs },
            solver: QpSolver::new(qp),
            path_specs,
            last_u0: ControlRate::default(),
        })
    }

    pub fn config(&self) -> &OcpConfig {
        &self.cfg
    }

    pub fn trajectory(&self) -> &DecisionTrajectory {
        &self.traj
    }

    /// Advance the guess one period: drop stage 0, duplicate the tail.
    pub fn shift(&mut self) {
        let n = self.cfg.n;
        for i in 0..n {
            self.traj.states[i] = self.traj.states[i + 1];
            self.traj.pis[i] = self.traj.pis[i + 1];
        }
        for i in 0..n.saturating_sub(1) {
            self.traj.inputs[i] = self.traj.inputs[i + 1];
        }
    }

    /// One linearize / condense / solve / update pass. On QP failure the
    /// guess is left untouched and the previously applied input is held.
    pub fn rti_step(
        &mut self,
        x_meas: &ExtendedState,
        pi_meas: &SMatrix<f64, NX, NP>,
        stages: &[ReferencePoint],
        terminal: &ReferencePoint,
    ) -> Result<RtiReport, OcpError> {
        let start = Instant::now();
        let n = self.cfg.n;
        if stages.len() != n {
            return Err(OcpError::WindowMismatch {
                expected: n,
                got: stages.len(),
            });
        }
        let tube = self.cfg.mode == ControllerMode::Tube;
        let nz = NU * n;
        let ts = self.cfg.ts;

        // Stage-wise linearization of the discrete dynamics at the guess.
        let mut a_mats: Vec<SMatrix<f64, NX, NX>> = Vec::with_capacity(n);
        let mut b_mats: Vec<SMatrix<f64, NX, NU>> = Vec::with_capacity(n);
        let mut dpi_dx: Vec<[SMatrix<f64, NX, NP>; NX]> = Vec::new();
        let mut dpi_du: Vec<[SMatrix<f64, NX, NP>; NU]> = Vec::new();
        let mut def_x: Vec<SVector<f64, NX>> = Vec::with_capacity(n);
        let mut def_pi: Vec<SMatrix<f64, NX, NP>> = Vec::new();
        for i in 0..n {
            if tube {
                let xa = AugmentedState {
                    x: self.traj.states[i],
                    pi: self.traj.pis[i],
                }
                .to_vector();
                let (next, jac) = augmented_step_jacobians(&xa, &self.traj.inputs[i], &self.p0, ts);
                let next = AugmentedState::from_vector(&next);
                a_mats.push(jac.a_x);
                b_mats.push(jac.b_x);
                dpi_dx.push(jac.dpi_dx);
                dpi_du.push(jac.dpi_du);
                def_x.push(next.x.to_vector() - self.traj.states[i + 1].to_vector());
                def_pi.push(next.pi - self.traj.pis[i + 1]);
            } else {
                let (next, a, b) = step_jacobians(&self.traj.states[i], &self.traj.inputs[i], &self.p0, ts);
                a_mats.push(a);
                b_mats.push(b);
                def_x.push(next - self.traj.states[i + 1].to_vector());
            }
        }

        // Free response to the measured state (initial-value embedding).
        let mut c_off = vec![SVector::<f64, NX>::zeros(); n + 1];
        c_off[0] = x_meas.to_vector() - self.traj.states[0].to_vector();
        let mut pc = vec![SMatrix::<f64, NX, NP>::zeros(); n + 1];
        if tube {
            pc[0] = pi_meas - self.traj.pis[0];
        }
        for i in 0..n {
            c_off[i + 1] = a_mats[i] * c_off[i] + def_x[i];
            if tube {
                let mut t = a_mats[i] * pc[i] + def_pi[i];
                for r in 0..NX {
                    t += c_off[i][r] * dpi_dx[i][r];
                }
                pc[i + 1] = t;
            }
        }

        // Input-to-state maps, one 12x4 block per (stage, input) pair,
        // and their sensitivity counterparts in tube mode.
        let mut gamma: Vec<Vec<SMatrix<f64, NX, NU>>> = vec![Vec::new(); n + 1];
        let mut pg: Vec<Vec<[SMatrix<f64, NX, NP>; NU]>> = vec![Vec::new(); n + 1];
        for i in 0..n {
            let mut next: Vec<SMatrix<f64, NX, NU>> = Vec::with_capacity(i + 1);
            for j in 0..i {
                next.push(a_mats[i] * gamma[i][j]);
            }
            next.push(b_mats[i]);
            if tube {
                let mut nextp: Vec<[SMatrix<f64, NX, NP>; NU]> = Vec::with_capacity(i + 1);
                for j in 0..i {
                    let mut blk = [SMatrix::<f64, NX, NP>::zeros(); NU];
                    for (c, b) in blk.iter_mut().enumerate() {
                        let mut t = a_mats[i] * pg[i][j][c];
                        for r in 0..NX {
                            t += gamma[i][j][(r, c)] * dpi_dx[i][r];
                        }
                        *b = t;
                    }
                    nextp.push(blk);
                }
                nextp.push(dpi_du[i]);
                pg[i + 1] = nextp;
            }
            gamma[i + 1] = next;
        }

        // Least-squares cost on the outputs. Stage 0 is fixed by the
        // embedding, so it contributes nothing to the subproblem.
        let mut h_mat = DMatrix::<f64>::zeros(nz, nz);
        let mut grad = DVector::<f64>::zeros(nz);
        for i in 1..=n {
            if i < n {
                let (h, jh) = stage_output_jacobian(&self.traj.states[i], &self.p0);
                let rho = h + jh * c_off[i] - stages[i].stage_vector();
                accumulate_cost(
                    &mut h_mat,
                    &mut grad,
                    &gamma[i],
                    &jh,
                    &self.cfg.weights.stage,
                    &rho,
                );
            } else {
                let (h, jh) = terminal_output_jacobian(&self.traj.states[i], &self.p0);
                let rho = h + jh * c_off[i] - terminal.terminal_vector();
                accumulate_cost(
                    &mut h_mat,
                    &mut grad,
                    &gamma[i],
                    &jh,
                    &self.cfg.weights.terminal,
                    &rho,
                );
            }
        }
        for r in 1..nz {
            for c in 0..r {
                h_mat[(r, c)] = h_mat[(c, r)];
            }
        }
        // Rate penalty (real curvature plus its gradient at the guess) and
        // Levenberg damping on the correction alone. The damping keeps cold
        // starts from slamming between the rate bounds; it vanishes at the
        // fixed point, so the converged plan only sees the rate penalty.
        for i in 0..n {
            let ui = self.traj.inputs[i].to_vector();
            for c in 0..NU {
                let dgl = NU * i + c;
                h_mat[(dgl, dgl)] += RATE_WEIGHT + DU_DAMPING;
                grad[dgl] += RATE_WEIGHT * ui[c];
            }
        }

        // Constraint rows. Input boxes first, then per-stage path rows.
        let m_rows = constraint_row_count(self.cfg.mode, n);
        let mut a_qp = DMatrix::<f64>::zeros(m_rows, nz);
        let mut l_qp = DVector::from_element(m_rows, -INFINITY_BOUND);
        let mut u_qp = DVector::from_element(m_rows, INFINITY_BOUND);
        for i in 0..n {
            let ui = self.traj.inputs[i].to_vector();
            for c in 0..NU {
                let r = NU * i + c;
                a_qp[(r, NU * i + c)] = 1.0;
                let (lo, hi) = if c < 2 {
                    (self.cfg.boxes.df_r_min, self.cfg.boxes.df_r_max)
                } else {
                    (self.cfg.boxes.dtau_min, self.cfg.boxes.dtau_max)
                };
                l_qp[r] = lo - ui[c];
                u_qp[r] = hi - ui[c];
            }
        }
        let per_stage = if tube { 7 } else { 5 };
        for j in 1..=n {
            let base = NU * n + (j - 1) * per_stage;
            let xj = self.traj.states[j];
            let xj_vec = xj.to_vector();
            if tube {
                for (k, spec) in self.path_specs.iter().enumerate() {
                    let r = base + k;
                    let y = constraint_value(spec, &xj);
                    let v = constraint_state_jacobian(spec, &xj);
                    let pi_y = constraint_sensitivity(spec, &xj, &self.traj.pis[j]);
                    let alpha = tightening_margin(&pi_y, &self.cfg.w_p, self.cfg.eps_s)?;
                    let w = (self.cfg.w_p * pi_y) / alpha;
                    let has_pi = w.amax() > 0.0;
                    for (jb, g) in gamma[j].iter().enumerate() {
                        let mut seg = g.tr_mul(&v);
                        if has_pi {
                            for c in 0..NU {
                                seg[c] += v.dot(&(pg[j][jb][c] * w));
                            }
                        }
                        for c in 0..NU {
                            a_qp[(r, NU * jb + c)] = seg[c];
                        }
                    }
                    let mut bound = spec.y_max - alpha - y - v.dot(&c_off[j]);
                    if has_pi {
                        bound -= v.dot(&(pc[j] * w));
                    }
                    u_qp[r] = bound;
                }
            } else {
                // Plain separation row.
                let spec = &self.path_specs[0];
                let y = constraint_value(spec, &xj);
                let v = constraint_state_jacobian(spec, &xj);
                for (jb, g) in gamma[j].iter().enumerate() {
                    let seg = g.tr_mul(&v);
                    for c in 0..NU {
                        a_qp[(base, NU * jb + c)] = seg[c];
                    }
                }
                u_qp[base] = spec.y_max - y - v.dot(&c_off[j]);
                // Two-sided thrust rows.
                for t in 0..2 {
                    let r = base + 1 + t;
                    let idx = 8 + t;
                    for (jb, g) in gamma[j].iter().enumerate() {
                        for c in 0..NU {
                            a_qp[(r, NU * jb + c)] = g[(idx, c)];
                        }
                    }
                    let cur = xj_vec[idx] + c_off[j][idx];
                    l_qp[r] = self.cfg.boxes.f_r_min - cur;
                    u_qp[r] = self.cfg.boxes.f_r_max - cur;
                }
            }
            // Torque rows, identical in both modes.
            let tq_base = base + per_stage - 2;
            for t in 0..2 {
                let r = tq_base + t;
                let idx = 10 + t;
                for (jb, g) in gamma[j].iter().enumerate() {
                    for c in 0..NU {
                        a_qp[(r, NU * jb + c)] = g[(idx, c)];
                    }
                }
                let cur = xj_vec[idx] + c_off[j][idx];
                l_qp[r] = self.cfg.boxes.tau_min - cur;
                u_qp[r] = self.cfg.boxes.tau_max - cur;
            }
        }

        let prob = QpProblem {
            p: h_mat,
            q: grad,
            a: a_qp,
            l: l_qp,
            u: u_qp,
        };
        let mut sol = self.solver.solve(&prob)?;
        if sol.status != QpStatus::Solved {
            // A wedged warm start occasionally stalls the splitting loop
            // where a cold start sails through; one restart is cheap
            // insurance before declaring the sample failed.
            self.solver.reset();
            sol = self.solver.solve(&prob)?;
        }
        if sol.status != QpStatus::Solved {
            return Ok(RtiReport {
                u0: self.last_u0,
                qp_status: sol.status,
                qp_iterations: sol.iterations,
                step_norm: f64::NAN,
                solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
                failed: true,
            });
        }

        // Full step onto the guess.
        let z = &sol.x;
        for i in 0..n {
            let du = seg4(z, i);
            self.traj.inputs[i] = ControlRate::from_vector(&(self.traj.inputs[i].to_vector() + du));
        }
        self.traj.states[0] = *x_meas;
        if tube {
            self.traj.pis[0] = *pi_meas;
        }
        for i in 1..=n {
            let mut dx = c_off[i];
            for (j, g) in gamma[i].iter().enumerate() {
                dx += g * seg4(z, j);
            }
            self.traj.states[i] =
                ExtendedState::from_vector(&(self.traj.states[i].to_vector() + dx));
            if tube {
                let mut dpi = pc[i];
                for (j, blk) in pg[i].iter().enumerate() {
                    for (c, b) in blk.iter().enumerate() {
                        dpi += z[NU * j + c] * b;
                    }
                }
                self.traj.pis[i] += dpi;
            }
        }
        self.last_u0 = self.traj.inputs[0];
        Ok(RtiReport {
            u0: self.last_u0,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            step_norm: z.amax(),
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
            failed: false,
        })
    }

    /// Iterate passes at a fixed measurement until the input correction
    /// stalls below `tol`. Returns the number of passes used.
    pub fn solve_full(
        &mut self,
        x_meas: &ExtendedState,
        pi_meas: &SMatrix<f64, NX, NP>,
        stages: &[ReferencePoint],
        terminal: &ReferencePoint,
        tol: f64,
        max_passes: usize,
    ) -> Result<usize, OcpError> {
        let mut step_norm = f64::INFINITY;
        for pass in 1..=max_passes {
            let rep = self.rti_step(x_meas, pi_meas, stages, terminal)?;
            if rep.failed {
                return Err(OcpError::QpNotSolved(rep.qp_status));
            }
            step_norm = rep.step_norm;
            if step_norm <= tol {
                return Ok(pass);
            }
        }
        Err(OcpError::NotConverged {
            passes: max_passes,
            step_norm,
        })
    }
}

fn seg4(z: &DVector<f64>, j: usize) -> SVector<f64, NU> {
    SVector::from([z[NU * j], z[NU * j + 1], z[NU * j + 2], z[NU * j + 3]])
}

/// H += (Jh G)' diag(q) (Jh G), grad += (Jh G)' diag(q) rho, blockwise
/// over the input-to-state maps of one stage.
fn accumulate_cost<const R: usize>(
    h_mat: &mut DMatrix<f64>,
    grad: &mut DVector<f64>,
    gamma_i: &[SMatrix<f64, NX, NU>],
    jh: &SMatrix<f64, R, NX>,
    q: &SVector<f64, R>,
    rho: &SVector<f64, R>,
) {
    let mb: Vec<SMatrix<f64, R, NU>> = gamma_i.iter().map(|g| jh * g).collect();
    let qrho = q.component_mul(rho);
    let qm: Vec<SMatrix<f64, R, NU>> = mb
        .iter()
        .map(|m| {
            let mut s = *m;
            for r in 0..R {
                let w = q[r];
                for c in 0..NU {
                    s[(r, c)] *= w;
                }
            }
            s
        })
        .collect();
    for j1 in 0..mb.len() {
        let gj = mb[j1].tr_mul(&qrho);
        for c in 0..NU {
            grad[NU * j1 + c] += gj[c];
        }
        for j2 in j1..mb.len() {
            let blk = mb[j1].tr_mul(&qm[j2]);
            for r in 0..NU {
                for c in 0..NU {
                    h_mat[(NU * j1 + r, NU * j2 + c)] += blk[(r, c)];
                }
            }
        }
    }
}
