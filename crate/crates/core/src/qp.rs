//! Dense convex QP solver for the condensed subproblems.
//!
//! minimize 0.5 x'Px + q'x  subject to  l <= Ax <= u
//!
//! Operator-splitting method: alternate an equality-regularized linear
//! solve with a projection onto the box, plus a scaled dual update.
//! Problem data are Ruiz-equilibrated first; the step weight rho adapts
//! to the primal/dual residual ratio; an active-set polish sharpens the
//! returned point. The normal-matrix Cholesky factor is cached between
//! iterations and only rebuilt when rho changes.
//!
//! A brute-force active-set enumeration solver is included for
//! cross-checking on small problems; the two routes are kept independent
//! on purpose.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Bound magnitude treated as "no bound" on that side.
pub const INFINITY_BOUND: f64 = 1e20;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row}: lower bound {lower} exceeds upper bound {upper}")]
    InvalidBounds { row: usize, lower: f64, upper: f64 },
    #[error("problem data contain non-finite entries")]
    NonFiniteData,
    #[error("normal matrix is not positive definite")]
    FactorizationFailed,
}

/// Problem data; P must be symmetric positive semidefinite.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "P is {}x{}, expected {n}x{n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.a.nrows() != m || self.a.ncols() != n || self.u.len() != m {
            return Err(QpError::DimensionMismatch(format!(
                "A is {}x{} with {m} lower / {} upper bounds for n = {n}",
                self.a.nrows(),
                self.a.ncols(),
                self.u.len()
            )));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.p.as_slice())
            || !finite(self.q.as_slice())
            || !finite(self.a.as_slice())
            || !finite(self.l.as_slice())
            || !finite(self.u.as_slice())
        {
            return Err(QpError::NonFiniteData);
        }
        for row in 0..m {
            if self.l[row] > self.u[row] {
                return Err(QpError::InvalidBounds {
                    row,
                    lower: self.l[row],
                    upper: self.u[row],
                });
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.q.dot(x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub max_iter: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Proximal weight on the x update.
    pub sigma: f64,
    /// Initial constraint step weight.
    pub rho0: f64,
    /// Residual / rho-adaptation cadence [iterations].
    pub check_every: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iter: 4000,
            tol_abs: 1e-8,
            tol_rel: 1e-8,
            sigma: 1e-6,
            rho0: 0.1,
            check_every: 25,
            polish: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint values Ax at the returned point.
    pub z: DVector<f64>,
    /// Multipliers; positive entries push against upper bounds.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Ruiz row/column equilibration of [P A'; A 0] plus cost normalization.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn equilibrate(
    p: &mut DMatrix<f64>,
    q: &mut DVector<f64>,
    a: &mut DMatrix<f64>,
    l: &mut DVector<f64>,
    u: &mut DVector<f64>,
) -> Scaling {
    let n = q.len();
    let m = l.len();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    let lim = |v: f64| -> f64 {
        if v < 1e-8 {
            1.0
        } else {
            1.0 / v.clamp(1e-4, 1e4).sqrt()
        }
    };
    for _ in 0..10 {
        // Column scaling over the stacked [P; A] block.
        let mut delta = DVector::from_element(n, 1.0);
        for j in 0..n {
            let cp = p.column(j).amax();
            let ca = if m > 0 { a.column(j).amax() } else { 0.0 };
            delta[j] = lim(cp.max(ca));
        }
        // Row scaling of A (the A' block columns).
        let mut eps = DVector::from_element(m, 1.0);
        for i in 0..m {
            eps[i] = lim(a.row(i).amax());
        }
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= delta[i] * delta[j];
            }
            q[j] *= delta[j];
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= eps[i] * delta[j];
            }
            // Sentinel bounds stay sentinels under scaling.
            if l[i] > -INFINITY_BOUND {
                l[i] *= eps[i];
            }
            if u[i] < INFINITY_BOUND {
                u[i] *= eps[i];
            }
        }
        d.component_mul_assign(&delta);
        e.component_mul_assign(&eps);

        // Cost normalization.
        let mean_col = if n > 0 {
            (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let g = mean_col.max(q.amax());
        let gamma = if g < 1e-8 { 1.0 } else { 1.0 / g.clamp(1e-4, 1e4) };
        *p *= gamma;
        *q *= gamma;
        c *= gamma;
    }
    Scaling { d, e, c }
}

/// Nonzero pattern of each constraint row, reused when rebuilding A'A.
fn row_patterns(a: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..a.nrows())
        .map(|i| {
            (0..a.ncols())
                .filter(|&j| a[(i, j)] != 0.0)
                .map(|j| (j, a[(i, j)]))
                .collect()
        })
        .collect()
}

/// kkt = P + sigma I + rho A'A, accumulated row by row so that sparse
/// selector rows (the input-box block) cost almost nothing.
fn build_normal_matrix(
    p: &DMatrix<f64>,
    patterns: &[Vec<(usize, f64)>],
    sigma: f64,
    rho: f64,
) -> DMatrix<f64> {
    let n = p.ncols();
    let mut kkt = p.clone();
    for j in 0..n {
        kkt[(j, j)] += sigma;
    }
    for pat in patterns {
        for (ai, &(i, vi)) in pat.iter().enumerate() {
            for &(j, vj) in &pat[ai..] {
                kkt[(i, j)] += rho * vi * vj;
            }
        }
    }
    // Only the upper triangle was accumulated; mirror it.
    for i in 0..n {
        for j in 0..i {
            kkt[(i, j)] = kkt[(j, i)];
        }
    }
    kkt
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    /// Residuals as multiples of their own tolerance, used for the rho
    /// update; balancing these drives both sides under tolerance together
    /// even when the primal and dual data scales are far apart.
    prim_rel: f64,
    dual_rel: f64,
}

/// Warm-startable solver; keeps the previous solution in unscaled form
/// and reuses it when the next problem has the same dimensions.
pub struct QpSolver {
    pub settings: QpSettings,
    warm: Option<(DVector<f64>, DVector<f64>, DVector<f64>)>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        QpSolver {
            settings,
            warm: None,
        }
    }

    /// Drop the stored warm start.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, prob: &QpProblem) -> Result<QpSolution, QpError> {
        prob.validate()?;
        let n = prob.q.len();
        let m = prob.l.len();
        let s = self.settings;

        let mut p = prob.p.clone();
        let mut q = prob.q.clone();
        let mut a = prob.a.clone();
        let mut l = prob.l.clone();
        let mut u = prob.u.clone();
        let sc = equilibrate(&mut p, &mut q, &mut a, &mut l, &mut u);
        let patterns = row_patterns(&a);

        // Scale the warm start into the equilibrated space, or start cold.
        let (mut x, mut z, mut y) = match &self.warm {
            Some((wx, wz, wy)) if wx.len() == n && wy.len() == m => (
                wx.component_div(&sc.d),
                wz.component_mul(&sc.e),
                sc.c * wy.component_div(&sc.e),
            ),
            _ => (
                DVector::zeros(n),
                DVector::zeros(m),
                DVector::zeros(m),
            ),
        };

        let mut rho = s.rho0;
        let mut chol = nalgebra::Cholesky::new(build_normal_matrix(&p, &patterns, s.sigma, rho))
            .ok_or(QpError::FactorizationFailed)?;

        // Over-relaxation factor; dampens the oscillatory modes that
        // otherwise stall the splitting iteration on degenerate rows.
        const ALPHA: f64 = 1.6;

        let mut x_prev = x.clone();
        let mut y_prev = y.clone();
        let mut rhs = DVector::zeros(n);
        let mut ax = DVector::zeros(m);
        let mut converged = false;
        let mut certified = false;
        let mut status = QpStatus::MaxIterations;
        let mut iterations = s.max_iter;
        let mut next_attempt = 0usize;
        let mut attempt_gap = s.check_every;
        let mut res = Residuals {
            prim: f64::INFINITY,
            dual: f64::INFINITY,
            eps_prim: 0.0,
            eps_dual: 0.0,
            prim_rel: 1.0,
            dual_rel: 1.0,
        };

        for iter in 1..=s.max_iter {
            // rhs = sigma x - q + A'(rho z - y)
            rhs.copy_from(&q);
            rhs.neg_mut();
            rhs.axpy(s.sigma, &x, 1.0);
            for (i, pat) in patterns.iter().enumerate() {
                let w = rho * z[i] - y[i];
                for &(j, v) in pat {
                    rhs[j] += v * w;
                }
            }
            chol.solve_mut(&mut rhs);
            a.mul_to(&rhs, &mut ax);
            for j in 0..n {
                x[j] = ALPHA * rhs[j] + (1.0 - ALPHA) * x[j];
            }
            for i in 0..m {
                let v = ALPHA * ax[i] + (1.0 - ALPHA) * z[i];
                let zi = (v + y[i] / rho).clamp(l[i], u[i]);
                y[i] += rho * (v - zi);
                z[i] = zi;
            }

            if iter % s.check_every == 0 || iter == s.max_iter {
                res = residuals(&p, &q, &a, &x, &z, &y, &sc, s.tol_abs, s.tol_rel);
                if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                    converged = true;
                    iterations = iter;
                    break;
                }
                // The residual tail crawls on badly conditioned curvature.
                // Once the iterate is in the right neighborhood, an exact
                // active-set solve that meets the tolerances certifies
                // optimality on its own; take it rather than grinding the
                // splitting loop to the floor.
                if s.polish
                    && iter >= next_attempt
                    && res.prim <= 1e4 * res.eps_prim
                    && res.dual <= 1e4 * res.eps_dual
                {
                    let mut landed = false;
                    if let Some((px, pz, py)) = polish(&p, &q, &a, &l, &u, &z) {
                        let pres =
                            residuals(&p, &q, &a, &px, &pz, &py, &sc, s.tol_abs, s.tol_rel);
                        if pres.prim <= pres.eps_prim && pres.dual <= pres.eps_dual {
                            x = px;
                            z = pz;
                            y = py;
                            res = pres;
                            converged = true;
                            certified = true;
                            iterations = iter;
                            landed = true;
                        }
                    }
                    if landed {
                        break;
                    }
                    // Back off after a miss so repeated repair attempts on a
                    // stubborn active set cannot dominate the solve time.
                    attempt_gap *= 2;
                    next_attempt = iter + attempt_gap;
                }
                let dy = &y - &y_prev;
                let dx = &x - &x_prev;
                if primal_infeasible(&a, &l, &u, &dy, &sc) {
                    status = QpStatus::PrimalInfeasible;
                    iterations = iter;
                    break;
                }
                if dual_infeasible(&p, &q, &a, &l, &u, &dx, &sc) {
                    status = QpStatus::DualInfeasible;
                    iterations = iter;
                    break;
                }
                x_prev.copy_from(&x);
                y_prev.copy_from(&y);

                // Rebalance rho toward equal normalized residuals.
                let ratio = (res.prim_rel / res.dual_rel.max(1e-16)).sqrt();
                let candidate = (rho * ratio).clamp(1e-6, 1e6);
                if candidate > 5.0 * rho || candidate < rho / 5.0 {
                    rho = candidate;
                    chol = nalgebra::Cholesky::new(build_normal_matrix(
                        &p, &patterns, s.sigma, rho,
                    ))
                    .ok_or(QpError::FactorizationFailed)?;
                }
            }
        }

        if matches!(
            status,
            QpStatus::PrimalInfeasible | QpStatus::DualInfeasible
        ) {
            self.warm = None;
            return Ok(QpSolution {
                x: x.component_mul(&sc.d),
                z: z.component_div(&sc.e),
                y: y.component_mul(&sc.e) / sc.c,
                status,
                iterations,
                primal_residual: res.prim,
                dual_residual: res.dual,
                objective: f64::NAN,
            });
        }

        if s.polish && !certified {
            if let Some((px, pz, py)) = polish(&p, &q, &a, &l, &u, &z) {
                let pres = residuals(&p, &q, &a, &px, &pz, &py, &sc, s.tol_abs, s.tol_rel);
                // After convergence the polish must not lose ground; after a
                // stall it stands on its own residual certificate.
                let accept = if converged {
                    pres.prim.max(pres.dual) <= res.prim.max(res.dual)
                } else {
                    pres.prim <= pres.eps_prim && pres.dual <= pres.eps_dual
                };
                if accept {
                    x = px;
                    z = pz;
                    y = py;
                    res = pres;
                    converged = true;
                }
            }
        }
        if converged {
            status = QpStatus::Solved;
        }

        let xu = x.component_mul(&sc.d);
        let zu = z.component_div(&sc.e);
        let yu = y.component_mul(&sc.e) / sc.c;
        self.warm = Some((xu.clone(), zu.clone(), yu.clone()));
        let objective = prob.objective(&xu);
        Ok(QpSolution {
            x: xu,
            z: zu,
            y: yu,
            status,
            iterations,
            primal_residual: res.prim,
            dual_residual: res.dual,
            objective,
        })
    }
}

/// Unscaled residual norms from scaled iterates.
#[allow(clippy::too_many_arguments)]
fn residuals(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    sc: &Scaling,
    tol_abs: f64,
    tol_rel: f64,
) -> Residuals {
    let m = z.len();
    let n = x.len();
    let ax = a * x;
    let px = p * x;
    let aty = a.tr_mul(y);

    let mut prim = 0.0_f64;
    let mut ax_norm = 0.0_f64;
    let mut z_norm = 0.0_f64;
    for i in 0..m {
        let inv_e = 1.0 / sc.e[i];
        prim = prim.max(((ax[i] - z[i]) * inv_e).abs());
        ax_norm = ax_norm.max((ax[i] * inv_e).abs());
        z_norm = z_norm.max((z[i] * inv_e).abs());
    }
    let mut dual = 0.0_f64;
    let mut px_norm = 0.0_f64;
    let mut aty_norm = 0.0_f64;
    let mut q_norm = 0.0_f64;
    let inv_c = 1.0 / sc.c;
    for j in 0..n {
        let w = inv_c / sc.d[j];
        dual = dual.max(((px[j] + q[j] + aty[j]) * w).abs());
        px_norm = px_norm.max((px[j] * w).abs());
        aty_norm = aty_norm.max((aty[j] * w).abs());
        q_norm = q_norm.max((q[j] * w).abs());
    }
    let prim_den = ax_norm.max(z_norm);
    let dual_den = px_norm.max(aty_norm).max(q_norm);
    let eps_prim = tol_abs + tol_rel * prim_den;
    let eps_dual = tol_abs + tol_rel * dual_den;
    Residuals {
        prim,
        dual,
        eps_prim,
        eps_dual,
        prim_rel: prim / eps_prim,
        dual_rel: dual / eps_dual,
    }
}

const EPS_INFEASIBLE: f64 = 1e-6;

/// Certificate check: a dual direction with A'dy ~ 0 whose support
/// function on the box is negative proves there is no feasible point.
fn primal_infeasible(
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
    sc: &Scaling,
) -> bool {
    let m = dy.len();
    let mut norm = 0.0_f64;
    for i in 0..m {
        norm = norm.max((dy[i] * sc.e[i] / sc.c).abs());
    }
    if norm <= 1e-12 {
        return false;
    }
    let aty = a.tr_mul(dy);
    let mut aty_norm = 0.0_f64;
    for j in 0..aty.len() {
        aty_norm = aty_norm.max((aty[j] / (sc.c * sc.d[j])).abs());
    }
    if aty_norm > EPS_INFEASIBLE * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        let v = dy[i] * sc.e[i] / sc.c;
        // Unscale the bounds for the support function.
        let (li, ui) = (l[i] / sc.e[i], u[i] / sc.e[i]);
        support += ui * v.max(0.0) + li * v.min(0.0);
    }
    support < -EPS_INFEASIBLE * norm
}

/// Certificate check: a primal ray with P dx ~ 0, q'dx < 0 that stays
/// feasible in every bounded row direction proves an unbounded objective.
#[allow(clippy::too_many_arguments)]
fn dual_infeasible(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dx: &DVector<f64>,
    sc: &Scaling,
) -> bool {
    let n = dx.len();
    let mut norm = 0.0_f64;
    for j in 0..n {
        norm = norm.max((dx[j] * sc.d[j]).abs());
    }
    if norm <= 1e-12 {
        return false;
    }
    let qdx = q.dot(dx) / sc.c;
    if qdx >= -EPS_INFEASIBLE * norm {
        return false;
    }
    let pdx = p * dx;
    for j in 0..n {
        if (pdx[j] / (sc.c * sc.d[j])).abs() > EPS_INFEASIBLE * norm {
            return false;
        }
    }
    let adx = a * dx;
    for i in 0..adx.len() {
        let v = adx[i] / sc.e[i];
        if u[i] < INFINITY_BOUND && v > EPS_INFEASIBLE * norm {
            return false;
        }
        if l[i] > -INFINITY_BOUND && v < -EPS_INFEASIBLE * norm {
            return false;
        }
    }
    true
}

/// Solve the KKT system restricted to one candidate active set, with light
/// regularization and iterative refinement. Returns the primal part and the
/// multipliers of the pinned rows.
fn active_set_solve(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    rows: &[usize],
    bounds: &[f64],
) -> Option<(DVector<f64>, Vec<f64>)> {
    const REG: f64 = 1e-9;
    let n = q.len();
    let k = rows.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    for j in 0..n {
        kkt[(j, j)] += REG;
    }
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(i, j)];
            kkt[(j, n + r)] = a[(i, j)];
        }
        kkt[(n + r, n + r)] = -REG;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -q[j];
    }
    for r in 0..k {
        rhs[n + r] = bounds[r];
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // Refine against the unregularized system.
    for _ in 0..3 {
        let mut r = rhs.clone();
        // r -= K0 * sol with K0 lacking the diagonal regularization.
        let mut k0s = &kkt * &sol;
        for j in 0..n {
            k0s[j] -= REG * sol[j];
        }
        for rr in 0..k {
            k0s[n + rr] += REG * sol[n + rr];
        }
        r -= k0s;
        if let Some(corr) = lu.solve(&r) {
            sol += corr;
        } else {
            break;
        }
    }
    let x = DVector::from_iterator(n, (0..n).map(|j| sol[j]));
    let mults = (0..k).map(|r| sol[n + r]).collect();
    Some((x, mults))
}

/// Re-solve the KKT system restricted to the rows the iterate marks active,
/// then repair the guess: rows whose recomputed multiplier contradicts their
/// pinned bound are released, rows the solution pushes past a bound are
/// pinned, and the reduced system is solved again. Gives up when the set
/// will not settle.
fn polish(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    const SIGN_TOL: f64 = 1e-8;
    const FEAS_TOL: f64 = 1e-9;
    let m = z.len();
    // The projection writes the bound itself into z whenever it clamps, so
    // bit-exact equality reads off the rows the iterate treats as active.
    // -1 free, 0 pinned at the lower bound, 1 pinned at the upper.
    let mut side = vec![-1i8; m];
    for i in 0..m {
        if l[i] > -INFINITY_BOUND && z[i] == l[i] {
            side[i] = 0;
        } else if u[i] < INFINITY_BOUND && z[i] == u[i] {
            side[i] = 1;
        }
    }
    for _round in 0..30 {
        let rows: Vec<usize> = (0..m).filter(|&i| side[i] >= 0).collect();
        let bounds: Vec<f64> = rows
            .iter()
            .map(|&i| if side[i] == 0 { l[i] } else { u[i] })
            .collect();
        let (x, mults) = active_set_solve(p, q, a, &rows, &bounds)?;
        let mut dirty = false;
        // Release only the worst-signed row per round; releasing a whole
        // degenerate cluster at once makes the set oscillate.
        let mut worst: Option<(f64, usize)> = None;
        for (r, &i) in rows.iter().enumerate() {
            let s = side[i];
            let bad = if s == 0 { mults[r] } else { -mults[r] };
            if bad > SIGN_TOL && worst.map_or(true, |(w, _)| bad > w) {
                worst = Some((bad, i));
            }
        }
        if let Some((_, i)) = worst {
            side[i] = -1;
            dirty = true;
        }
        let ax = a * &x;
        for i in 0..m {
            if side[i] >= 0 {
                continue;
            }
            if l[i] > -INFINITY_BOUND && ax[i] < l[i] - FEAS_TOL {
                side[i] = 0;
                dirty = true;
            } else if u[i] < INFINITY_BOUND && ax[i] > u[i] + FEAS_TOL {
                side[i] = 1;
                dirty = true;
            }
        }
        if !dirty {
            let mut yp = DVector::zeros(m);
            for (r, &i) in rows.iter().enumerate() {
                yp[i] = mults[r];
            }
            // Clamp so any residual bound violation shows up as primal
            // residual rather than hiding in z.
            let mut z = ax;
            for i in 0..m {
                z[i] = z[i].clamp(l[i], u[i]);
            }
            return Some((x, z, yp));
        }
    }
    None
}

/// Exhaustive reference solver for small strictly convex problems.
///
/// Enumerates candidate active sets (each constraint inactive, at its
/// lower, or at its upper bound) in order of increasing cardinality,
/// solves the equality-constrained KKT system, and returns the first
/// point that is primal feasible with correctly signed multipliers.
/// Exponential in the row count; intended for tests with m <= 12.
pub fn solve_by_enumeration(prob: &QpProblem, tol: f64) -> Option<DVector<f64>> {
    let n = prob.q.len();
    let m = prob.l.len();
    let chol = nalgebra::Cholesky::new(prob.p.clone())?;

    // side: 0 = at lower, 1 = at upper, for the chosen subset.
    let mut best: Option<(f64, DVector<f64>)> = None;
    for card in 0..=m.min(n) {
        let mut subset: Vec<usize> = (0..card).collect();
        loop {
            for mask in 0..(1_u32 << card) {
                let sides: Vec<u8> = (0..card).map(|b| ((mask >> b) & 1) as u8).collect();
                if let Some(x) = kkt_candidate(prob, &chol, &subset, &sides, tol) {
                    let obj = prob.objective(&x);
                    if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                        best = Some((obj, x));
                    }
                }
            }
            // Next k-subset in lexicographic order.
            if card == 0 {
                break;
            }
            let mut advanced = false;
            let mut i = card;
            while i > 0 {
                i -= 1;
                if subset[i] != i + m - card {
                    subset[i] += 1;
                    for j in i + 1..card {
                        subset[j] = subset[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
        if best.is_some() {
            // The optimum of a strictly convex QP is unique; the first
            // cardinality level producing a valid KKT point wins.
            break;
        }
    }
    best.map(|(_, x)| x)
}

fn kkt_candidate(
    prob: &QpProblem,
    chol_p: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    subset: &[usize],
    sides: &[u8],
    tol: f64,
) -> Option<DVector<f64>> {
    let n = prob.q.len();
    let k = subset.len();
    let x = if k == 0 {
        chol_p.solve(&(-&prob.q))
    } else {
        let mut g = DMatrix::zeros(k, n);
        let mut b = DVector::zeros(k);
        for (r, (&i, &s)) in subset.iter().zip(sides).enumerate() {
            let bound = if s == 0 { prob.l[i] } else { prob.u[i] };
            if bound.abs() >= INFINITY_BOUND {
                // A row cannot be active at a sentinel bound.
                return None;
            }
            g.row_mut(r).copy_from(&prob.a.row(i));
            b[r] = bound;
        }
        // Range-space solve: (G P^-1 G') nu = -(G P^-1 q + b); x = -P^-1(q + G'nu).
        let pig = chol_p.solve(&g.transpose());
        let s_lu = (&g * &pig).lu();
        let piq = chol_p.solve(&prob.q);
        let rhs = -(&g * &piq) - &b;
        let nu = s_lu.solve(&rhs)?;
        // Stationarity is P x + q + G' nu = 0, so nu matches the solver's
        // dual sign: lower-active rows need nu <= 0, upper-active nu >= 0.
        for (r, &s) in sides.iter().enumerate() {
            if s == 0 && nu[r] > tol {
                return None;
            }
            if s == 1 && nu[r] < -tol {
                return None;
            }
        }
        let mut x = -(&piq + &pig * &nu);
        // One refinement pass keeps the equality rows tight.
        let r = &b - &g * &x;
        if r.amax() > tol * 1e-2 {
            let corr = s_lu.solve(&r)?;
            x += &pig * corr;
        }
        Some(x)?
    };
    for i in 0..prob.l.len() {
        let v = prob.a.row(i).dot(&x.transpose());
        if v < prob.l[i] - tol || v > prob.u[i] + tol {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(prob: &QpProblem) -> QpSolution {
        QpSolver::new(QpSettings::default()).solve(prob).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &r.transpose() * &r + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for i in 0..m {
            let c = rng.random_range(-0.5..0.5);
            let w = rng.random_range(0.05..1.0);
            match rng.random_range(0..4) {
                0 => {
                    l[i] = -INFINITY_BOUND;
                    u[i] = c + w;
                }
                1 => {
                    l[i] = c - w;
                    u[i] = INFINITY_BOUND;
                }
                _ => {
                    l[i] = c - w;
                    u[i] = c + w;
                }
            }
        }
        QpProblem { p, q, a, l, u }
    }

    #[test]
    fn unconstrained_minimum_matches_the_linear_solve() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_row_slice(&[1.0, 1.0]);
        let prob = QpProblem {
            p: p.clone(),
            q: q.clone(),
            a: DMatrix::zeros(0, 2),
            l: DVector::zeros(0),
            u: DVector::zeros(0),
        };
        let sol = solve(&prob);
        assert_eq!(sol.status, QpStatus::Solved);
        let expect = p.lu().solve(&(-q)).unwrap();
        assert_abs_diff_eq!(sol.x[0], expect[0], epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], expect[1], epsilon = 1e-8);
    }

    #[test]
    fn active_box_clips_the_unconstrained_minimum() {
        // min 0.5(x1^2 + x2^2) - 2 x1 - 2 x2 s.t. 0 <= x <= 1: both at upper.
        let prob = QpProblem {
            p: DMatrix::identity(2, 2),
            q: DVector::from_row_slice(&[-2.0, -2.0]),
            a: DMatrix::identity(2, 2),
            l: DVector::from_row_slice(&[0.0, 0.0]),
            u: DVector::from_row_slice(&[1.0, 1.0]),
        };
        let sol = solve(&prob);
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-8);
        // Multipliers keep the stationarity balance x + q + y = 0.
        assert_abs_diff_eq!(sol.y[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.y[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn equality_rows_are_honored() {
        // min 0.5||x||^2 - x1 s.t. x1 + x2 = 1 -> x = (1, 0) by symmetry+KKT.
        let prob = QpProblem {
            p: DMatrix::identity(2, 2),
            q: DVector::from_row_slice(&[-1.0, 0.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            l: DVector::from_row_slice(&[1.0]),
            u: DVector::from_row_slice(&[1.0]),
        };
        let sol = solve(&prob);
        assert_eq!(sol.status, QpStatus::Solved);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn contradictory_rows_are_reported_primal_infeasible() {
        // x >= 1 and x <= 0 cannot both hold.
        let prob = QpProblem {
            p: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            a: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            l: DVector::from_row_slice(&[1.0, -INFINITY_BOUND]),
            u: DVector::from_row_slice(&[INFINITY_BOUND, 0.0]),
        };
        let sol = solve(&prob);
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn descent_ray_is_reported_dual_infeasible() {
        // Zero curvature along a direction with negative slope and no bound:
        // min x with only x <= 0 recedes to -infinity.
        let prob = QpProblem {
            p: DMatrix::zeros(1, 1),
            q: DVector::from_row_slice(&[1.0]),
            a: DMatrix::from_row_slice(1, 1, &[1.0]),
            l: DVector::from_row_slice(&[-INFINITY_BOUND]),
            u: DVector::from_row_slice(&[0.0]),
        };
        let mut solver = QpSolver::new(QpSettings {
            sigma: 1e-6,
            ..QpSettings::default()
        });
        let sol = solver.solve(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn bad_dimensions_and_crossed_bounds_are_rejected() {
        let good = QpProblem {
            p: DMatrix::identity(2, 2),
            q: DVector::zeros(2),
            a: DMatrix::identity(2, 2),
            l: DVector::from_row_slice(&[0.0, 0.0]),
            u: DVector::from_row_slice(&[1.0, 1.0]),
        };
        let mut bad = good.clone();
        bad.q = DVector::zeros(3);
        assert!(matches!(
            QpSolver::new(QpSettings::default()).solve(&bad),
            Err(QpError::DimensionMismatch(_))
        ));
        let mut crossed = good.clone();
        crossed.l[1] = 2.0;
        assert!(matches!(
            QpSolver::new(QpSettings::default()).solve(&crossed),
            Err(QpError::InvalidBounds { row: 1, .. })
        ));
        let mut nan = good;
        nan.p[(0, 0)] = f64::NAN;
        assert!(matches!(
            QpSolver::new(QpSettings::default()).solve(&nan),
            Err(QpError::NonFiniteData)
        ));
    }

    #[test]
    fn solutions_are_invariant_to_uniform_data_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prob = random_problem(&mut rng, 5, 8);
        let mut scaled = prob.clone();
        scaled.p *= 1e4;
        scaled.q *= 1e4;
        let a = solve(&prob);
        let b = solve(&scaled);
        assert_eq!(a.status, QpStatus::Solved);
        assert_eq!(b.status, QpStatus::Solved);
        for j in 0..5 {
            assert_abs_diff_eq!(a.x[j], b.x[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn repeated_solves_are_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let prob = random_problem(&mut rng, 6, 9);
        let a = QpSolver::new(QpSettings::default()).solve(&prob).unwrap();
        let b = QpSolver::new(QpSettings::default()).solve(&prob).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn warm_start_speeds_up_a_nearby_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let prob = random_problem(&mut rng, 8, 12);
        let mut solver = QpSolver::new(QpSettings::default());
        let cold = solver.solve(&prob).unwrap();
        assert_eq!(cold.status, QpStatus::Solved);
        let mut shifted = prob.clone();
        shifted.q *= 1.01;
        let warm = solver.solve(&shifted).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(
            warm.iterations <= cold.iterations,
            "warm {} vs cold {}",
            warm.iterations,
            cold.iterations
        );
    }

    #[test]
    fn enumeration_reference_agrees_on_a_pencil_and_paper_case() {
        // min 0.5||x - (2,0)||^2 s.t. x1 <= 1 -> x = (1, 0).
        let prob = QpProblem {
            p: DMatrix::identity(2, 2),
            q: DVector::from_row_slice(&[-2.0, 0.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            l: DVector::from_row_slice(&[-INFINITY_BOUND]),
            u: DVector::from_row_slice(&[1.0]),
        };
        let x = solve_by_enumeration(&prob, 1e-9).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn splitting_and_enumeration_agree_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let mut solved = 0;
        for _ in 0..60 {
            let n = rng.random_range(2..=6);
            let m = rng.random_range(1..=8);
            let prob = random_problem(&mut rng, n, m);
            let Some(reference) = solve_by_enumeration(&prob, 1e-9) else {
                continue; // infeasible draw
            };
            let sol = solve(&prob);
            assert_eq!(sol.status, QpStatus::Solved);
            for j in 0..n {
                assert_abs_diff_eq!(sol.x[j], reference[j], epsilon = 1e-6);
            }
            solved += 1;
        }
        assert!(solved >= 40, "only {solved} comparable draws");
    }

    #[test]
    fn sentinel_bounds_do_not_disturb_conditioning() {
        // A single binding row among many vacuous ones.
        let n = 3;
        let mut a = DMatrix::zeros(5, n);
        a.row_mut(0).copy_from_slice(&[1.0, 1.0, 1.0]);
        for i in 1..5 {
            a[(i, i % n)] = 1.0;
        }
        let prob = QpProblem {
            p: DMatrix::identity(n, n) * 2.0,
            q: DVector::from_row_slice(&[-2.0, -2.0, -2.0]),
            a,
            l: DVector::from_row_slice(&[
                -INFINITY_BOUND,
                -INFINITY_BOUND,
                -INFINITY_BOUND,
                -INFINITY_BOUND,
                -INFINITY_BOUND,
            ]),
            u: DVector::from_row_slice(&[
                1.5,
                INFINITY_BOUND,
                INFINITY_BOUND,
                INFINITY_BOUND,
                INFINITY_BOUND,
            ]),
        };
        let sol = solve(&prob);
        assert_eq!(sol.status, QpStatus::Solved);
        for j in 0..n {
            assert_abs_diff_eq!(sol.x[j], 0.5, epsilon = 1e-7);
        }
    }
}
