//! Built-in self checks: physics identities, derivative consistency, and
//! solver cross-validation, runnable from the command line.
//!
//! The energy suite integrates whatever vector field it is handed, so a
//! deliberately corrupted field (e.g. flipped gravity) can be injected to
//! confirm the checks have teeth. The other suites always test the real
//! model.

use nalgebra::{DMatrix, DVector, SVector, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{
    accelerations, apply_deviations, bias_terms, forward_kinematics, generalized_thrust,
    link_stresses, mass_matrix, total_energy, vector_field, ControlRate, ExtendedState,
    PhysicalParams, NP, NU, NX,
};
use crate::qp::{solve_by_enumeration, QpProblem, QpSettings, QpSolver, QpStatus};
use crate::reference::{two_link_ik, IkBranch, ReferenceError};
use crate::sensitivity::{
    augmented_rhs, jacobian_fp, jacobian_fu, jacobian_fx, rk4_step, step_state, AugmentedState,
};

pub const SUITE_NAMES: [&str; 5] = ["energy", "jacobians", "newton", "qp", "ik"];

/// Continuous dynamics used by the energy suite.
pub type VectorField<'a> =
    dyn Fn(&ExtendedState, &ControlRate, &PhysicalParams) -> SVector<f64, NX> + 'a;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("unknown check suite `{0}`")]
    UnknownSuite(String),
    #[error("no check suites selected")]
    NoSuites,
}

/// Run the named suites in the order given. Fails fast on a name typo so
/// a partial run is never mistaken for a clean one.
pub fn run_suites(names: &[&str], vf: &VectorField) -> Result<Vec<CheckReport>, CheckError> {
    if names.is_empty() {
        return Err(CheckError::NoSuites);
    }
    let mut reports = Vec::new();
    for name in names {
        match *name {
            "energy" => energy_suite(vf, &mut reports),
            "jacobians" => jacobian_suite(&mut reports),
            "newton" => newton_suite(&mut reports),
            "qp" => qp_suite(&mut reports),
            "ik" => ik_suite(&mut reports),
            other => return Err(CheckError::UnknownSuite(other.to_string())),
        }
    }
    Ok(reports)
}

fn random_state(rng: &mut impl Rng) -> ExtendedState {
    ExtendedState {
        phi1: rng.random_range(0.2..2.9),
        phi2: rng.random_range(0.2..2.9),
        th1: rng.random_range(-0.5..0.5),
        th2: rng.random_range(-0.5..0.5),
        dphi1: rng.random_range(-2.0..2.0),
        dphi2: rng.random_range(-2.0..2.0),
        dth1: rng.random_range(-3.0..3.0),
        dth2: rng.random_range(-3.0..3.0),
        f_r1: rng.random_range(3.0..20.0),
        f_r2: rng.random_range(3.0..20.0),
        tau1: rng.random_range(-5.0..5.0),
        tau2: rng.random_range(-5.0..5.0),
    }
}

/// Power delivered by thrust and tilt torques [W].
fn injected_power(x: &ExtendedState, p: &PhysicalParams) -> f64 {
    let phi = Vector2::new(x.phi1, x.phi2);
    let theta = Vector2::new(x.th1, x.th2);
    let f_r = Vector2::new(x.f_r1, x.f_r2);
    let dphi = Vector2::new(x.dphi1, x.dphi2);
    dphi.dot(&generalized_thrust(&phi, &theta, &f_r, p)) + x.dth1 * x.tau1 + x.dth2 * x.tau2
}

fn integrate(
    vf: &VectorField,
    x0: &ExtendedState,
    u: &ControlRate,
    p: &PhysicalParams,
    dt: f64,
    steps: usize,
    mut visit: impl FnMut(&ExtendedState),
) -> ExtendedState {
    let mut v = x0.to_vector();
    visit(x0);
    for _ in 0..steps {
        v = rk4_step(
            |s, uu| vf(&ExtendedState::from_vector(s), uu, p),
            &v,
            u,
            dt,
        );
        visit(&ExtendedState::from_vector(&v));
    }
    ExtendedState::from_vector(&v)
}

fn energy_suite(vf: &VectorField, reports: &mut Vec<CheckReport>) {
    let p = PhysicalParams::default();
    let dt = 1e-4;

    // Unforced swing: total energy must be conserved.
    let x0 = ExtendedState {
        phi1: 1.2,
        phi2: 1.9,
        th1: 0.05,
        th2: -0.03,
        dphi1: 0.3,
        dphi2: -0.2,
        dth1: 0.4,
        dth2: -0.2,
        ..ExtendedState::default()
    };
    let e0 = total_energy(&x0, &p);
    let mut drift = 0.0_f64;
    integrate(vf, &x0, &ControlRate::default(), &p, dt, 20_000, |x| {
        drift = drift.max((total_energy(x, &p) - e0).abs());
    });
    let rel = drift / e0.abs().max(1.0);
    reports.push(CheckReport {
        suite: "energy",
        name: "unforced_conservation",
        passed: rel <= 1e-6,
        detail: format!("relative drift {rel:.3e} over 2 s (tol 1e-6)"),
    });

    // With actuation the energy gain must equal the injected work.
    let x0 = ExtendedState {
        f_r1: 6.0,
        f_r2: 9.0,
        tau1: 0.4,
        tau2: -0.3,
        ..x0
    };
    let u = ControlRate {
        df_r1: 5.0,
        df_r2: -4.0,
        dtau1: 1.5,
        dtau2: -1.0,
    };
    let mut power = Vec::with_capacity(10_001);
    let xf = integrate(vf, &x0, &u, &p, dt, 10_000, |x| {
        power.push(injected_power(x, &p));
    });
    let work = dt * (power.iter().sum::<f64>() - 0.5 * (power[0] + power[power.len() - 1]));
    let delta_e = total_energy(&xf, &p) - total_energy(&x0, &p);
    let rel = (delta_e - work).abs() / delta_e.abs().max(1.0);
    reports.push(CheckReport {
        suite: "energy",
        name: "work_energy_balance",
        passed: rel <= 1e-6,
        detail: format!(
            "energy gain {delta_e:.6} J vs work {work:.6} J, mismatch {rel:.3e} (tol 1e-6)"
        ),
    });
}

fn jacobian_suite(reports: &mut Vec<CheckReport>) {
    let p = PhysicalParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a63);
    let u = ControlRate::default();
    let h = 1e-6;

    let mut worst_fx = 0.0_f64;
    let mut worst_fp = 0.0_f64;
    let mut worst_fu = 0.0_f64;
    for _ in 0..20 {
        let x = random_state(&mut rng);
        let v = x.to_vector();

        let fx = jacobian_fx(&x, &p);
        let scale = fx.amax().max(1.0);
        for c in 0..NX {
            let hc = h * v[c].abs().max(1.0);
            let mut vp = v;
            let mut vm = v;
            vp[c] += hc;
            vm[c] -= hc;
            let col = (vector_field(&ExtendedState::from_vector(&vp), &u, &p)
                - vector_field(&ExtendedState::from_vector(&vm), &u, &p))
                / (2.0 * hc);
            worst_fx = worst_fx.max((col - fx.column(c)).amax() / scale);
        }

        let fp = jacobian_fp(&x, &p);
        let scale = fp.amax().max(1.0);
        for c in 0..NP {
            let mut dp = SVector::<f64, NP>::zeros();
            dp[c] = h;
            let pp = apply_deviations(&p, &dp).unwrap();
            dp[c] = -h;
            let pm = apply_deviations(&p, &dp).unwrap();
            let col = (vector_field(&x, &u, &pp) - vector_field(&x, &u, &pm)) / (2.0 * h);
            worst_fp = worst_fp.max((col - fp.column(c)).amax() / scale);
        }

        let fu = jacobian_fu();
        for c in 0..NU {
            let mut up = u.to_vector();
            let mut um = u.to_vector();
            up[c] += h;
            um[c] -= h;
            let col = (vector_field(&x, &ControlRate::from_vector(&up), &p)
                - vector_field(&x, &ControlRate::from_vector(&um), &p))
                / (2.0 * h);
            worst_fu = worst_fu.max((col - fu.column(c)).amax());
        }
    }
    reports.push(CheckReport {
        suite: "jacobians",
        name: "state_jacobian_fd",
        passed: worst_fx <= 1e-6,
        detail: format!("worst scaled deviation {worst_fx:.3e} over 20 states (tol 1e-6)"),
    });
    reports.push(CheckReport {
        suite: "jacobians",
        name: "parameter_jacobian_fd",
        passed: worst_fp <= 1e-6,
        detail: format!("worst scaled deviation {worst_fp:.3e} over 20 states (tol 1e-6)"),
    });
    reports.push(CheckReport {
        suite: "jacobians",
        name: "input_jacobian_fd",
        passed: worst_fu <= 1e-9,
        detail: format!("worst deviation {worst_fu:.3e} (tol 1e-9)"),
    });

    // Propagated sensitivity must predict the effect of a small parameter
    // deviation on a 0.5 s rollout.
    let x0 = random_state(&mut rng);
    let u = ControlRate {
        df_r1: 2.0,
        df_r2: -1.5,
        dtau1: 0.8,
        dtau2: -0.4,
    };
    let ts = 0.01;
    let mut aug = AugmentedState::from_state(x0).to_vector();
    for _ in 0..50 {
        aug = rk4_step(|s, uu| augmented_rhs(s, uu, &p), &aug, &u, ts);
    }
    let aug = AugmentedState::from_vector(&aug);

    let delta = 1e-4 * SVector::<f64, NP>::from([1.0, -1.0, 0.5, -0.5, 0.8, -0.8]);
    let rollout = |pd: &PhysicalParams| {
        let mut x = x0;
        for _ in 0..50 {
            x = step_state(&x, &u, pd, ts);
        }
        x.to_vector()
    };
    let plus = rollout(&apply_deviations(&p, &delta).unwrap());
    let minus = rollout(&apply_deviations(&p, &(-delta)).unwrap());
    let fd = (plus - minus) / 2.0;
    let predicted = aug.pi * delta;
    let err = (fd - predicted).norm() / (1.0 + predicted.norm());
    reports.push(CheckReport {
        suite: "jacobians",
        name: "trajectory_sensitivity",
        passed: err <= 1e-6,
        detail: format!("sensitivity vs finite differences {err:.3e} (tol 1e-6)"),
    });
}

fn newton_suite(reports: &mut Vec<CheckReport>) {
    let p = PhysicalParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e77);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let x = random_state(&mut rng);
        let (ddphi, ddth) = accelerations(&x, &p);
        let phi = Vector2::new(x.phi1, x.phi2);
        let dphi = Vector2::new(x.dphi1, x.dphi2);
        let theta = Vector2::new(x.th1, x.th2);
        let f_r = Vector2::new(x.f_r1, x.f_r2);
        let rod = mass_matrix(x.phi1, x.phi2, &p) * ddphi + bias_terms(&phi, &dphi, &p)
            - generalized_thrust(&phi, &theta, &f_r, &p);
        let tilt = Vector2::new(p.j1 * ddth[0] - x.tau1, p.j2 * ddth[1] - x.tau2);
        worst = worst.max(rod.amax()).max(tilt.amax());
        // Stresses must stay finite wherever the dynamics are defined.
        let fl = link_stresses(&x, &p);
        if !fl[0].is_finite() || !fl[1].is_finite() {
            worst = f64::INFINITY;
        }
    }
    reports.push(CheckReport {
        suite: "newton",
        name: "force_balance",
        passed: worst <= 1e-9,
        detail: format!("worst residual {worst:.3e} N over 1000 states (tol 1e-9)"),
    });
}

fn qp_suite(reports: &mut Vec<CheckReport>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7170);
    let mut worst = 0.0_f64;
    let mut compared = 0;
    let mut infeasible_agreed = 0;
    let mut disagreements = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=8);
        let l = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let mid = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let half = DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
        let prob = QpProblem {
            p,
            q,
            a,
            l: &mid - &half,
            u: &mid + &half,
        };
        let mut solver = QpSolver::new(QpSettings::default());
        let sol = solver.solve(&prob).unwrap();
        // Random boxes over more rows than variables are empty often enough
        // that both verdicts get exercised: the splitting solver must agree
        // with the enumerator on optimum and emptiness alike.
        match (sol.status, solve_by_enumeration(&prob, 1e-9)) {
            (QpStatus::Solved, Some(exact)) => {
                worst = worst.max((&sol.x - &exact).amax());
                compared += 1;
            }
            (QpStatus::PrimalInfeasible, None) => infeasible_agreed += 1,
            _ => disagreements += 1,
        }
    }
    let passed = disagreements == 0 && compared >= 30 && infeasible_agreed >= 1 && worst <= 1e-6;
    reports.push(CheckReport {
        suite: "qp",
        name: "splitting_vs_enumeration",
        passed,
        detail: format!(
            "{compared} optima cross-checked, worst gap {worst:.3e} (tol 1e-6), \
             {infeasible_agreed} empty polytopes agreed, {disagreements} disagreements"
        ),
    });
}

fn ik_suite(reports: &mut Vec<CheckReport>) {
    let p = PhysicalParams::default();
    let eps_r = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(0x696b);
    let mut worst = 0.0_f64;
    for _ in 0..300 {
        let rho = rng.random_range((p.l1 - p.l2).abs() + eps_r..p.l1 + p.l2 - eps_r);
        let ang = rng.random_range(0.0..std::f64::consts::PI);
        let target = crate::dynamics::PlanarVec::new(rho * ang.cos(), rho * ang.sin());
        for branch in [IkBranch::PositiveBend, IkBranch::NegativeBend] {
            let (phi1, phi2) = two_link_ik(target, &p, branch, eps_r).unwrap();
            let (_, tip) = forward_kinematics(phi1, phi2, &p);
            worst = worst
                .max((tip.x - target.x).abs())
                .max((tip.z - target.z).abs());
        }
    }
    reports.push(CheckReport {
        suite: "ik",
        name: "round_trip",
        passed: worst <= 1e-10,
        detail: format!("worst tip error {worst:.3e} m over 600 solves (tol 1e-10)"),
    });

    let far = crate::dynamics::PlanarVec::new(3.0, 0.0);
    // Equal rod lengths fold back to the origin, so only the eps_r floor
    // bounds the annulus from below.
    let near = crate::dynamics::PlanarVec::new(0.0, 0.01);
    let guard = matches!(
        two_link_ik(far, &p, IkBranch::PositiveBend, eps_r),
        Err(ReferenceError::Unreachable { .. })
    ) && matches!(
        two_link_ik(near, &p, IkBranch::PositiveBend, eps_r),
        Err(ReferenceError::Unreachable { .. })
    );
    reports.push(CheckReport {
        suite: "ik",
        name: "workspace_guard",
        passed: guard,
        detail: String::from("targets outside the reachable annulus are rejected"),
    });
}
