//! Paired deviation campaigns: every trial draws one deviation vector and
//! runs it through both controllers, so per-trial comparisons are free of
//! sampling noise. Draws happen up front on one thread; trials then fan
//! out over a thread pool when the `parallel` feature is enabled and are
//! merged back in trial order either way.

use nalgebra::SVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{PhysicalParams, NP};
use crate::ocp::ControllerMode;
use crate::sim::{run_trial, SimConfig, SimError, TrialSummary};
use crate::uncertainty::UncertaintySet;

/// Which controller arms a campaign runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CampaignArms {
    Both,
    NominalOnly,
    TubeOnly,
}

#[derive(Clone, Debug)]
pub struct McConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub arms: CampaignArms,
    /// Base trial setup; the controller mode is overridden per arm.
    pub sim: SimConfig,
    pub uncertainty: UncertaintySet,
    /// Classification slack on the signed constraint residuals.
    pub eps_tol: f64,
    /// Thread count override; None uses the pool default. Ignored when
    /// the `parallel` feature is disabled.
    pub workers: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_trials: 100,
            seed: 1,
            arms: CampaignArms::Both,
            sim: SimConfig::default(),
            uncertainty: UncertaintySet::default(),
            eps_tol: 1e-3,
            workers: None,
        }
    }
}

/// Per-trial outcome of one controller arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ArmRecord {
    pub success: bool,
    pub qp_failures: usize,
    pub max_s_delta: f64,
    /// Worst upper-thrust residual over both rods [N].
    pub max_s_fr: f64,
    pub min_f_r: f64,
    /// Worst signed residual over all path constraints and the trial.
    pub max_residual: f64,
    /// Rod-angle tracking RMSE [rad].
    pub rmse_phi: f64,
    pub mean_solve_ms: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrialRecord {
    pub index: usize,
    pub deltas: [f64; NP],
    pub nominal: Option<ArmRecord>,
    pub tube: Option<ArmRecord>,
}

/// Five-point summary (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ArmAggregate {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Tracking RMSE over the successful subset [rad].
    pub rmse_quantiles: Quantiles,
    /// Worst signed residual over all trials.
    pub residual_quantiles: Quantiles,
    pub solve_ms_mean: f64,
    pub solve_ms_quantiles: Quantiles,
}

#[derive(Clone, Debug, Serialize)]
pub struct McReport {
    pub n_trials: usize,
    pub seed: u64,
    pub eps_tol: f64,
    pub records: Vec<TrialRecord>,
    pub nominal: Option<ArmAggregate>,
    pub tube: Option<ArmAggregate>,
    /// Trials where the tube arm's worst residual is no larger than the
    /// nominal arm's (only counted when both arms ran).
    pub paired_ordering_holds: usize,
}

/// Root of the mean square. Empty input gives zero.
pub fn rmse(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Linear-interpolation quantile of unsorted data; NaN when empty.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

pub fn quantiles(values: &[f64]) -> Quantiles {
    Quantiles {
        min: quantile(values, 0.0),
        q25: quantile(values, 0.25),
        median: quantile(values, 0.5),
        q75: quantile(values, 0.75),
        max: quantile(values, 1.0),
    }
}

/// Reduce a trial summary to a pass/fail record against the thrust floor
/// and the classification slack.
pub fn classify_arm(s: &TrialSummary, f_r_min: f64, eps_tol: f64) -> ArmRecord {
    let max_s_fr = s.max_s_fr1.max(s.max_s_fr2);
    let min_f_r = s.min_f_r1.min(s.min_f_r2);
    let lower_residual = (f_r_min - s.min_f_r1).max(f_r_min - s.min_f_r2);
    ArmRecord {
        success: s.qp_failures == 0
            && s.max_s_delta <= eps_tol
            && max_s_fr <= eps_tol
            && min_f_r >= f_r_min - eps_tol,
        qp_failures: s.qp_failures,
        max_s_delta: s.max_s_delta,
        max_s_fr,
        min_f_r,
        max_residual: s.max_s_delta.max(max_s_fr).max(lower_residual),
        rmse_phi: s.rmse_phi,
        mean_solve_ms: s.mean_solve_ms,
    }
}

fn run_pair(
    cfg: &McConfig,
    p0: &PhysicalParams,
    index: usize,
    deltas: &SVector<f64, NP>,
) -> Result<TrialRecord, SimError> {
    let run_arm = |mode: ControllerMode| -> Result<ArmRecord, SimError> {
        let mut sim = cfg.sim.clone();
        sim.ocp.mode = mode;
        let out = run_trial(&sim, p0, deltas)?;
        Ok(classify_arm(&out.summary, sim.ocp.boxes.f_r_min, cfg.eps_tol))
    };
    let nominal = match cfg.arms {
        CampaignArms::Both | CampaignArms::NominalOnly => Some(run_arm(ControllerMode::Nominal)?),
        CampaignArms::TubeOnly => None,
    };
    let tube = match cfg.arms {
        CampaignArms::Both | CampaignArms::TubeOnly => Some(run_arm(ControllerMode::Tube)?),
        CampaignArms::NominalOnly => None,
    };
    Ok(TrialRecord {
        index,
        deltas: (*deltas).into(),
        nominal,
        tube,
    })
}

fn aggregate(records: &[TrialRecord], pick: impl Fn(&TrialRecord) -> Option<ArmRecord>) -> Option<ArmAggregate> {
    let arms: Vec<ArmRecord> = records.iter().filter_map(&pick).collect();
    if arms.is_empty() {
        return None;
    }
    let successes = arms.iter().filter(|a| a.success).count();
    let rmse_ok: Vec<f64> = arms
        .iter()
        .filter(|a| a.success)
        .map(|a| a.rmse_phi)
        .collect();
    let residuals: Vec<f64> = arms.iter().map(|a| a.max_residual).collect();
    let solve_ms: Vec<f64> = arms.iter().map(|a| a.mean_solve_ms).collect();
    Some(ArmAggregate {
        trials: arms.len(),
        successes,
        success_rate: successes as f64 / arms.len() as f64,
        rmse_quantiles: quantiles(&rmse_ok),
        residual_quantiles: quantiles(&residuals),
        solve_ms_mean: solve_ms.iter().sum::<f64>() / solve_ms.len() as f64,
        solve_ms_quantiles: quantiles(&solve_ms),
    })
}

/// Run the campaign and aggregate both arms.
pub fn run_campaign(cfg: &McConfig, p0: &PhysicalParams) -> Result<McReport, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let deltas: Vec<SVector<f64, NP>> = (0..cfg.n_trials)
        .map(|_| cfg.uncertainty.sample(&mut rng))
        .collect();

    let records = run_indexed(cfg, p0, &deltas)?;

    let nominal = aggregate(&records, |r| r.nominal);
    let tube = aggregate(&records, |r| r.tube);
    let paired_ordering_holds = records
        .iter()
        .filter(|r| match (r.tube, r.nominal) {
            (Some(t), Some(n)) => t.max_residual <= n.max_residual + 1e-9,
            _ => false,
        })
        .count();
    Ok(McReport {
        n_trials: cfg.n_trials,
        seed: cfg.seed,
        eps_tol: cfg.eps_tol,
        records,
        nominal,
        tube,
        paired_ordering_holds,
    })
}

#[cfg(feature = "parallel")]
fn run_indexed(
    cfg: &McConfig,
    p0: &PhysicalParams,
    deltas: &[SVector<f64, NP>],
) -> Result<Vec<TrialRecord>, SimError> {
    use rayon::prelude::*;
    let work = || {
        deltas
            .par_iter()
            .enumerate()
            .map(|(i, d)| run_pair(cfg, p0, i, d))
            .collect::<Result<Vec<_>, _>>()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("thread pool")
            .install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_indexed(
    cfg: &McConfig,
    p0: &PhysicalParams,
    deltas: &[SVector<f64, NP>],
) -> Result<Vec<TrialRecord>, SimError> {
    deltas
        .iter()
        .enumerate()
        .map(|(i, d)| run_pair(cfg, p0, i, d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_campaign(n: usize, seed: u64) -> McConfig {
        let mut cfg = McConfig {
            n_trials: n,
            seed,
            ..McConfig::default()
        };
        cfg.sim.t_final = 0.2;
        cfg
    }

    #[test]
    fn rmse_matches_the_pinned_example() {
        assert_abs_diff_eq!(
            rmse(&[3.0, 4.0, 0.0]),
            2.886751345948129,
            epsilon = 1e-15
        );
        assert_eq!(rmse(&[]), 0.0);
    }

    #[test]
    fn quantiles_interpolate_between_order_statistics() {
        let q = quantiles(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(q.min, 1.0);
        assert_abs_diff_eq!(q.q25, 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q.median, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q75, 3.25, epsilon = 1e-15);
        assert_eq!(q.max, 4.0);
        let single = quantiles(&[7.0]);
        assert_eq!(single.min, 7.0);
        assert_eq!(single.median, 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn classification_follows_the_tolerance_rules() {
        let base = TrialSummary {
            qp_failures: 0,
            control_steps: 10,
            max_s_delta: -0.2,
            max_s_fr1: -5.0,
            max_s_fr2: -4.0,
            min_f_r1: 6.0,
            min_f_r2: 7.0,
            rmse_phi: 0.01,
            mean_solve_ms: 1.0,
            max_solve_ms: 2.0,
        };
        let good = classify_arm(&base, 3.0, 1e-3);
        assert!(good.success);
        assert_eq!(good.max_residual, -0.2_f64.max(-4.0).max(3.0 - 6.0));

        let violated = TrialSummary {
            max_s_delta: 0.002,
            ..base
        };
        assert!(!classify_arm(&violated, 3.0, 1e-3).success);
        // Residuals inside the tolerance band still count as success.
        let marginal = TrialSummary {
            max_s_delta: 0.0009,
            ..base
        };
        assert!(classify_arm(&marginal, 3.0, 1e-3).success);
        let failed_qp = TrialSummary {
            qp_failures: 1,
            ..base
        };
        assert!(!classify_arm(&failed_qp, 3.0, 1e-3).success);
        let low_thrust = TrialSummary {
            min_f_r2: 2.99,
            ..base
        };
        assert!(!classify_arm(&low_thrust, 3.0, 1e-3).success);
    }

    #[test]
    fn draws_are_reproducible_and_inside_the_box() {
        let cfg = tiny_campaign(4, 99);
        let p0 = PhysicalParams::default();
        let a = run_campaign(&cfg, &p0).unwrap();
        let b = run_campaign(&cfg, &p0).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.deltas, rb.deltas);
            assert!(cfg
                .uncertainty
                .contains(&SVector::from(ra.deltas)));
        }
        assert_eq!(
            a.nominal.unwrap().success_rate,
            b.nominal.unwrap().success_rate
        );
    }

    #[test]
    fn records_come_back_in_trial_order_with_both_arms() {
        let cfg = tiny_campaign(3, 5);
        let report = run_campaign(&cfg, &PhysicalParams::default()).unwrap();
        assert_eq!(report.records.len(), 3);
        for (i, r) in report.records.iter().enumerate() {
            assert_eq!(r.index, i);
            assert!(r.nominal.is_some() && r.tube.is_some());
            assert!(r.nominal.unwrap().mean_solve_ms > 0.0);
        }
        assert!(report.paired_ordering_holds <= 3);
    }

    #[test]
    fn single_arm_campaigns_skip_the_other_controller() {
        let mut cfg = tiny_campaign(2, 7);
        cfg.arms = CampaignArms::NominalOnly;
        let report = run_campaign(&cfg, &PhysicalParams::default()).unwrap();
        assert!(report.records.iter().all(|r| r.tube.is_none()));
        assert!(report.tube.is_none());
        assert_eq!(report.paired_ordering_holds, 0);
        assert_eq!(report.nominal.unwrap().trials, 2);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn worker_count_does_not_change_the_results() {
        let mut one = tiny_campaign(3, 11);
        one.workers = Some(1);
        let mut two = tiny_campaign(3, 11);
        two.workers = Some(2);
        let p0 = PhysicalParams::default();
        let a = run_campaign(&one, &p0).unwrap();
        let b = run_campaign(&two, &p0).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.deltas, rb.deltas);
            assert_eq!(
                ra.tube.unwrap().max_residual,
                rb.tube.unwrap().max_residual
            );
            assert_eq!(ra.nominal.unwrap().success, rb.nominal.unwrap().success);
        }
    }
}
