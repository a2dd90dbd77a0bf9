//! Text output: trial / reference / campaign CSV and the JSON report.
//!
//! Angle-valued columns are written in degrees (and degrees per second);
//! everything else keeps SI units. Values use `{}` formatting, which for
//! f64 is the shortest string that parses back to the same bits, so a
//! written file can be compared byte-for-byte across runs.

use std::fmt::Write as _;

use crate::monte_carlo::{ArmRecord, McReport, Quantiles, TrialRecord};
use crate::reference::ReferenceTable;
use crate::sim::{status_label, TrialLog};

pub const TRIAL_HEADER: &str = "t,phi1,phi2,th1,th2,dphi1,dphi2,dth1,dth2,\
fR1,fR2,tau1,tau2,ufR1,ufR2,utau1,utau2,phi1_d,phi2_d,fL1,fL2,fL1_d,fL2_d,\
e_phi1,e_phi2,e_fL1,e_fL2,s_delta,s_fR1,s_fR2,alpha_sep,alpha_fR1,alpha_fR2,\
qp_status,qp_time_ms";

pub const REFERENCE_HEADER: &str =
    "t,x_d,z_d,phi1_d,phi2_d,dphi1_d,dphi2_d,ddphi1_d,ddphi2_d,fL1_d,fL2_d";

/// One line per plant step.
pub fn trial_csv(log: &TrialLog) -> String {
    let mut out = String::with_capacity(64 + 256 * log.rows.len());
    out.push_str(TRIAL_HEADER);
    out.push('\n');
    for r in &log.rows {
        let x = &r.x;
        let deg = [
            x.phi1, x.phi2, x.th1, x.th2, x.dphi1, x.dphi2, x.dth1, x.dth2,
        ];
        write!(out, "{}", r.t).unwrap();
        for v in deg {
            write!(out, ",{}", v.to_degrees()).unwrap();
        }
        for v in [x.f_r1, x.f_r2, x.tau1, x.tau2] {
            write!(out, ",{v}").unwrap();
        }
        for v in [r.u.df_r1, r.u.df_r2, r.u.dtau1, r.u.dtau2] {
            write!(out, ",{v}").unwrap();
        }
        write!(
            out,
            ",{},{}",
            r.phi_d[0].to_degrees(),
            r.phi_d[1].to_degrees()
        )
        .unwrap();
        for v in [r.fl[0], r.fl[1], r.fl_d[0], r.fl_d[1]] {
            write!(out, ",{v}").unwrap();
        }
        write!(
            out,
            ",{},{}",
            r.e_phi[0].to_degrees(),
            r.e_phi[1].to_degrees()
        )
        .unwrap();
        for v in [
            r.e_fl[0], r.e_fl[1], r.s_delta, r.s_fr[0], r.s_fr[1], r.alpha[0], r.alpha[1],
            r.alpha[2],
        ] {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{}", status_label(r.qp_status), r.qp_time_ms).unwrap();
    }
    out
}

/// Dense reference table, one line per sample.
pub fn reference_csv(table: &ReferenceTable) -> String {
    let mut out = String::with_capacity(64 + 128 * table.rows.len());
    out.push_str(REFERENCE_HEADER);
    out.push('\n');
    for r in &table.rows {
        let p = &r.point;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.pos.x,
            r.pos.z,
            p.phi_d[0].to_degrees(),
            p.phi_d[1].to_degrees(),
            p.dphi_d[0].to_degrees(),
            p.dphi_d[1].to_degrees(),
            p.ddphi_d[0].to_degrees(),
            p.ddphi_d[1].to_degrees(),
            p.fl_d[0],
            p.fl_d[1],
        )
        .unwrap();
    }
    out
}

pub const RECORDS_HEADER: &str = "index,d_m1,d_m2,d_l1,d_l2,d_J1,d_J2,\
nominal_success,nominal_qp_failures,nominal_max_s_delta,nominal_max_s_fr,\
nominal_min_f_r,nominal_max_residual,nominal_rmse_phi,nominal_mean_solve_ms,\
tube_success,tube_qp_failures,tube_max_s_delta,tube_max_s_fr,tube_min_f_r,\
tube_max_residual,tube_rmse_phi,tube_mean_solve_ms";

fn push_arm(out: &mut String, arm: Option<&ArmRecord>) {
    match arm {
        Some(a) => write!(
            out,
            ",{},{},{},{},{},{},{},{}",
            u8::from(a.success),
            a.qp_failures,
            a.max_s_delta,
            a.max_s_fr,
            a.min_f_r,
            a.max_residual,
            a.rmse_phi,
            a.mean_solve_ms,
        )
        .unwrap(),
        // Arm not run: leave its fields empty.
        None => out.push_str(&",".repeat(8)),
    }
}

/// Per-trial campaign records; arms that did not run leave empty fields.
pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 + 256 * records.len());
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for rec in records {
        write!(out, "{}", rec.index).unwrap();
        for d in rec.deltas {
            write!(out, ",{d}").unwrap();
        }
        push_arm(&mut out, rec.nominal.as_ref());
        push_arm(&mut out, rec.tube.as_ref());
        out.push('\n');
    }
    out
}

/// Campaign summary as pretty-printed JSON (trailing newline included).
pub fn report_json(report: &McReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    s.push('\n');
    s
}

fn push_quantiles(out: &mut String, arm: &str, metric: &str, q: &Quantiles) {
    writeln!(
        out,
        "{arm},{metric},{},{},{},{},{}",
        q.min, q.q25, q.median, q.q75, q.max
    )
    .unwrap();
}

/// Five-point summaries per arm and metric. `rmse_phi` covers the
/// successful subset only; the other metrics cover every trial.
pub fn quantiles_csv(report: &McReport) -> String {
    let mut out = String::from("arm,metric,min,q25,median,q75,max\n");
    for (name, agg) in [("nominal", &report.nominal), ("tube", &report.tube)] {
        if let Some(a) = agg {
            push_quantiles(&mut out, name, "rmse_phi", &a.rmse_quantiles);
            push_quantiles(&mut out, name, "max_residual", &a.residual_quantiles);
            push_quantiles(&mut out, name, "solve_ms", &a.solve_ms_quantiles);
        }
    }
    out
}
