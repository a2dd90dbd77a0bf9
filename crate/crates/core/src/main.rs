//! Command-line driver: single trials, Monte-Carlo campaigns, reference
//! generation, and the built-in self checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::SVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tube_nmpc::checks::{run_suites, SUITE_NAMES};
use tube_nmpc::config::RunConfig;
use tube_nmpc::dynamics::{vector_field, ControlRate, ExtendedState, PhysicalParams, NP};
use tube_nmpc::monte_carlo::{classify_arm, run_campaign, CampaignArms};
use tube_nmpc::ocp::ControllerMode;
use tube_nmpc::reference::ReferenceTable;
use tube_nmpc::sim::run_trial;
use tube_nmpc::textio;

#[derive(Parser)]
#[command(
    name = "tube-nmpc",
    version,
    about = "Tube NMPC for a planar two-vehicle rigid-link aerial chain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Nominal,
    Tube,
}

impl From<ModeArg> for ControllerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nominal => ControllerMode::Nominal,
            ModeArg::Tube => ControllerMode::Tube,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArmsArg {
    Both,
    Nominal,
    Tube,
}

impl From<ArmsArg> for CampaignArms {
    fn from(a: ArmsArg) -> Self {
        match a {
            ArmsArg::Both => CampaignArms::Both,
            ArmsArg::Nominal => CampaignArms::NominalOnly,
            ArmsArg::Tube => CampaignArms::TubeOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial and write the log as CSV.
    Simulate {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Tube)]
        mode: ModeArg,
        /// Relative parameter deviations m1,m2,l1,l2,J1,J2 for the plant.
        #[arg(long, num_args = 6, value_delimiter = ',', allow_hyphen_values = true,
              conflicts_with = "seed")]
        p: Option<Vec<f64>>,
        /// Draw the plant deviations from the uncertainty set instead.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trial.csv")]
        out: PathBuf,
    },
    /// Run a paired Monte-Carlo campaign over the uncertainty set.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which controller arms to run per sampled plant.
        #[arg(long, value_enum, default_value_t = ArmsArg::Both)]
        mode: ArmsArg,
        /// Override the configured trial count.
        #[arg(long)]
        nsim: Option<usize>,
        /// Override the configured campaign seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "campaign_out")]
        out_dir: PathBuf,
    },
    /// Write the dense reference table as CSV.
    Reference {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "reference.csv")]
        out: PathBuf,
    },
    /// Run built-in self checks.
    Check {
        /// Comma-separated suite names (default: all).
        #[arg(long, value_delimiter = ',',
              default_values_t = SUITE_NAMES.map(String::from))]
        suite: Vec<String>,
        /// Corrupt the integrated dynamics to prove the checks can fail.
        #[arg(long)]
        flip_gravity: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn simulate(
    config: Option<PathBuf>,
    mode: ModeArg,
    p: Option<Vec<f64>>,
    seed: Option<u64>,
    out: PathBuf,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = load_config(config.as_deref())?;
    let p0 = cfg.params()?;
    let sim = cfg.sim_config(mode.into())?;
    let deltas: SVector<f64, NP> = match (p, seed) {
        (Some(vals), _) => SVector::from_iterator(vals),
        (None, Some(s)) => cfg
            .uncertainty_set()?
            .sample(&mut ChaCha8Rng::seed_from_u64(s)),
        (None, None) => SVector::zeros(),
    };

    let trial = run_trial(&sim, &p0, &deltas)?;
    std::fs::write(&out, textio::trial_csv(&trial.log))?;

    let rec = classify_arm(&trial.summary, sim.ocp.boxes.f_r_min, cfg.campaign.tolerance);
    println!(
        "wrote {} ({} rows, {:?} mode, deltas {})",
        out.display(),
        trial.log.rows.len(),
        mode,
        join(deltas.iter().copied()),
    );
    println!(
        "qp failures {} | max separation residual {:.3e} | max thrust residual {:.3e} N | \
         min thrust {:.3} N | angle rmse {:.4} deg",
        rec.qp_failures,
        rec.max_s_delta,
        rec.max_s_fr,
        rec.min_f_r,
        rec.rmse_phi.to_degrees(),
    );
    println!(
        "classification: {}",
        if rec.success {
            "success"
        } else {
            "constraints violated or solver failed"
        }
    );
    // A completed trial is a valid result either way.
    Ok(ExitCode::SUCCESS)
}

fn montecarlo(
    config: Option<PathBuf>,
    mode: ArmsArg,
    nsim: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    out_dir: PathBuf,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = load_config(config.as_deref())?;
    let mut mc = cfg.mc_config(mode.into())?;
    if let Some(n) = nsim {
        mc.n_trials = n;
    }
    if let Some(s) = seed {
        mc.seed = s;
    }
    mc.workers = workers;

    let report = run_campaign(&mc, &cfg.params()?)?;

    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("records.csv"), textio::records_csv(&report.records))?;
    std::fs::write(out_dir.join("report.json"), textio::report_json(&report))?;
    std::fs::write(out_dir.join("quantiles.csv"), textio::quantiles_csv(&report))?;

    for (label, agg) in [("nominal", &report.nominal), ("tube", &report.tube)] {
        if let Some(a) = agg {
            println!(
                "{label}: {}/{} trials succeeded ({:.1}%), median worst residual {:.3e}, \
                 mean solve {:.2} ms",
                a.successes,
                a.trials,
                100.0 * a.success_rate,
                a.residual_quantiles.median,
                a.solve_ms_mean,
            );
        }
    }
    if report.nominal.is_some() && report.tube.is_some() {
        println!(
            "tube at least as safe as nominal in {}/{} paired trials",
            report.paired_ordering_holds, report.n_trials
        );
    }
    println!(
        "wrote {}/{{records.csv, report.json, quantiles.csv}}",
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn reference(
    config: Option<PathBuf>,
    out: PathBuf,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = load_config(config.as_deref())?;
    let table = ReferenceTable::build(
        &cfg.ellipse(),
        &cfg.params()?,
        cfg.reference.stress,
        cfg.simulation.plant_dt,
    )?;
    std::fs::write(&out, textio::reference_csv(&table))?;
    println!("wrote {} ({} rows)", out.display(), table.rows.len());
    Ok(ExitCode::SUCCESS)
}

fn check(suite: Vec<String>, flip_gravity: bool) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let names: Vec<&str> = suite
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        eprintln!(
            "error: no check suites selected (available: {})",
            SUITE_NAMES.join(", ")
        );
        return Ok(ExitCode::from(2));
    }

    let plain = |x: &ExtendedState, u: &ControlRate, p: &PhysicalParams| vector_field(x, u, p);
    let flipped = |x: &ExtendedState, u: &ControlRate, p: &PhysicalParams| {
        let mut bad = *p;
        bad.g = -bad.g;
        vector_field(x, u, &bad)
    };
    let reports = if flip_gravity {
        run_suites(&names, &flipped)?
    } else {
        run_suites(&names, &plain)?
    };

    let mut all_passed = true;
    for r in &reports {
        println!(
            "[{}] {}/{}: {}",
            if r.passed { "pass" } else { "FAIL" },
            r.suite,
            r.name,
            r.detail
        );
        all_passed &= r.passed;
    }
    if all_passed {
        println!("all {} checks passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            mode,
            p,
            seed,
            out,
        } => simulate(config, mode, p, seed, out),
        Command::Montecarlo {
            config,
            mode,
            nsim,
            seed,
            workers,
            out_dir,
        } => montecarlo(config, mode, nsim, seed, workers, out_dir),
        Command::Reference { config, out } => reference(config, out),
        Command::Check {
            suite,
            flip_gravity,
        } => check(suite, flip_gravity),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
