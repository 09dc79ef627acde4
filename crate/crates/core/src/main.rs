//! Command-line front end: scenario generation, stage-1 updating, stage-2
//! identification, regularizer comparison and report emission.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 numerical non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sensid::bayes_opt::OptBudget;
use sensid::bayes_update::{run_model_update, HyperPriors, UpdateSettings};
use sensid::bench_sim::{make_scenario, synth_measurements, Scenario, ScenarioOverrides, Stage};
use sensid::model::ParameterVector;
use sensid::report::{
    config_hash, read_json, relative_l2_error, write_compare_csv, write_damage_csv, write_json,
    write_posterior_csv, write_trace_csv, CompareReport, DamageReport, MeasurementFile,
    PosteriorReport, Provenance,
};
use sensid::sensitivity::Betas;
use sensid::sparse_id::{
    compare_regularizers, run_damage_id, DamageSettings, LassoConfig, ThresholdStrategy,
};
use sensid::{Result, SensidError};

#[derive(Parser)]
#[command(name = "sensid", version, about = "Two-stage model updating and sparse damage identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic intact/damaged measurement files for a scenario
    Generate(CommonOpts),
    /// Stage 1: update the intact baseline from the intact measurements
    Update(CommonOpts),
    /// Stage 2: localize and quantify sparse damage from the damaged
    /// measurements, starting at the stage-1 baseline
    Identify(CommonOpts),
    /// Solve the damaged sensitivity problem with STLS, LASSO and ridge at
    /// an exact intact baseline and tabulate the errors
    Compare(CommonOpts),
    /// Run generate, update, identify and compare in sequence
    Full(CommonOpts),
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Benchmark scenario name (shear10 or truss31)
    #[arg(long, default_value = "shear10")]
    scenario: String,

    /// Master seed for data generation and all solvers
    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Output directory for all artifacts
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,

    /// Override the scenario noise level (fraction, e.g. 0.10)
    #[arg(long)]
    noise: Option<f64>,

    /// Override the number of measurement sets
    #[arg(long)]
    n_obs: Option<usize>,

    /// Override the number of identified modes
    #[arg(long)]
    n_modes: Option<usize>,

    /// Eigenvalue residue weight
    #[arg(long, default_value_t = 1.0)]
    beta_lambda: f64,

    /// Shape residue weight
    #[arg(long, default_value_t = 1.0)]
    beta_phi: f64,

    /// Inverse-Gamma shape for the noise variance prior
    #[arg(long, default_value_t = 1.0)]
    a0: f64,

    /// Inverse-Gamma scale for the noise variance prior
    #[arg(long, default_value_t = 1e-4)]
    b0: f64,

    /// Inverse-Gamma shape for the parameter prior variance
    #[arg(long, default_value_t = 1.0)]
    a1: f64,

    /// Inverse-Gamma scale for the parameter prior variance
    #[arg(long, default_value_t = 1e-4)]
    b1: f64,

    /// Lower STLS threshold bound
    #[arg(long, default_value_t = 0.01)]
    lambda_min: f64,

    /// Upper STLS threshold bound
    #[arg(long, default_value_t = 1.0)]
    lambda_max: f64,

    /// Outer-loop relative convergence tolerance
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,

    /// Repeated-trial mode: run N seeded trials concurrently (full only)
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

impl CommonOpts {
    fn overrides(&self) -> ScenarioOverrides {
        ScenarioOverrides {
            noise_level: self.noise,
            n_observations: self.n_obs,
            n_modes: self.n_modes,
            ..Default::default()
        }
    }

    fn betas(&self) -> Betas {
        Betas {
            beta_lambda: self.beta_lambda,
            beta_phi: self.beta_phi,
        }
    }

    fn update_settings(&self) -> UpdateSettings {
        UpdateSettings {
            betas: self.betas(),
            hyperpriors: HyperPriors {
                a0: self.a0,
                b0: self.b0,
                a1: self.a1,
                b1: self.b1,
            },
            outer_tol: self.tol,
            seed: self.seed,
            ..UpdateSettings::default()
        }
    }

    fn budget(&self) -> OptBudget {
        OptBudget {
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            ..OptBudget::default()
        }
    }

    fn damage_settings(&self) -> DamageSettings {
        DamageSettings {
            betas: self.betas(),
            strategy: ThresholdStrategy::BayesOpt(self.budget()),
            outer_tol: self.tol,
            seed: self.seed,
            ..DamageSettings::default()
        }
    }

    fn with_out(&self, out: PathBuf, seed: u64) -> Self {
        let mut c = self.clone();
        c.out = out;
        c.seed = seed;
        c
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(opts) => cmd_generate(opts).map(|_| 0),
        Command::Update(opts) => cmd_update(opts),
        Command::Identify(opts) => cmd_identify(opts),
        Command::Compare(opts) => cmd_compare(opts).map(|_| 0),
        Command::Full(opts) => cmd_full(opts),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &SensidError) -> u8 {
    match err {
        SensidError::Io(_)
        | SensidError::Serde(_)
        | SensidError::UnknownScenario(_)
        | SensidError::InvalidInput(_)
        | SensidError::InvalidDefinition(_)
        | SensidError::UndefinedGrid(_)
        | SensidError::Dimension(_) => 2,
        _ => 3,
    }
}

fn load_scenario(dir: &Path) -> Result<Scenario> {
    read_json(&dir.join("scenario.json"))
}

fn load_measurements(dir: &Path, stage: Stage) -> Result<MeasurementFile> {
    let name = match stage {
        Stage::Intact => "measurements_intact.json",
        Stage::Damaged => "measurements_damaged.json",
    };
    read_json(&dir.join(name))
}

fn cmd_generate(opts: &CommonOpts) -> Result<()> {
    let scenario = make_scenario(&opts.scenario, opts.seed, opts.overrides())?;
    let hash = config_hash(&scenario);
    std::fs::create_dir_all(&opts.out)?;
    write_json(&opts.out.join("scenario.json"), &scenario)?;
    for stage in [Stage::Intact, Stage::Damaged] {
        let sets = synth_measurements(&scenario, stage)?;
        let file = MeasurementFile::new(&scenario, stage, &sets, hash.clone());
        let name = match stage {
            Stage::Intact => "measurements_intact.json",
            Stage::Damaged => "measurements_damaged.json",
        };
        write_json(&opts.out.join(name), &file)?;
    }
    println!("generated scenario `{}` (seed {}) into {}", scenario.name, opts.seed, opts.out.display());
    Ok(())
}

fn cmd_update(opts: &CommonOpts) -> Result<u8> {
    let scenario = load_scenario(&opts.out)?;
    let measurements = load_measurements(&opts.out, Stage::Intact)?;
    let sets = measurements.to_modal_sets()?;
    let sys = scenario.model.assemble()?;
    let settings = opts.update_settings();
    let estimate = run_model_update(&sys, &sets, &settings)?;

    let truth: Vec<f64> = scenario.theta_intact_true.0.iter().cloned().collect();
    let provenance = Provenance::new(&scenario.name, opts.seed, None, config_hash(&settings));
    let report = PosteriorReport::new(&estimate, &settings, provenance, Some(&truth));
    write_json(&opts.out.join("posterior_report.json"), &report)?;
    write_posterior_csv(&opts.out.join("posterior_report.csv"), &report)?;
    println!(
        "stage 1 {} in {} iterations (truth error inf {:.3e})",
        if estimate.converged { "converged" } else { "did NOT converge" },
        estimate.history.len(),
        report.truth_error_inf.unwrap_or(f64::NAN),
    );
    Ok(if estimate.converged { 0 } else { 3 })
}

fn cmd_identify(opts: &CommonOpts) -> Result<u8> {
    let scenario = load_scenario(&opts.out)?;
    let posterior: PosteriorReport = read_json(&opts.out.join("posterior_report.json"))?;
    let measurements = load_measurements(&opts.out, Stage::Damaged)?;
    let sets = measurements.to_modal_sets()?;
    let sys = scenario.model.assemble()?;
    let baseline = ParameterVector::from_slice(&posterior.theta_hat);
    let settings = opts.damage_settings();
    let result = run_damage_id(&sys, &baseline, &sets, &settings)?;

    let provenance = Provenance::new(&scenario.name, opts.seed, None, config_hash(&settings.lasso));
    let report = DamageReport::new(&result, provenance);
    write_json(&opts.out.join("damage_report.json"), &report)?;
    write_damage_csv(&opts.out.join("damage_report.csv"), &report)?;
    let traces: Vec<(usize, &sensid::bayes_opt::BayesOptTrace)> = result
        .history
        .iter()
        .enumerate()
        .filter_map(|(k, h)| h.bo_trace.as_ref().map(|t| (k + 1, t)))
        .collect();
    write_trace_csv(&opts.out.join("opt_trace.csv"), &traces)?;
    println!(
        "stage 2 {}: support {:?} (1-based), {} iterations",
        if result.converged { "converged" } else { "did NOT converge" },
        report.support,
        result.history.len(),
    );
    Ok(if result.converged { 0 } else { 3 })
}

fn cmd_compare(opts: &CommonOpts) -> Result<CompareReport> {
    let scenario = load_scenario(&opts.out)?;
    let measurements = load_measurements(&opts.out, Stage::Damaged)?;
    let sets = measurements.to_modal_sets()?;
    let sys = scenario.model.assemble()?;
    let comparison = compare_regularizers(
        &sys,
        &scenario.theta_intact_true,
        &sets,
        &opts.budget(),
        &LassoConfig::default(),
        0.001,
        opts.seed,
    )?;
    let provenance = Provenance::new(&scenario.name, opts.seed, None, config_hash(&scenario));
    let report = CompareReport::new(&comparison, &scenario.theta_dmg_true.0, provenance);
    write_json(&opts.out.join("compare.json"), &report)?;
    write_compare_csv(&opts.out.join("compare.csv"), &report)?;
    println!(
        "compare: relative l2 errors stls {:.3} lasso {:.3} ridge {:.3}",
        report.error_stls, report.error_lasso, report.error_ridge
    );
    Ok(report)
}

/// Per-trial metrics aggregated by repeated-trial mode.
#[derive(serde::Serialize, serde::Deserialize, Clone, Debug)]
struct TrialMetrics {
    seed: u64,
    stage1_correlation: f64,
    stage1_coverage: f64,
    stage1_converged: bool,
    damage_support: Vec<usize>,
    damage_support_hit: bool,
    damage_max_false_positive: f64,
    damage_converged: bool,
    compare_error_stls: f64,
    compare_error_lasso: f64,
    compare_error_ridge: f64,
}

#[derive(serde::Serialize, Clone, Debug)]
struct TrialsSummary {
    n_trials: usize,
    median_stage1_correlation: f64,
    mean_stage1_coverage: f64,
    damage_support_hit_rate: f64,
    compare_ordering_rate: f64,
    median_compare_error_stls: f64,
    trials: Vec<TrialMetrics>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt()).max(1e-300)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_one_trial(opts: &CommonOpts) -> Result<TrialMetrics> {
    cmd_generate(opts)?;
    let update_code = cmd_update(opts)?;
    let identify_code = cmd_identify(opts)?;
    let compare = cmd_compare(opts)?;

    let scenario = load_scenario(&opts.out)?;
    let posterior: PosteriorReport = read_json(&opts.out.join("posterior_report.json"))?;
    let damage: DamageReport = read_json(&opts.out.join("damage_report.json"))?;

    let truth: Vec<f64> = scenario.theta_intact_true.0.iter().cloned().collect();
    let covered = truth
        .iter()
        .zip(&posterior.per_param)
        .filter(|(t, p)| (p.mean - **t).abs() <= 1.96 * p.std)
        .count();
    let true_support: Vec<usize> = scenario
        .theta_dmg_true
        .0
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i + 1)
        .collect();
    let support_hit = true_support.iter().all(|i| damage.support.contains(i));
    let max_fp = damage
        .theta_dmg
        .iter()
        .enumerate()
        .filter(|(i, _)| !true_support.contains(&(i + 1)))
        .map(|(_, v)| v.abs())
        .fold(0.0f64, f64::max);

    Ok(TrialMetrics {
        seed: opts.seed,
        stage1_correlation: pearson(&posterior.theta_hat, &truth),
        stage1_coverage: covered as f64 / truth.len() as f64,
        stage1_converged: update_code == 0,
        damage_support: damage.support.clone(),
        damage_support_hit: support_hit,
        damage_max_false_positive: max_fp,
        damage_converged: identify_code == 0,
        compare_error_stls: compare.error_stls,
        compare_error_lasso: compare.error_lasso,
        compare_error_ridge: compare.error_ridge,
    })
}

fn cmd_full(opts: &CommonOpts) -> Result<u8> {
    if opts.trials <= 1 {
        cmd_generate(opts)?;
        let u = cmd_update(opts)?;
        let i = cmd_identify(opts)?;
        cmd_compare(opts)?;
        return Ok(u.max(i));
    }
    let trial_opts: Vec<CommonOpts> = (0..opts.trials)
        .map(|t| {
            opts.with_out(
                opts.out.join(format!("trial_{t:03}")),
                opts.seed + t as u64,
            )
        })
        .collect();
    let results: Vec<Result<TrialMetrics>> =
        trial_opts.par_iter().map(run_one_trial).collect();
    let mut trials = Vec::with_capacity(results.len());
    for r in results {
        trials.push(r?);
    }

    let mut corrs: Vec<f64> = trials.iter().map(|t| t.stage1_correlation).collect();
    let mut stls_errs: Vec<f64> = trials.iter().map(|t| t.compare_error_stls).collect();
    let ordering = trials
        .iter()
        .filter(|t| {
            t.compare_error_stls < t.compare_error_lasso
                && t.compare_error_lasso < t.compare_error_ridge
        })
        .count();
    let summary = TrialsSummary {
        n_trials: trials.len(),
        median_stage1_correlation: median(&mut corrs),
        mean_stage1_coverage: trials.iter().map(|t| t.stage1_coverage).sum::<f64>()
            / trials.len() as f64,
        damage_support_hit_rate: trials.iter().filter(|t| t.damage_support_hit).count() as f64
            / trials.len() as f64,
        compare_ordering_rate: ordering as f64 / trials.len() as f64,
        median_compare_error_stls: median(&mut stls_errs),
        trials,
    };
    write_json(&opts.out.join("trials_summary.json"), &summary)?;
    println!(
        "{} trials: median stage-1 correlation {:.3}, support hit rate {:.2}, ordering rate {:.2}",
        summary.n_trials,
        summary.median_stage1_correlation,
        summary.damage_support_hit_rate,
        summary.compare_ordering_rate
    );
    Ok(0)
}
