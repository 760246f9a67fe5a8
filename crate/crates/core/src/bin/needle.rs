use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use needle_steer::config::RunConfig;
use needle_steer::data::{generate_dataset, Dataset, Split};
use needle_steer::eval::{
    load_report_inputs, make_estimator, render_report, report, run_campaign, run_trial, trial_target,
    Campaign, EstimatorKind, TrialSetup,
};
use needle_steer::lstm::{load_model, save_model, train};
use needle_steer::se3::Vec3;
use needle_steer::seed::derive_seed;
use needle_steer::{Error, Result};

/// Steerable-needle roll estimation workbench.
#[derive(Parser)]
#[command(name = "needle", version)]
struct Cli {
    /// Partial TOML config layered over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the global and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for episodes, trials and per-episode gradients.
    /// Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth-steered insertions and write a split dataset.
    Generate(GenerateArgs),
    /// Train the roll network on a dataset.
    Train(TrainArgs),
    /// Run a single closed-loop insertion.
    Steer(SteerArgs),
    /// Run the estimator comparison across mediums and write a report.
    Evaluate(EvaluateArgs),
    /// Rebuild a report from persisted trial summaries and traces.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset root directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of episodes.
    #[arg(long)]
    n: Option<usize>,
    /// Medium preset to simulate.
    #[arg(long)]
    medium: Option<String>,
    /// Fraction of episodes assigned to training.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.json and training_log.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct SteerArgs {
    #[arg(long, value_parser = ["truth", "ekf", "lstm"])]
    estimator: String,
    /// Trained model, required for the lstm estimator.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "gelatin")]
    medium: String,
    /// Make the shaft torsionally rigid (tip roll equals base angle).
    #[arg(long)]
    rigid: bool,
    /// Target as `x,y,z` in mm; sampled from the workspace when omitted.
    #[arg(long, value_parser = parse_target)]
    target: Option<Vec3>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained model; without it only truth and ekf can run.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Estimators to compare.
    #[arg(long, value_delimiter = ',', default_values = ["ekf", "lstm"], value_parser = ["truth", "ekf", "lstm"])]
    estimators: Vec<String>,
    /// Trials per medium as `name=count`; repeatable. Replaces the config's list.
    #[arg(long = "trials", value_parser = parse_trials)]
    trials: Vec<(String, usize)>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding trials/ and traces/ from an earlier run.
    #[arg(long)]
    from: PathBuf,
    /// Where to write the rebuilt report (defaults to --from).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_target(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn parse_trials(s: &str) -> std::result::Result<(String, usize), String> {
    let (name, n) = s.split_once('=').ok_or("expected name=count")?;
    Ok((name.to_string(), n.parse().map_err(|e| format!("{n:?}: {e}"))?))
}

const EVAL_TAG: u64 = 0xe7a1;
const STEER_TAG: u64 = 0x57ee;

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.training.seed = seed;
    }
    config.training.jobs = cli.jobs.max(1);
    Ok(config)
}

fn prepare_out(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    config.save(&dir.join("config.toml"))
}

fn kind(name: &str) -> EstimatorKind {
    name.parse().expect("clap restricts estimator names")
}

fn run(cli: Cli) -> Result<()> {
    let mut config = resolve_config(&cli)?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Generate(a) => {
            if let Some(n) = a.n {
                config.dataset.n = n;
            }
            if let Some(m) = a.medium {
                config.dataset.medium = m;
            }
            if let Some(f) = a.train_fraction {
                config.dataset.train_fraction = f;
            }
            config.validate()?;
            prepare_out(&a.out, &config)?;
            let gen = config.generation(None)?;
            let ds = generate_dataset(&gen, config.dataset.train_fraction, jobs, Some(&a.out))?;
            println!(
                "wrote {} episodes ({} train / {} val) to {}",
                ds.records.len(),
                ds.manifest.count(Split::Train),
                ds.manifest.count(Split::Val),
                a.out.display()
            );
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                config.training.epochs = e;
            }
            if let Some(lr) = a.learning_rate {
                config.training.learning_rate = lr;
            }
            config.validate()?;
            prepare_out(&a.out, &config)?;
            let ds = Dataset::load(&a.data)?;
            let (train_set, val_set) = (ds.sequences(Split::Train), ds.sequences(Split::Val));
            let (model, log) = train(&train_set, &val_set, &config.training, ds.manifest.z_max)?;
            save_model(&model, &a.out.join("model.json"))?;
            let log_path = a.out.join("training_log.csv");
            std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            if let Some(last) = log.epochs.last() {
                println!("final epoch {} validation RMSE {}", last.epoch, last.val_rmse);
            }
            println!(
                "selected epoch {} validation RMSE {}",
                log.best_epoch, log.best_val_rmse
            );
        }
        Command::Steer(a) => {
            let medium = config.medium(&a.medium)?.with_rigid(a.rigid);
            let medium_name = if a.rigid { format!("{}-rigid", a.medium) } else { a.medium.clone() };
            prepare_out(&a.out, &config)?;
            let model = a.model.as_deref().map(load_model).transpose()?;
            let seed = derive_seed(config.seed, STEER_TAG);
            let target = a.target.unwrap_or_else(|| trial_target(&config.workspace, seed));
            let setup = TrialSetup {
                medium_name: &medium_name,
                medium: &medium,
                controller: &config.controller,
                target,
                depth_cap: config.workspace.max_depth + config.evaluation.depth_margin,
                seed,
            };
            let mut est = make_estimator(kind(&a.estimator), &config.ekf, &medium, model.as_ref())?;
            let (record, trace, summary) = run_trial(&setup, est.as_mut())?;
            needle_steer::data::write_episodes(&a.out.join("episode.jsonl"), &[record])?;
            report(&[summary.clone()], &[trace], config.evaluation.bin_width, &a.out)?;
            println!(
                "{} in {}: targeting error {} mm, mean angular error {} rad, {:?} after {} steps",
                summary.estimator,
                summary.medium,
                summary.targeting_error_mm,
                summary.mean_omega,
                summary.termination,
                summary.steps
            );
        }
        Command::Evaluate(a) => {
            if !a.trials.is_empty() {
                config.evaluation.trials = a.trials.into_iter().collect();
            }
            config.validate()?;
            let kinds: Vec<EstimatorKind> = a.estimators.iter().map(|s| kind(s)).collect();
            let model = a.model.as_deref().map(load_model).transpose()?;
            if kinds.contains(&EstimatorKind::Lstm) && model.is_none() {
                return Err(Error::InvalidInput("--model is required to evaluate the lstm estimator".into()));
            }
            prepare_out(&a.out, &config)?;
            let seed = derive_seed(config.seed, EVAL_TAG);
            let mut summaries = Vec::new();
            let mut traces = Vec::new();
            for (name, &trials) in &config.evaluation.trials {
                let campaign = Campaign {
                    medium_name: name,
                    medium: config.medium(name)?,
                    workspace: &config.workspace,
                    controller: &config.controller,
                    ekf: &config.ekf,
                    model: model.as_ref(),
                    trials,
                    depth_margin: config.evaluation.depth_margin,
                    seed,
                };
                for (s, t) in run_campaign(&campaign, &kinds, jobs)? {
                    summaries.push(s);
                    traces.push(t);
                }
            }
            report(&summaries, &traces, config.evaluation.bin_width, &a.out)?;
            print!("{}", render_report(&summaries));
        }
        Command::Report(a) => {
            let out = a.out.unwrap_or_else(|| a.from.clone());
            let (summaries, traces) = load_report_inputs(&a.from)?;
            report(&summaries, &traces, config.evaluation.bin_width, &out)?;
            print!("{}", render_report(&summaries));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
