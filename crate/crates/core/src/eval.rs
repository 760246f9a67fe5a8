//! Closed-loop trials (estimator → controller → plant) and the report
//! artifacts: per-trial summaries, per-step traces, angular-error
//! histograms and a plain-text table.
//!
//! Report directory layout:
//!
//! ```text
//! trials/summaries.csv   one row per trial
//! traces/<episode>.csv   t,theta_true,theta_est,omega,roll_error
//! histogram.csv          estimator,medium,bin_start,bin_end,count
//! report.txt             mean/median targeting error per estimator and medium
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{control, targeting_error, ControlCommand, ControllerParams};
use crate::data::{EpisodeRecord, Termination, SCHEMA_VERSION};
use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::estimator::{EkfEstimator, Observation, TipEstimator, TruthEstimator};
use crate::lstm::{LstmEstimator, LstmModel};
use crate::parallel::parallel_map;
use crate::plant::{sample_target, sense, step, ControlInput, MediumParams, PlantState, WorkspaceCone};
use crate::se3::{angular_error, wrap_angle, Pose, Vec3};
use crate::seed::derive_seed;

/// Inputs of one closed-loop insertion.
#[derive(Debug, Clone, Copy)]
pub struct TrialSetup<'a> {
    pub medium_name: &'a str,
    pub medium: &'a MediumParams,
    pub controller: &'a ControllerParams,
    pub target: Vec3,
    /// Insertion stops once the true tip is this deep, mm.
    pub depth_cap: f64,
    /// Seeds the initial roll and the sensor noise.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTrace {
    pub estimator: String,
    pub episode_id: String,
    pub t: Vec<f64>,
    pub roll_true: Vec<f64>,
    pub roll_est: Vec<f64>,
    /// Full-orientation angular error of the estimated pose, rad.
    pub omega: Vec<f64>,
    /// `|wrap(θ̃ − θ)|`, rad.
    pub roll_error: Vec<f64>,
}

impl EstimatorTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn mean_omega(&self) -> f64 {
        mean(&self.omega)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub episode_id: String,
    pub estimator: String,
    pub medium: String,
    pub seed: u64,
    pub targeting_error_mm: f64,
    pub mean_omega: f64,
    pub mean_roll_error: f64,
    pub steps: usize,
    pub termination: Termination,
}

pub fn episode_id(medium: &str, estimator: &str, seed: u64) -> String {
    format!("{medium}-{estimator}-{seed:016x}")
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs one insertion until the controller reports arrival or the true tip
/// reaches the depth cap.
///
/// The needle enters heading `+z` with a random initial roll and no twist
/// preload. Every tick the estimator sees one noisy 5-DOF sample and the
/// base angle; the controller acts on the estimated pose.
pub fn run_trial(
    setup: &TrialSetup<'_>,
    estimator: &mut dyn TipEstimator,
) -> Result<(EpisodeRecord, EstimatorTrace, TrialSummary)> {
    setup.medium.validate()?;
    setup.controller.validate()?;
    let dt = setup.controller.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let initial_roll = wrap_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let mut state = PlantState::at_entry(initial_roll);
    estimator.reset(&state.pose, state.base_angle);

    let name = estimator.name().to_string();
    let id = episode_id(setup.medium_name, &name, setup.seed);
    let mut record = EpisodeRecord {
        schema_version: SCHEMA_VERSION,
        seed: setup.seed,
        estimator: name.clone(),
        medium_name: setup.medium_name.to_string(),
        medium: *setup.medium,
        controller: *setup.controller,
        target: [setup.target.x, setup.target.y, setup.target.z],
        t: Vec::new(),
        sensed_position: Vec::new(),
        sensed_heading: Vec::new(),
        true_position: Vec::new(),
        base_angle: Vec::new(),
        roll_true: Vec::new(),
        insertion_speed: Vec::new(),
        rotation_speed: Vec::new(),
        termination: Termination::DepthCapReached,
        final_error_mm: 0.0,
    };
    let mut trace = EstimatorTrace {
        estimator: name.clone(),
        episode_id: id.clone(),
        t: Vec::new(),
        roll_true: Vec::new(),
        roll_est: Vec::new(),
        omega: Vec::new(),
        roll_error: Vec::new(),
    };

    // Generous guard against a controller that never advances.
    let max_steps = (4.0 * setup.depth_cap / (setup.controller.insertion_speed * dt)).ceil() as usize + 1;
    let mut last_input: Option<ControlInput> = None;
    for k in 0..max_steps {
        let sensed = sense(&state, setup.medium, &mut rng);
        let obs = Observation {
            sensed,
            base_angle: state.base_angle,
            last_input,
            dt,
            truth: &state.pose,
        };
        let estimate = estimator.estimate(&obs)?;
        let roll_true = state.pose.roll()?;
        let roll_est = estimate.roll()?;
        let shown = Pose::from_heading_roll(sensed.position, &sensed.heading, roll_est)?;

        let command = control(&estimate, &setup.target, setup.controller)?;
        let capped = state.pose.position.z >= setup.depth_cap;
        let u = match command {
            ControlCommand::Drive(u) if !capped => Some(u),
            _ => None,
        };

        let t = k as f64 * dt;
        record.t.push(t);
        record.sensed_position.extend(sensed.position.iter());
        record.sensed_heading.extend(sensed.heading.iter());
        record.true_position.extend(state.pose.position.iter());
        record.base_angle.push(state.base_angle);
        record.roll_true.push(roll_true);
        let applied = u.unwrap_or_default();
        record.insertion_speed.push(applied.insertion_speed);
        record.rotation_speed.push(applied.rotation_speed);

        trace.t.push(t);
        trace.roll_true.push(roll_true);
        trace.roll_est.push(roll_est);
        trace.omega.push(angular_error(&shown.rotation, &state.pose.rotation));
        trace.roll_error.push(wrap_angle(roll_est - roll_true).abs());

        match u {
            Some(u) => {
                state = step(&state, u, setup.medium, dt);
                last_input = Some(u);
            }
            None => {
                if matches!(command, ControlCommand::Arrived) {
                    record.termination = Termination::Arrived;
                }
                break;
            }
        }
    }

    let error = targeting_error(&state.pose.position, &setup.target);
    record.final_error_mm = error;
    let summary = TrialSummary {
        episode_id: id,
        estimator: name,
        medium: setup.medium_name.to_string(),
        seed: setup.seed,
        targeting_error_mm: error,
        mean_omega: trace.mean_omega(),
        mean_roll_error: mean(&trace.roll_error),
        steps: record.len(),
        termination: record.termination,
    };
    Ok((record, trace, summary))
}

/// The estimators that can drive a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Truth,
    Ekf,
    Lstm,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Truth => "truth",
            Self::Ekf => "ekf",
            Self::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Self::Truth),
            "ekf" => Ok(Self::Ekf),
            "lstm" => Ok(Self::Lstm),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator {other:?} (expected truth, ekf or lstm)"
            ))),
        }
    }
}

pub fn make_estimator(
    kind: EstimatorKind,
    ekf: &EkfConfig,
    medium: &MediumParams,
    model: Option<&LstmModel>,
) -> Result<Box<dyn TipEstimator>> {
    Ok(match kind {
        EstimatorKind::Truth => Box::new(TruthEstimator),
        EstimatorKind::Ekf => Box::new(EkfEstimator::new(*ekf, medium)),
        EstimatorKind::Lstm => {
            let model = model.ok_or_else(|| Error::InvalidInput("the lstm estimator needs a trained model".into()))?;
            Box::new(LstmEstimator::new(model.clone()))
        }
    })
}

/// A batch of trials in one medium.
#[derive(Debug, Clone)]
pub struct Campaign<'a> {
    pub medium_name: &'a str,
    pub medium: &'a MediumParams,
    pub workspace: &'a WorkspaceCone,
    pub controller: &'a ControllerParams,
    pub ekf: &'a EkfConfig,
    pub model: Option<&'a LstmModel>,
    pub trials: usize,
    pub depth_margin: f64,
    pub seed: u64,
}

/// Seed of trial `k`; it fixes the target, initial roll and sensor noise, so
/// every estimator faces the same set of insertions.
pub fn trial_seed(base: u64, medium_name: &str, k: usize) -> u64 {
    let tag = medium_name.bytes().fold(0u64, |h, b| derive_seed(h, b as u64));
    derive_seed(derive_seed(base, tag), k as u64)
}

pub fn trial_target(workspace: &WorkspaceCone, seed: u64) -> Vec3 {
    sample_target(workspace, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7a)))
}

/// Runs `campaign.trials` insertions with each estimator in `kinds`, in
/// that order. Results are ordered by estimator, then trial.
pub fn run_campaign(
    campaign: &Campaign<'_>,
    kinds: &[EstimatorKind],
    jobs: usize,
) -> Result<Vec<(TrialSummary, EstimatorTrace)>> {
    let jobs_list: Vec<(EstimatorKind, usize)> = kinds
        .iter()
        .flat_map(|&k| (0..campaign.trials).map(move |i| (k, i)))
        .collect();
    let results = parallel_map(&jobs_list, jobs, |_, &(kind, i)| {
        let seed = trial_seed(campaign.seed, campaign.medium_name, i);
        let setup = TrialSetup {
            medium_name: campaign.medium_name,
            medium: campaign.medium,
            controller: campaign.controller,
            target: trial_target(campaign.workspace, seed),
            depth_cap: campaign.workspace.max_depth + campaign.depth_margin,
            seed,
        };
        let mut est = make_estimator(kind, campaign.ekf, campaign.medium, campaign.model)?;
        let (_, trace, summary) = run_trial(&setup, est.as_mut())?;
        Ok((summary, trace))
    });
    results.into_iter().collect()
}

/// Counts of per-step Ω over all traces, in bins of `bin_width` covering
/// `[0, π]`. The last bin is closed on the right.
pub fn histogram<'a>(traces: impl IntoIterator<Item = &'a EstimatorTrace>, bin_width: f64) -> Result<Vec<u64>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidInput(format!("bin width must be positive, got {bin_width}")));
    }
    let bins = (std::f64::consts::PI / bin_width).ceil().max(1.0) as usize;
    let mut counts = vec![0u64; bins];
    for trace in traces {
        for &w in &trace.omega {
            let b = ((w / bin_width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(counts)
}

/// Aggregates for one (estimator, medium) cell of the report table.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub estimator: String,
    pub medium: String,
    pub trials: usize,
    pub mean_error_mm: f64,
    pub median_error_mm: f64,
    pub max_error_mm: f64,
    pub mean_omega: f64,
    pub mean_roll_error: f64,
}

/// Per-(estimator, medium) statistics, sorted by medium then estimator.
pub fn group_stats(summaries: &[TrialSummary]) -> Vec<GroupStats> {
    let mut groups: BTreeMap<(&str, &str), Vec<&TrialSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry((&s.medium, &s.estimator)).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|((medium, estimator), rows)| {
            let errors: Vec<f64> = rows.iter().map(|r| r.targeting_error_mm).collect();
            let omegas: Vec<f64> = rows.iter().map(|r| r.mean_omega).collect();
            let rolls: Vec<f64> = rows.iter().map(|r| r.mean_roll_error).collect();
            GroupStats {
                estimator: estimator.into(),
                medium: medium.into(),
                trials: rows.len(),
                mean_error_mm: mean(&errors),
                median_error_mm: median(&errors),
                max_error_mm: errors.iter().copied().fold(0.0, f64::max),
                mean_omega: mean(&omegas),
                mean_roll_error: mean(&rolls),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str =
    "episode_id,estimator,medium,seed,targeting_error_mm,mean_omega_rad,mean_roll_error_rad,steps,termination";
pub const TRACE_HEADER: &str = "t,theta_true,theta_est,omega,roll_error";
pub const HISTOGRAM_HEADER: &str = "estimator,medium,bin_start,bin_end,count";

#[derive(Serialize, Deserialize)]
struct SummaryRow {
    episode_id: String,
    estimator: String,
    medium: String,
    seed: u64,
    targeting_error_mm: f64,
    mean_omega_rad: f64,
    mean_roll_error_rad: f64,
    steps: usize,
    termination: Termination,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    t: f64,
    theta_true: f64,
    theta_est: f64,
    omega: f64,
    roll_error: f64,
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    estimator: &'a str,
    medium: &'a str,
    bin_start: f64,
    bin_end: f64,
    count: u64,
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_csv<R: serde::de::DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let found = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if found.iter().collect::<Vec<_>>().join(",") != header {
        return Err(Error::format(path, format!("expected header {header:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

fn histogram_rows(summaries: &[TrialSummary], traces: &[EstimatorTrace], bin_width: f64) -> Result<Vec<(String, String, f64, f64, u64)>> {
    let mut by_group: BTreeMap<(&str, &str), Vec<&EstimatorTrace>> = BTreeMap::new();
    for (s, t) in summaries.iter().zip(traces) {
        by_group.entry((&s.estimator, &s.medium)).or_default().push(t);
    }
    let mut rows = Vec::new();
    for ((estimator, medium), group) in by_group {
        let counts = histogram(group.iter().copied(), bin_width)?;
        let last = counts.len() - 1;
        for (b, &c) in counts.iter().enumerate() {
            let end = if b == last { std::f64::consts::PI } else { (b + 1) as f64 * bin_width };
            rows.push((estimator.to_string(), medium.to_string(), b as f64 * bin_width, end, c));
        }
    }
    Ok(rows)
}

/// The plain-text summary table.
pub fn render_report(summaries: &[TrialSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Targeting error and angular error by medium and estimator");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<10} {:<10} {:>6} {:>14} {:>16} {:>13} {:>16} {:>19}",
        "medium", "estimator", "trials", "mean err (mm)", "median err (mm)", "max err (mm)", "mean Omega (rad)", "mean roll err (rad)"
    );
    for g in group_stats(summaries) {
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>6} {:>14.3} {:>16.3} {:>13.3} {:>16.4} {:>19.4}",
            g.medium,
            g.estimator,
            g.trials,
            g.mean_error_mm,
            g.median_error_mm,
            g.max_error_mm,
            g.mean_omega,
            g.mean_roll_error
        );
    }
    s
}

/// Writes every report artifact under `out`. `summaries[i]` must describe
/// `traces[i]`.
pub fn report(summaries: &[TrialSummary], traces: &[EstimatorTrace], bin_width: f64, out: &Path) -> Result<()> {
    if summaries.is_empty() || summaries.len() != traces.len() {
        return Err(Error::InvalidInput(
            "report needs one trace per summary and at least one trial".into(),
        ));
    }
    for (s, t) in summaries.iter().zip(traces) {
        if s.episode_id != t.episode_id {
            return Err(Error::InvalidInput(format!(
                "summary {} paired with trace {}",
                s.episode_id, t.episode_id
            )));
        }
    }
    let trials = out.join("trials");
    let trace_dir = out.join("traces");
    for dir in [&trials, &trace_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_csv(
        &trials.join("summaries.csv"),
        summaries.iter().map(|r| SummaryRow {
            episode_id: r.episode_id.clone(),
            estimator: r.estimator.clone(),
            medium: r.medium.clone(),
            seed: r.seed,
            targeting_error_mm: r.targeting_error_mm,
            mean_omega_rad: r.mean_omega,
            mean_roll_error_rad: r.mean_roll_error,
            steps: r.steps,
            termination: r.termination,
        }),
    )?;
    for t in traces {
        write_csv(
            &trace_dir.join(format!("{}.csv", t.episode_id)),
            (0..t.len()).map(|i| TraceRow {
                t: t.t[i],
                theta_true: t.roll_true[i],
                theta_est: t.roll_est[i],
                omega: t.omega[i],
                roll_error: t.roll_error[i],
            }),
        )?;
    }
    let hist = histogram_rows(summaries, traces, bin_width)?;
    write_csv(
        &out.join("histogram.csv"),
        hist.iter().map(|(e, m, a, b, c)| HistogramRow {
            estimator: e,
            medium: m,
            bin_start: *a,
            bin_end: *b,
            count: *c,
        }),
    )?;
    let path = out.join("report.txt");
    fs::write(&path, render_report(summaries)).map_err(|e| Error::io(&path, e))
}

/// Reads back the summaries and traces written by [`report`].
pub fn load_report_inputs(out: &Path) -> Result<(Vec<TrialSummary>, Vec<EstimatorTrace>)> {
    let rows: Vec<SummaryRow> = read_csv(&out.join("trials").join("summaries.csv"), SUMMARY_HEADER)?;
    let mut summaries = Vec::with_capacity(rows.len());
    let mut traces = Vec::with_capacity(rows.len());
    for r in rows {
        let steps: Vec<TraceRow> = read_csv(
            &out.join("traces").join(format!("{}.csv", r.episode_id)),
            TRACE_HEADER,
        )?;
        traces.push(EstimatorTrace {
            estimator: r.estimator.clone(),
            episode_id: r.episode_id.clone(),
            t: steps.iter().map(|s| s.t).collect(),
            roll_true: steps.iter().map(|s| s.theta_true).collect(),
            roll_est: steps.iter().map(|s| s.theta_est).collect(),
            omega: steps.iter().map(|s| s.omega).collect(),
            roll_error: steps.iter().map(|s| s.roll_error).collect(),
        });
        summaries.push(TrialSummary {
            episode_id: r.episode_id,
            estimator: r.estimator,
            medium: r.medium,
            seed: r.seed,
            targeting_error_mm: r.targeting_error_mm,
            mean_omega: r.mean_omega_rad,
            mean_roll_error: r.mean_roll_error_rad,
            steps: r.steps,
            termination: r.termination,
        });
    }
    Ok((summaries, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with(omega: Vec<f64>) -> EstimatorTrace {
        let n = omega.len();
        EstimatorTrace {
            estimator: "x".into(),
            episode_id: "e".into(),
            t: (0..n).map(|i| i as f64 * 0.025).collect(),
            roll_true: vec![0.0; n],
            roll_est: vec![0.0; n],
            omega,
            roll_error: vec![0.0; n],
        }
    }

    #[test]
    fn constant_omega_lands_in_one_bin() {
        let t = trace_with(vec![0.33; 17]);
        let h = histogram([&t], 0.1).unwrap();
        assert_eq!(h.len(), 32);
        assert_eq!(h[3], 17);
        assert_eq!(h.iter().sum::<u64>(), 17);
    }

    #[test]
    fn pi_falls_in_last_bin_and_bad_width_is_rejected() {
        let t = trace_with(vec![0.0, std::f64::consts::PI]);
        let h = histogram([&t], 0.5).unwrap();
        assert_eq!((h[0], h[h.len() - 1]), (1, 1));
        assert!(histogram([&t], 0.0).is_err());
        assert!(histogram([&t], -1.0).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0]), 2.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn estimator_names_parse() {
        for k in [EstimatorKind::Truth, EstimatorKind::Ekf, EstimatorKind::Lstm] {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("kalman".parse::<EstimatorKind>().is_err());
    }
}
