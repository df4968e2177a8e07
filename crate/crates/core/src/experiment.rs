//! Runs one solver on one scenario, or a canned experiment, and writes the
//! policy CSV and run summary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_causality::{solve_with_data, violation, PenaltySchedule};
use crate::error::{Error, Result};
use crate::generate::{gen_scenario, GeneratorParams};
use crate::iterative::{iterate_offline, water_levels, IterativeOptions, PenaltyRound, SolveReport};
use crate::model::{cumulative_departure, feasibility_report, throughput, validate_scenario, PowerPolicy, Scenario, TimeGrid, UserProfile};
use crate::online::{distributed_pair, grid_error_bound, mean_harvest_power, naive_policy, value_iteration, ArrivalDistribution, StateGrid};
use crate::oracle::{brute_force, OracleOptions};
use crate::rates::{normalize_channel, Normalization, PhysicalChannel, RateModel};
use crate::scenario_file::Loaded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Offline,
    Data,
    OnlineDp,
    Naive,
    Distributed,
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stopping tolerance of the iterative solvers (objective gain and
    /// policy displacement).
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    /// Oracle power step, or DP battery spacing.
    pub grid: Option<f64>,
}

impl SolverOptions {
    fn iterative(&self) -> IterativeOptions {
        let mut o = IterativeOptions::default();
        if let Some(t) = self.tol {
            o.objective_tol = t;
            o.displacement_tol = t;
        }
        if let Some(m) = self.max_sweeps {
            o.max_sweeps = m;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub policy: PowerPolicy,
    pub objective: f64,
    pub report: Option<SolveReport>,
    /// The scenario the policy is feasible for; differs from the input when
    /// unusable arrivals were removed.
    pub scenario: Scenario,
    pub grid_error_bound: Option<f64>,
    pub explored: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn run_solver(loaded: &Loaded, kind: SolverKind, opts: &SolverOptions) -> Result<Outcome> {
    let s = validate_scenario(&loaded.scenario)?;
    let rates = RateModel::for_scenario(&s)?;
    let tau = s.grid.tau;
    let plain = |policy: PowerPolicy| -> Result<Outcome> {
        let objective = throughput(&policy, &rates, tau)?;
        Ok(Outcome { policy, objective, report: None, scenario: s.clone(), grid_error_bound: None, explored: None, warnings: Vec::new() })
    };
    match kind {
        SolverKind::Offline | SolverKind::Data => {
            let (policy, report) = if kind == SolverKind::Data {
                solve_with_data(&s, &rates, &opts.iterative(), &PenaltySchedule::default())?
            } else {
                if s.has_data_constraints() {
                    return Err(Error::invalid("scenario has data arrivals; use the data solver"));
                }
                iterate_offline(&s, &rates, &opts.iterative())?
            };
            let mut used = s.clone();
            if let Some(resolved) = &report.resolved_arrivals {
                for j in 0..2 {
                    used.users[j].harvest.arrivals = resolved[j].clone();
                }
            }
            let mut warnings = Vec::new();
            if !report.converged {
                warnings.push(format!("stopped after {} sweeps without meeting the tolerance", report.sweeps_used));
            }
            let objective = throughput(&policy, &rates, tau)?;
            Ok(Outcome { policy, objective, report: Some(report), scenario: used, grid_error_bound: None, explored: None, warnings })
        }
        SolverKind::Naive => plain(naive_policy(&s)),
        SolverKind::Distributed => {
            // each user assumes the other spends its realized mean harvest rate
            let assumed = [mean_harvest_power(&s, 1), mean_harvest_power(&s, 0)];
            plain(distributed_pair(&s, &rates, assumed)?)
        }
        SolverKind::OnlineDp => {
            let dist = ArrivalDistribution::deterministic(&s);
            let e_max = [s.users[0].harvest.e_max, s.users[1].harvest.e_max];
            let step = opts.grid.unwrap_or(e_max[0].max(e_max[1]) / 40.0);
            let grid = StateGrid::new(s.grid.slots, tau, e_max, step, &dist, 41)?;
            let tables = value_iteration(&dist, &rates, &grid)?;
            let policy = tables.simulate(&rates, &s)?;
            let mut out = plain(policy)?;
            out.grid_error_bound = Some(grid_error_bound(&rates, &grid));
            out.warnings = tables.warnings;
            Ok(out)
        }
        SolverKind::Oracle => {
            let mut o = OracleOptions::default();
            if let Some(g) = opts.grid {
                o.power_step = g;
            }
            let sol = brute_force(&s, &rates, &o)?;
            Ok(Outcome {
                policy: sol.policy,
                objective: sol.objective,
                report: None,
                scenario: s.clone(),
                grid_error_bound: None,
                explored: Some(sol.explored),
                warnings: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub solver: SolverKind,
    pub objective: f64,
    pub objective_bits: f64,
    pub sweeps: Option<usize>,
    pub converged: Option<bool>,
    pub kkt_residual: Option<[f64; 2]>,
    pub final_displacement: Option<f64>,
    pub penalty_rounds: Vec<PenaltyRound>,
    pub removed_energy: [f64; 2],
    pub max_data_violation: f64,
    pub feasible: bool,
    pub grid_error_bound: Option<f64>,
    pub explored: Option<f64>,
    pub warnings: Vec<String>,
    pub seed: Option<u64>,
    pub config: ConfigEcho,
    pub normalization: Option<Normalization>,
    pub bits_per_unit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub source: String,
    pub options: SolverOptions,
    pub slots: usize,
    pub tau: f64,
    pub channel: crate::rates::ChannelParams,
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::invalid(format!("writing {}: {e}", path.display()));
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Per-slot CSV: powers, water levels and cumulative bits.
pub fn policy_csv(policy: &PowerPolicy, rates: &RateModel, grid: &TimeGrid, bits_per_unit: f64) -> Result<String> {
    let levels = water_levels(policy, rates)?;
    let cum = cumulative_departure(policy, rates, grid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(["slot", "p1", "p2", "water_level_1", "water_level_2", "cumulative_bits"]).map_err(err)?;
    for i in 0..grid.slots {
        let (p1, p2) = policy.slot(i);
        w.write_record([
            (i + 1).to_string(),
            p1.to_string(),
            p2.to_string(),
            levels[0][i].to_string(),
            levels[1][i].to_string(),
            (cum[i] * bits_per_unit).to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn summarize(loaded: &Loaded, kind: SolverKind, opts: &SolverOptions, outcome: &Outcome, source: &str, seed: Option<u64>) -> Result<RunSummary> {
    let rates = RateModel::for_scenario(&outcome.scenario)?;
    let schedule = PenaltySchedule::default();
    let report = feasibility_report(&outcome.policy, &outcome.scenario, &rates, schedule.violation_tol)?;
    let viol = violation(&outcome.policy, &outcome.scenario, &rates)?.max();
    let r = outcome.report.as_ref();
    let s = &loaded.scenario;
    Ok(RunSummary {
        solver: kind,
        objective: outcome.objective,
        objective_bits: outcome.objective * loaded.bits_per_unit(),
        sweeps: r.map(|r| r.sweeps_used),
        converged: r.map(|r| r.converged),
        kkt_residual: r.map(|r| r.kkt_residual),
        final_displacement: r.map(|r| r.final_displacement),
        penalty_rounds: r.map(|r| r.penalty_rounds.clone()).unwrap_or_default(),
        removed_energy: r.map_or([0.0; 2], |r| r.removed_energy),
        max_data_violation: viol,
        feasible: report.feasible,
        grid_error_bound: outcome.grid_error_bound,
        explored: outcome.explored,
        warnings: outcome.warnings.clone(),
        seed,
        config: ConfigEcho { source: source.to_string(), options: *opts, slots: s.grid.slots, tau: s.grid.tau, channel: s.channel },
        normalization: loaded.normalization,
        bits_per_unit: loaded.bits_per_unit(),
    })
}

/// Solves and writes `policy.csv` and `summary.json` under `out`.
pub fn run_and_write(loaded: &Loaded, kind: SolverKind, opts: &SolverOptions, out: &Path, source: &str, seed: Option<u64>) -> Result<RunSummary> {
    create_dir(out)?;
    let outcome = run_solver(loaded, kind, opts)?;
    let rates = RateModel::for_scenario(&outcome.scenario)?;
    let csv = policy_csv(&outcome.policy, &rates, &outcome.scenario.grid, loaded.bits_per_unit())?;
    write_atomic(&out.join("policy.csv"), csv.as_bytes())?;
    let summary = summarize(loaded, kind, opts, &outcome, source, seed)?;
    write_atomic(&out.join("summary.json"), to_json(&summary).as_bytes())?;
    if kind == SolverKind::OnlineDp {
        let s = &outcome.scenario;
        let dist = ArrivalDistribution::deterministic(s);
        let e_max = [s.users[0].harvest.e_max, s.users[1].harvest.e_max];
        let step = opts.grid.unwrap_or(e_max[0].max(e_max[1]) / 40.0);
        let grid = StateGrid::new(s.grid.slots, s.grid.tau, e_max, step, &dist, 41)?;
        let tables = value_iteration(&dist, &rates, &grid)?;
        let mut buf = Vec::new();
        tables.write_csv(&mut buf)?;
        write_atomic(&out.join("dp_table.csv"), &buf)?;
    }
    Ok(summary)
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::invalid(format!("creating {}: {e}", out.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    /// Best policy found before giving up, when there is one.
    pub best_policy: Option<PowerPolicy>,
}

impl Diagnostic {
    pub fn from_error(e: &Error) -> Self {
        let best_policy = match e {
            Error::DataCausality { best, .. } => Some((**best).clone()),
            _ => None,
        };
        Diagnostic { kind: e.kind().to_string(), message: e.to_string(), exit_code: e.exit_code(), best_policy }
    }
}

pub fn write_diagnostic(out: &Path, e: &Error) -> Result<()> {
    create_dir(out)?;
    write_atomic(&out.join("diagnostic.json"), to_json(&Diagnostic::from_error(e)).as_bytes())
}

// Canned experiments.

pub const FIG7_E1: [f64; 20] = [5., 0., 0., 0., 3., 0., 0., 0., 0., 0., 7., 0., 0., 0., 4., 0., 0., 0., 6., 0.];
pub const FIG7_E2: [f64; 20] = [10., 0., 7., 0., 0., 0., 0., 0., 9., 0., 0., 5., 0., 8., 0., 5., 0., 0., 0., 0.];

fn physical(a: f64, b: f64) -> PhysicalChannel {
    PhysicalChannel {
        h11_db: -100.0,
        h22_db: -100.0,
        h12_db: -100.0 + 10.0 * a.log10(),
        h21_db: -100.0 + 10.0 * b.log10(),
        noise_psd: 1e-19,
        bandwidth: 1e6,
    }
}

/// Printed harvest vectors in mJ, 10 mJ batteries, one-second slots.
pub fn fig7_scenario() -> Result<Loaded> {
    let norm = normalize_channel(&physical(0.9, 2.0))?;
    let to_units = |e: &[f64; 20], j: usize| e.iter().map(|x| x * 1e-3 * norm.energy_per_joule[j]).collect::<Vec<f64>>();
    let e_max = [10e-3 * norm.energy_per_joule[0], 10e-3 * norm.energy_per_joule[1]];
    let s = Scenario::new(
        TimeGrid::new(20, 1.0)?,
        [UserProfile::backlogged(to_units(&FIG7_E1, 0), e_max[0]), UserProfile::backlogged(to_units(&FIG7_E2, 1), e_max[1])],
        norm.channel,
    );
    Ok(Loaded { scenario: validate_scenario(&s)?, normalization: Some(norm) })
}

/// The receiver gains used for the random comparison.
pub fn fig8_channel() -> PhysicalChannel {
    PhysicalChannel { h11_db: -100.0, h22_db: -100.0, h12_db: -101.55, h21_db: -93.01, noise_psd: 1e-19, bandwidth: 1e6 }
}

pub const FIG8_RUNS: usize = 100;
const FIG8_E_MAX_MJ: f64 = 10.0;
const FIG8_MEAN_INTERARRIVAL: f64 = 5.0;

pub fn fig8_params(seed: u64) -> Result<(GeneratorParams, Normalization)> {
    let norm = normalize_channel(&fig8_channel())?;
    let e_max = [0, 1].map(|j| FIG8_E_MAX_MJ * 1e-3 * norm.energy_per_joule[j]);
    let params = GeneratorParams {
        slots: 20,
        tau: 1.0,
        e_max,
        mean_interarrival: FIG8_MEAN_INTERARRIVAL,
        channel: norm.channel,
        packets: None,
        seed,
    };
    Ok((params, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig8Row {
    pub seed: u64,
    pub iterative_bits: f64,
    pub distributed_bits: f64,
    pub naive_bits: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig8Summary {
    pub runs: usize,
    pub first_seed: u64,
    pub mean_iterative_bits: f64,
    pub mean_distributed_bits: f64,
    pub mean_naive_bits: f64,
    /// Strategies from best to worst mean throughput.
    pub ranking: Vec<String>,
    pub distributed_over_iterative: f64,
    pub assumed_interference: [f64; 2],
    pub normalization: Normalization,
}

/// Iterative, distributed and naive policies on `runs` random scenarios
/// with seeds `first_seed..`.
pub fn run_fig8(first_seed: u64, runs: usize, opts: &SolverOptions) -> Result<(Vec<Fig8Row>, Fig8Summary)> {
    let (template, norm) = fig8_params(first_seed)?;
    let bits = norm.bits_per_unit();
    // mean harvest power each user attributes to the other
    let mean_power = [0, 1].map(|j| template.e_max[j] / 2.0 / template.mean_interarrival);
    let assumed = [mean_power[1], mean_power[0]];
    let iter_opts = opts.iterative();
    let rows: Vec<Fig8Row> = (0..runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut p = template.clone();
            p.seed = first_seed + k;
            let s = gen_scenario(&p)?;
            let rates = RateModel::for_scenario(&s)?;
            let (it, report) = iterate_offline(&s, &rates, &iter_opts)?;
            let dist = distributed_pair(&s, &rates, assumed)?;
            let naive = naive_policy(&s);
            Ok(Fig8Row {
                seed: p.seed,
                iterative_bits: throughput(&it, &rates, s.grid.tau)? * bits,
                distributed_bits: throughput(&dist, &rates, s.grid.tau)? * bits,
                naive_bits: throughput(&naive, &rates, s.grid.tau)? * bits,
                sweeps: report.sweeps_used,
            })
        })
        .collect::<Result<_>>()?;
    let mean = |f: fn(&Fig8Row) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    let means = [mean(|r| r.iterative_bits), mean(|r| r.distributed_bits), mean(|r| r.naive_bits)];
    let mut ranking: Vec<(f64, &str)> = vec![(means[0], "iterative"), (means[1], "distributed"), (means[2], "naive")];
    ranking.sort_by(|x, y| y.0.total_cmp(&x.0));
    let summary = Fig8Summary {
        runs,
        first_seed,
        mean_iterative_bits: means[0],
        mean_distributed_bits: means[1],
        mean_naive_bits: means[2],
        ranking: ranking.into_iter().map(|r| r.1.to_string()).collect(),
        distributed_over_iterative: means[1] / means[0],
        assumed_interference: assumed,
        normalization: norm,
    };
    Ok((rows, summary))
}

pub fn write_fig8(out: &Path, rows: &[Fig8Row], summary: &Fig8Summary) -> Result<()> {
    create_dir(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    write_atomic(&out.join("fig8.csv"), &bytes)?;
    write_atomic(&out.join("summary.json"), to_json(summary).as_bytes())
}

/// Where a run's scenario came from, for the summary echo.
pub fn describe_source(path: Option<&PathBuf>, preset: Option<&str>) -> String {
    match (path, preset) {
        (Some(p), _) => format!("file:{}", p.display()),
        (None, Some(name)) => format!("preset:{name}"),
        (None, None) => "generated".to_string(),
    }
}
