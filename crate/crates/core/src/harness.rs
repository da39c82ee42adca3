//! Monte-Carlo frontier sweeps, CSV output and verification audits.

pub mod audit;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{
    assemble_effective, generate_channels, ChannelError, ChannelSet, Partition, Scheme, SystemConfig,
};
use crate::optimizer::{self, OptimizerError};
use crate::selection::{self, SelectionError};

pub use audit::{run_audits, AuditReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ChannelError),
    #[error("trial {trial}: {source}")]
    Optimizer { trial: u64, source: OptimizerError },
    #[error("trial {trial}: {source}")]
    Selection { trial: u64, source: SelectionError },
    #[error("nothing to write: {0}")]
    Empty(&'static str),
    #[error("curves disagree on the number of energy transmitters")]
    MixedWidths,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Pointwise average over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPoint {
    pub ebar_normalized: f64,
    pub ebar_watts: f64,
    /// Sum rate in bits per channel use.
    pub rate_bits: f64,
    pub energy_watts: f64,
    /// Energy transmitter powers, partition slot order.
    pub powers: Vec<f64>,
}

/// An averaged frontier on the normalised grid `Ē / e_max ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RECurve {
    /// Scheme label; time-sharing baselines carry a `_TS` suffix.
    pub scheme: String,
    pub points: Vec<AveragedPoint>,
    pub trials: usize,
    pub seed: u64,
    pub fingerprint: String,
}

impl RECurve {
    /// Averaged rate (bits) at mean required energy `e_watts`, linearly
    /// interpolated between grid points; `None` beyond the curve's reach.
    pub fn rate_at(&self, e_watts: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        if e_watts <= first.ebar_watts {
            return Some(first.rate_bits);
        }
        let last = pts.last()?;
        if e_watts > last.ebar_watts * (1.0 + 1e-12) {
            return None;
        }
        if e_watts >= last.ebar_watts {
            return Some(last.rate_bits);
        }
        let g = pts.partition_point(|p| p.ebar_watts <= e_watts);
        let (a, b) = (&pts[g - 1], &pts[g]);
        let t = (e_watts - a.ebar_watts) / (b.ebar_watts - a.ebar_watts);
        Some(a.rate_bits + t * (b.rate_bits - a.rate_bits))
    }
}

/// Curves plus solver diagnostics accumulated over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub curves: Vec<RECurve>,
    /// Increases of an energy power between outer iterations.
    pub monotone_violations: usize,
    pub unconverged_points: usize,
    /// Largest relative shortfall `(Ē − E)/Ē` of a delivered energy.
    pub worst_shortfall: f64,
}

/// SHA-256 of the config JSON with the thread count cleared, since results
/// do not depend on it.
pub fn fingerprint(config: &SystemConfig) -> String {
    let mut c = config.clone();
    c.parallelism = 0;
    let digest = Sha256::digest(c.to_json().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn normalized_grid(size: usize) -> Vec<f64> {
    if size <= 1 {
        return vec![0.0; size];
    }
    (0..size).map(|g| g as f64 / (size - 1) as f64).collect()
}

#[derive(Debug, Clone)]
struct TrialPoint {
    e_bar: f64,
    rate: f64,
    energy: f64,
    powers: Vec<f64>,
}

#[derive(Debug)]
struct TrialResult {
    frontier: Vec<TrialPoint>,
    sharing: Vec<TrialPoint>,
    violations: usize,
    unconverged: usize,
    worst_shortfall: f64,
}

/// Replace each point by a later one when that one has a strictly higher
/// rate; every later point also meets the earlier energy requirement.
fn upper_envelope(points: &mut [TrialPoint]) {
    for g in (0..points.len().saturating_sub(1)).rev() {
        if points[g + 1].rate > points[g].rate {
            let e_bar = points[g].e_bar;
            points[g] = TrialPoint { e_bar, ..points[g + 1].clone() };
        }
    }
}

/// Energy-harvesting set used for a trial.
fn trial_partition(channels: &ChannelSet, config: &SystemConfig, trial: u64) -> Result<Partition> {
    let default = Partition::default_for(config.k, config.k1)?;
    if !config.select || config.k1 == 0 {
        return Ok(default);
    }
    let e_sel = selection_energy(channels, config, &default).map_err(|source| HarnessError::Optimizer { trial, source })?;
    let chosen = selection::select_eh_set(channels, config, e_sel).map_err(|source| HarnessError::Selection { trial, source })?;
    Ok(chosen.partition())
}

/// Half the MEB maximum of the default partition.
pub fn selection_energy(channels: &ChannelSet, config: &SystemConfig, default: &Partition) -> optimizer::Result<f64> {
    let eff = assemble_effective(channels, default)?;
    Ok(0.5 * optimizer::scheme_e_max(channels, &eff, config, Scheme::Meb)?)
}

fn run_trial(config: &SystemConfig, scheme: Scheme, trial: u64) -> Result<TrialResult> {
    let wrap = |source| HarnessError::Optimizer { trial, source };
    let channels = generate_channels(config, trial)?;
    let partition = trial_partition(&channels, config, trial)?;
    let eff = assemble_effective(&channels, &partition)?;
    let cap = optimizer::scheme_e_max(&channels, &eff, config, scheme).map_err(wrap)?;
    let ts = optimizer::time_sharing(&channels, &eff, config, scheme, config.variant).map_err(wrap)?;
    let k1 = partition.eh().len();

    let mut frontier = Vec::with_capacity(config.ebar_grid_size);
    let mut sharing = Vec::with_capacity(config.ebar_grid_size);
    let (mut violations, mut unconverged, mut worst) = (0, 0, 0.0f64);
    for x in normalized_grid(config.ebar_grid_size) {
        let e_bar = x * cap;
        let point = if config.select && config.reselect_per_point && k1 > 0 {
            reselected_point(&channels, config, scheme, e_bar, trial)?
        } else {
            None
        };
        let point = match point {
            Some(p) => p,
            None => optimizer::boundary_point(&channels, &eff, config, scheme, e_bar, config.variant).map_err(wrap)?,
        };
        violations += point.monotone_violations;
        unconverged += usize::from(!point.converged);
        if e_bar > 0.0 {
            worst = worst.max((e_bar - point.energy) / e_bar);
        }
        frontier.push(TrialPoint { e_bar, rate: point.rate, energy: point.energy, powers: point.powers });

        let tau = ts.fraction_for(e_bar);
        let (rate, energy) = ts.at(tau);
        sharing.push(TrialPoint { e_bar, rate, energy, powers: vec![tau * config.p_max; k1] });
    }
    upper_envelope(&mut frontier);
    upper_envelope(&mut sharing);
    Ok(TrialResult { frontier, sharing, violations, unconverged, worst_shortfall: worst })
}

/// Boundary point on the set chosen at `e_bar`, or `None` when that set
/// cannot deliver it.
fn reselected_point(
    channels: &ChannelSet,
    config: &SystemConfig,
    scheme: Scheme,
    e_bar: f64,
    trial: u64,
) -> Result<Option<optimizer::REPoint>> {
    let chosen = selection::select_eh_set(channels, config, e_bar).map_err(|source| HarnessError::Selection { trial, source })?;
    let eff = assemble_effective(channels, &chosen.partition())?;
    match optimizer::boundary_point(channels, &eff, config, scheme, e_bar, config.variant) {
        Ok(p) => Ok(Some(p)),
        Err(OptimizerError::InfeasibleTarget { .. }) => Ok(None),
        Err(source) => Err(HarnessError::Optimizer { trial, source }),
    }
}

fn average(points: &[&[TrialPoint]], grid: &[f64]) -> Vec<AveragedPoint> {
    let n = points.len() as f64;
    grid.iter()
        .enumerate()
        .map(|(g, &x)| {
            let width = points.first().map_or(0, |p| p[g].powers.len());
            let mut acc = AveragedPoint {
                ebar_normalized: x,
                ebar_watts: 0.0,
                rate_bits: 0.0,
                energy_watts: 0.0,
                powers: vec![0.0; width],
            };
            for trial in points {
                let p = &trial[g];
                acc.ebar_watts += p.e_bar;
                acc.rate_bits += p.rate;
                acc.energy_watts += p.energy;
                for (a, b) in acc.powers.iter_mut().zip(&p.powers) {
                    *a += b;
                }
            }
            acc.ebar_watts /= n;
            acc.rate_bits /= n * std::f64::consts::LN_2;
            acc.energy_watts /= n;
            for a in acc.powers.iter_mut() {
                *a /= n;
            }
            acc
        })
        .collect()
}

/// Sweep the configured scheme and its time-sharing baseline over
/// `config.trials` channel draws.
pub fn run_sweep(config: &SystemConfig) -> Result<SweepOutput> {
    config.validate()?;
    let scheme = config.scheme;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.parallelism).build()?;
    let trials: Vec<TrialResult> = pool.install(|| {
        (0..config.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(config, scheme, t))
            .collect::<Result<Vec<_>>>()
    })?;

    let grid = normalized_grid(config.ebar_grid_size);
    let fp = fingerprint(config);
    let frontier: Vec<&[TrialPoint]> = trials.iter().map(|t| t.frontier.as_slice()).collect();
    let sharing: Vec<&[TrialPoint]> = trials.iter().map(|t| t.sharing.as_slice()).collect();
    let curve = |label: String, pts: &[&[TrialPoint]]| RECurve {
        scheme: label,
        points: average(pts, &grid),
        trials: config.trials,
        seed: config.seed,
        fingerprint: fp.clone(),
    };
    let curves = vec![curve(scheme.label().to_string(), &frontier), curve(format!("{}_TS", scheme.label()), &sharing)];
    Ok(SweepOutput {
        curves,
        monotone_violations: trials.iter().map(|t| t.violations).sum(),
        unconverged_points: trials.iter().map(|t| t.unconverged).sum(),
        worst_shortfall: trials.iter().map(|t| t.worst_shortfall).fold(0.0, f64::max),
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scheme: String,
    pub ebar_normalized: f64,
    pub ebar_watts_mean: f64,
    pub rate_bits_mean: f64,
    pub energy_watts_mean: f64,
    pub powers_mean: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

fn header(width: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scheme", "ebar_normalized", "ebar_watts_mean", "rate_bits_mean", "energy_watts_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=width).map(|k| format!("power_tx{k}_mean")));
    h.push("trials".into());
    h.push("seed".into());
    h
}

/// Render curves in the CSV layout, rows in curve then grid order.
pub fn csv_string(curves: &[RECurve]) -> Result<String> {
    if curves.is_empty() {
        return Err(HarnessError::Empty("no curves"));
    }
    if curves.iter().any(|c| c.points.is_empty()) {
        return Err(HarnessError::Empty("empty grid"));
    }
    let width = curves[0].points[0].powers.len();
    if curves.iter().flat_map(|c| &c.points).any(|p| p.powers.len() != width) {
        return Err(HarnessError::MixedWidths);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::Io { path: "<memory>".into(), source: e.into() };
    w.write_record(header(width)).map_err(io)?;
    for c in curves {
        for p in &c.points {
            let mut rec = vec![
                c.scheme.clone(),
                format!("{:e}", p.ebar_normalized),
                format!("{:e}", p.ebar_watts),
                format!("{:e}", p.rate_bits),
                format!("{:e}", p.energy_watts),
            ];
            rec.extend(p.powers.iter().map(|x| format!("{x:e}")));
            rec.push(c.trials.to_string());
            rec.push(c.seed.to_string());
            w.write_record(&rec).map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io { path: "<memory>".into(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write curves to `path`; nothing is created when validation fails.
pub fn emit_csv(curves: &[RECurve], path: &Path) -> Result<()> {
    let text = csv_string(curves)?;
    std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

/// Parse text written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let bad = |line: usize, reason: String| HarnessError::Parse { line, reason };
    let head = match records.next() {
        Some(Ok(r)) => r,
        Some(Err(e)) => return Err(bad(1, e.to_string())),
        None => return Err(bad(1, "missing header".into())),
    };
    if head.len() < 7 {
        return Err(bad(1, format!("expected at least 7 columns, got {}", head.len())));
    }
    let width = head.len() - 7;
    let expected = header(width);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (n, rec) in records.enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(bad(line, format!("expected {} fields, got {}", expected.len(), rec.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            let t = &rec[idx];
            t.parse::<f64>().map_err(|_| bad(line, format!("bad number `{t}` in `{}`", expected[idx])))
        };
        let int = |idx: usize| -> Result<u64> {
            let t = &rec[idx];
            t.parse::<u64>().map_err(|_| bad(line, format!("bad integer `{t}` in `{}`", expected[idx])))
        };
        rows.push(CsvRow {
            scheme: rec[0].to_string(),
            ebar_normalized: num(1)?,
            ebar_watts_mean: num(2)?,
            rate_bits_mean: num(3)?,
            energy_watts_mean: num(4)?,
            powers_mean: (0..width).map(|k| num(5 + k)).collect::<Result<_>>()?,
            trials: int(5 + width)? as usize,
            seed: int(6 + width)?,
        });
    }
    Ok(rows)
}
