//! Scenario configuration, channel generation, effective-channel assembly and
//! the per-receiver rate and energy metrics.
//!
//! Indices are zero-based throughout the library: `H[i][j]` is the channel from
//! transmitter `j` to receiver `i`, and pair `k` means transmitter `k` with
//! receiver `k`.

pub mod dump;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, c, ComplexMatrix, NumericsError};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Rank-one energy beam design shared by every energy transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "MEB")]
    Meb,
    #[serde(rename = "MLB")]
    Mlb,
    #[serde(rename = "SLER")]
    Sler,
    #[serde(rename = "SLER_TILT")]
    SlerTilt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Meb, Scheme::Mlb, Scheme::Sler, Scheme::SlerTilt];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Meb => "MEB",
            Scheme::Mlb => "MLB",
            Scheme::Sler => "SLER",
            Scheme::SlerTilt => "SLER_TILT",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|sch| sch.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown scheme `{s}` (expected MEB, MLB, SLER or SLER_TILT)"))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Which interference model the information-transmitter optimisation sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Upper bound: interference among information transmitters ignored.
    #[serde(rename = "UP")]
    Up,
    /// Full interference, solved by iterative waterfilling.
    #[serde(rename = "P1")]
    P1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Outer power-control iteration cap.
    pub outer_max_iters: usize,
    /// Outer stop: `‖P⁺ − P‖ ≤ outer_tol · p_max`.
    pub outer_tol: f64,
    /// Cap on dual (multiplier) search iterations.
    pub dual_max_iters: usize,
    /// Relative tolerance on complementary-slackness residuals.
    pub kkt_tol: f64,
    /// Gauss-Seidel sweep cap for iterative waterfilling.
    pub iwf_max_sweeps: usize,
    /// Fixed-point tolerance for iterative waterfilling, relative to `p_max`.
    pub iwf_tol: f64,
    /// Fraction of the maximal step taken by the outer loop, in `(0, 1]`.
    pub step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_max_iters: 50,
            outer_tol: 1e-6,
            dual_max_iters: 500,
            kkt_tol: 1e-9,
            iwf_max_sweeps: 200,
            iwf_tol: 1e-10,
            step_fraction: 1.0,
        }
    }
}

/// Everything that defines one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of transmitter-receiver pairs.
    pub k: usize,
    /// Number of pairs in energy-harvesting mode.
    pub k1: usize,
    /// Antennas per node.
    pub m: usize,
    /// Per-transmitter power budget (W).
    pub p_max: f64,
    /// Receiver noise power (W).
    pub noise_power: f64,
    /// Power attenuation applied on top of the `alpha` weights.
    pub path_loss: f64,
    /// Full `K × K` link-strength matrix; overrides `alpha_diag`/`alpha_offdiag`.
    pub alpha: Option<Vec<Vec<f64>>>,
    pub alpha_diag: f64,
    pub alpha_offdiag: f64,
    /// RF-to-DC conversion efficiency.
    pub zeta: f64,
    /// Count receiver noise in the harvested energy.
    pub include_noise_energy: bool,
    pub scheme: Scheme,
    pub variant: Variant,
    /// Geometric decay applied to the SLER regulariser when tilting.
    pub tilt_decay: f64,
    pub ebar_grid_size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Choose the energy-harvesting pairs by SLER-sum selection.
    pub select: bool,
    /// Re-run selection at every grid point instead of once per trial.
    pub reselect_per_point: bool,
    /// Worker threads for Monte-Carlo trials; 0 means all available cores.
    pub parallelism: usize,
    /// Count the information rate delivered during the energy phase of time sharing.
    pub eh_phase_rate: bool,
    pub solver: SolverConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            k: 2,
            k1: 1,
            m: 4,
            p_max: 0.05,
            noise_power: 1e-6,
            path_loss: 1e-3,
            alpha: None,
            alpha_diag: 1.0,
            alpha_offdiag: 0.6,
            zeta: 1.0,
            include_noise_energy: false,
            scheme: Scheme::Sler,
            variant: Variant::P1,
            tilt_decay: 0.9,
            ebar_grid_size: 21,
            trials: 100,
            seed: 1,
            select: false,
            reselect_per_point: false,
            parallelism: 0,
            eh_phase_rate: true,
            solver: SolverConfig::default(),
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ChannelError {
    ChannelError::InvalidConfig { field, reason: reason.into() }
}

impl SystemConfig {
    /// Parse a JSON document; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = serde_json::from_str(text)
            .map_err(|e| ChannelError::InvalidConfig { field: "<json>", reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        match &self.alpha {
            Some(a) => a[i][j],
            None if i == j => self.alpha_diag,
            None => self.alpha_offdiag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(invalid("k", "need at least one pair"));
        }
        if self.k1 >= self.k {
            return Err(invalid("k1", format!("must satisfy 0 <= k1 < k (k = {})", self.k)));
        }
        if self.m < 1 {
            return Err(invalid("m", "need at least one antenna"));
        }
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("p_max", self.p_max)?;
        positive("noise_power", self.noise_power)?;
        positive("path_loss", self.path_loss)?;
        positive("zeta", self.zeta)?;
        if let Some(a) = &self.alpha {
            if a.len() != self.k || a.iter().any(|row| row.len() != self.k) {
                return Err(invalid("alpha", format!("must be a {0}x{0} matrix", self.k)));
            }
        }
        for i in 0..self.k {
            for j in 0..self.k {
                let a = self.alpha(i, j);
                if !(0.0..=1.0).contains(&a) {
                    let field = if self.alpha.is_some() {
                        "alpha"
                    } else if i == j {
                        "alpha_diag"
                    } else {
                        "alpha_offdiag"
                    };
                    return Err(invalid(field, format!("weights must lie in [0, 1], got {a}")));
                }
            }
        }
        if !(self.tilt_decay > 0.0 && self.tilt_decay < 1.0) {
            return Err(invalid("tilt_decay", format!("must lie in (0, 1), got {}", self.tilt_decay)));
        }
        if self.ebar_grid_size < 1 {
            return Err(invalid("ebar_grid_size", "need at least one grid point"));
        }
        if self.trials < 1 {
            return Err(invalid("trials", "need at least one trial"));
        }
        let s = &self.solver;
        if s.outer_max_iters < 1 {
            return Err(invalid("solver.outer_max_iters", "must be >= 1"));
        }
        if s.dual_max_iters < 1 {
            return Err(invalid("solver.dual_max_iters", "must be >= 1"));
        }
        if s.iwf_max_sweeps < 1 {
            return Err(invalid("solver.iwf_max_sweeps", "must be >= 1"));
        }
        for (field, v) in [
            ("solver.outer_tol", s.outer_tol),
            ("solver.kkt_tol", s.kkt_tol),
            ("solver.iwf_tol", s.iwf_tol),
        ] {
            positive(field, v)?;
        }
        if !(s.step_fraction > 0.0 && s.step_fraction <= 1.0) {
            return Err(invalid("solver.step_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// The `K × K` grid of `M × M` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    k: usize,
    m: usize,
    h: Vec<ComplexMatrix>,
}

impl ChannelSet {
    /// Build from a row-major `K × K` list (`blocks[i * k + j]` = `H[i][j]`).
    pub fn from_blocks(k: usize, m: usize, blocks: Vec<ComplexMatrix>) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(ChannelError::InvalidArgument("k and m must be positive".into()));
        }
        if blocks.len() != k * k {
            return Err(ChannelError::InvalidArgument(format!(
                "expected {} blocks, got {}",
                k * k,
                blocks.len()
            )));
        }
        if blocks.iter().any(|b| b.nrows() != m || b.ncols() != m) {
            return Err(ChannelError::InvalidArgument(format!("every block must be {m}x{m}")));
        }
        if blocks.iter().any(|b| !numerics::is_finite(b)) {
            return Err(ChannelError::Numerics(NumericsError::NonFinite));
        }
        Ok(Self { k, m, h: blocks })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Channel from transmitter `j` to receiver `i`.
    pub fn get(&self, i: usize, j: usize) -> &ComplexMatrix {
        &self.h[i * self.k + j]
    }

    pub fn blocks(&self) -> &[ComplexMatrix] {
        &self.h
    }

    /// Copy with pair labels permuted: new pair `a` is old pair `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let h = (0..k * k).map(|idx| self.get(perm[idx / k], perm[idx % k]).clone()).collect();
        Self { k, m: self.m, h }
    }
}

/// Keyed substream: independent of the order in which links are drawn.
fn link_rng(seed: u64, trial: u64, i: usize, j: usize, substream: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..20].copy_from_slice(&(i as u32).to_le_bytes());
    key[20..24].copy_from_slice(&(j as u32).to_le_bytes());
    key[24..32].copy_from_slice(&substream.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

fn draw_gaussian(m: usize, rng: &mut ChaCha20Rng) -> ComplexMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(m, m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * scale, im * scale)
    })
}

/// Draw the trial's channels: i.i.d. `CN(0, 1)` entries rescaled so that
/// `‖H_ij‖_F² = path_loss · α_ij · M`.
pub fn generate_channels(config: &SystemConfig, trial_index: u64) -> Result<ChannelSet> {
    config.validate()?;
    let (k, m) = (config.k, config.m);
    let mut blocks = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let alpha = config.alpha(i, j);
            if alpha == 0.0 {
                blocks.push(ComplexMatrix::zeros(m, m));
                continue;
            }
            let mut substream = 0;
            let raw = loop {
                let candidate = draw_gaussian(m, &mut link_rng(config.seed, trial_index, i, j, substream));
                if numerics::frobenius_sq(&candidate) > 0.0 {
                    break candidate;
                }
                substream += 1;
            };
            let norm = numerics::frobenius_sq(&raw).sqrt();
            let gain = (config.path_loss * alpha * m as f64).sqrt() / norm;
            blocks.push(raw * c(gain));
        }
    }
    ChannelSet::from_blocks(k, m, blocks)
}

/// Split of the pairs into energy-harvesting and information-decoding modes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    eh: Vec<usize>,
    id: Vec<usize>,
}

impl Partition {
    pub fn new(k: usize, mut eh: Vec<usize>, mut id: Vec<usize>) -> Result<Self> {
        eh.sort_unstable();
        id.sort_unstable();
        let mut seen = vec![false; k];
        for &x in eh.iter().chain(id.iter()) {
            if x >= k {
                return Err(ChannelError::InvalidPartition(format!("index {x} out of range for k = {k}")));
            }
            if seen[x] {
                return Err(ChannelError::InvalidPartition(format!("index {x} appears twice")));
            }
            seen[x] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ChannelError::InvalidPartition(format!("index {missing} not assigned")));
        }
        if id.is_empty() {
            return Err(ChannelError::InvalidPartition("need at least one information receiver".into()));
        }
        Ok(Self { eh, id })
    }

    /// Energy set given; the remaining pairs decode information.
    pub fn from_eh(k: usize, eh: Vec<usize>) -> Result<Self> {
        let id = (0..k).filter(|x| !eh.contains(x)).collect();
        Self::new(k, eh, id)
    }

    /// Pairs `0..k1` harvest, `k1..k` decode.
    pub fn default_for(k: usize, k1: usize) -> Result<Self> {
        Self::new(k, (0..k1).collect(), (k1..k).collect())
    }

    pub fn eh(&self) -> &[usize] {
        &self.eh
    }

    pub fn id(&self) -> &[usize] {
        &self.id
    }

    pub fn k(&self) -> usize {
        self.eh.len() + self.id.len()
    }
}

/// Block channels seen by the reduced two-user problem.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    pub partition: Partition,
    /// Per energy transmitter: stack of `H[i][k]` over energy receivers `i`.
    pub h11: Vec<ComplexMatrix>,
    /// Per energy transmitter: stack of `H[i][k]` over information receivers `i`.
    pub h21: Vec<ComplexMatrix>,
    /// Energy receivers × information transmitters block grid.
    pub h12: ComplexMatrix,
    /// Column blocks of `h12`, one per information transmitter.
    pub h12_blocks: Vec<ComplexMatrix>,
    /// Block diagonal of the direct information links.
    pub h22: ComplexMatrix,
}

pub fn assemble_effective(channels: &ChannelSet, partition: &Partition) -> Result<EffectiveChannels> {
    if partition.k() != channels.k() {
        return Err(ChannelError::InvalidPartition(format!(
            "partition covers {} pairs, channels have {}",
            partition.k(),
            channels.k()
        )));
    }
    let m = channels.m();
    let (eh, id) = (partition.eh(), partition.id());
    let stack = |rows: &[usize], tx: usize| -> ComplexMatrix {
        let blocks: Vec<&ComplexMatrix> = rows.iter().map(|&i| channels.get(i, tx)).collect();
        numerics::vstack(&blocks)
    };
    let h11 = eh.iter().map(|&k| stack(eh, k)).collect();
    let h21 = eh.iter().map(|&k| stack(id, k)).collect();
    let h12_blocks: Vec<ComplexMatrix> = id.iter().map(|&j| stack(eh, j)).collect();
    let mut h12 = ComplexMatrix::zeros(eh.len() * m, id.len() * m);
    for (col, block) in h12_blocks.iter().enumerate() {
        h12.view_mut((0, col * m), (block.nrows(), m)).copy_from(block);
    }
    let mut h22 = ComplexMatrix::zeros(id.len() * m, id.len() * m);
    for (b, &i) in id.iter().enumerate() {
        h22.view_mut((b * m, b * m), (m, m)).copy_from(channels.get(i, i));
    }
    Ok(EffectiveChannels { partition: partition.clone(), h11, h21, h12, h12_blocks, h22 })
}

fn check_covariances(channels: &ChannelSet, covariances: &[ComplexMatrix]) -> Result<()> {
    if covariances.len() != channels.k() {
        return Err(ChannelError::InvalidArgument(format!(
            "expected {} covariances, got {}",
            channels.k(),
            covariances.len()
        )));
    }
    let m = channels.m();
    if covariances.iter().any(|q| q.nrows() != m || q.ncols() != m) {
        return Err(ChannelError::InvalidArgument(format!("covariances must be {m}x{m}")));
    }
    Ok(())
}

fn check_psd(q: &ComplexMatrix) -> Result<()> {
    let eig = numerics::hermitian_eig(q)?;
    let tol = 1e-10 * eig.max_value().abs().max(1e-300);
    if eig.min_value() < -tol || numerics::frobenius_sq(&(q - q.adjoint())) > 1e-20 * numerics::frobenius_sq(q).max(1e-300) {
        return Err(ChannelError::InvalidArgument(format!(
            "covariance is not Hermitian PSD (min eigenvalue {:e})",
            eig.min_value()
        )));
    }
    Ok(())
}

/// `σ² I + Σ_{j≠i} H_ij Q_j H_ijᴴ`.
pub fn interference_covariance(
    channels: &ChannelSet,
    covariances: &[ComplexMatrix],
    receiver: usize,
    noise_power: f64,
) -> Result<ComplexMatrix> {
    check_covariances(channels, covariances)?;
    let mut r = numerics::identity(channels.m()) * c(noise_power);
    for (j, q) in covariances.iter().enumerate() {
        if j != receiver {
            let h = channels.get(receiver, j);
            r += h * q * h.adjoint();
        }
    }
    Ok(numerics::hermitian_part(&r))
}

/// `log det(I + H_iiᴴ R⁻¹ H_ii Q_i)` in nats.
pub fn achievable_rate(
    channels: &ChannelSet,
    covariances: &[ComplexMatrix],
    receiver: usize,
    noise_power: f64,
) -> Result<f64> {
    check_covariances(channels, covariances)?;
    let q = &covariances[receiver];
    check_psd(q)?;
    let r = interference_covariance(channels, covariances, receiver, noise_power)?;
    let h = channels.get(receiver, receiver);
    rate_given_interference(h, q, &r)
}

/// `log det(R + H Q Hᴴ) − log det R`, clamped at zero.
pub fn rate_given_interference(h: &ComplexMatrix, q: &ComplexMatrix, r: &ComplexMatrix) -> Result<f64> {
    let signal = numerics::hermitian_part(&(r + h * q * h.adjoint()));
    let rate = numerics::log_det_hpd(&signal)? - numerics::log_det_hpd(r)?;
    Ok(rate.max(0.0))
}

/// Harvested energy at a receiver. Noise is dropped unless `noise_power` is
/// given, in which case `tr(σ² I)` is added before the efficiency factor.
pub fn harvested_energy(
    channels: &ChannelSet,
    covariances: &[ComplexMatrix],
    receiver: usize,
    zeta: f64,
    noise_power: Option<f64>,
) -> Result<f64> {
    check_covariances(channels, covariances)?;
    let transferred: f64 = covariances
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let h = channels.get(receiver, j);
            numerics::trace_re(&(h * q * h.adjoint()))
        })
        .sum();
    let noise = noise_power.map_or(0.0, |s| s * channels.m() as f64);
    Ok(zeta * (transferred + noise))
}
