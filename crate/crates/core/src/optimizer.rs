//! Power control for the energy transmitters and covariance optimisation for
//! the information transmitters.
//!
//! Energies handed to this module are harvested energies (W). Internally the
//! optimiser works with transferred energy `(Ē − floor) / ζ`, where the floor
//! is the receiver-noise contribution when that model is enabled.

use thiserror::Error;

use crate::beamforming::{self, BeamError, BeamPlan, BeamStatistics};
use crate::channel::{ChannelError, ChannelSet, EffectiveChannels, Scheme, SystemConfig, Variant};
use crate::numerics::{self, c, ComplexMatrix, ComplexVector, HermitianEig, NumericsError};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("required energy {e_bar:e} W exceeds the maximum {e_max:e} W")]
    InfeasibleTarget { e_bar: f64, e_max: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

/// Energy transmitter beams plus information covariances (partition order).
#[derive(Debug, Clone)]
pub struct Strategy {
    pub beams: BeamPlan,
    pub info_covariances: Vec<ComplexMatrix>,
}

impl Strategy {
    /// Covariances indexed by pair number.
    pub fn pair_covariances(&self, effective: &EffectiveChannels) -> Vec<ComplexMatrix> {
        let p = &effective.partition;
        let mut out = vec![ComplexMatrix::zeros(0, 0); p.k()];
        for (b, &k) in p.eh().iter().enumerate() {
            out[k] = self.beams.covariance(b);
        }
        for (a, &i) in p.id().iter().enumerate() {
            out[i] = self.info_covariances[a].clone();
        }
        out
    }
}

/// Multipliers of the energy constraint and the per-transmitter power budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// `+∞` marks the limit where every information transmitter is steered
    /// entirely onto its cross link.
    pub lambda: f64,
    pub mu: Vec<f64>,
}

/// One point of a rate-energy frontier.
#[derive(Debug, Clone)]
pub struct REPoint {
    /// Required harvested energy (W).
    pub e_bar: f64,
    /// Sum rate (nats per channel use).
    pub rate: f64,
    /// Delivered harvested energy (W).
    pub energy: f64,
    /// Energy transmitter powers, partition order.
    pub powers: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Times an energy power increased between outer iterations.
    pub monotone_violations: usize,
    pub strategy: Strategy,
}

/// Maps transferred energy to harvested energy: `ζ·x + floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub zeta: f64,
    pub floor: f64,
}

impl EnergyModel {
    pub fn from_config(config: &SystemConfig, k1: usize) -> Self {
        let floor = if config.include_noise_energy {
            config.zeta * (k1 * config.m) as f64 * config.noise_power
        } else {
            0.0
        };
        Self { zeta: config.zeta, floor }
    }

    pub fn harvested(&self, transferred: f64) -> f64 {
        self.zeta * transferred + self.floor
    }

    pub fn transferred(&self, harvested: f64) -> f64 {
        ((harvested - self.floor) / self.zeta).max(0.0)
    }
}

/// `P·(Σ ω_j + Σ_{j∈ID} σ₁(H̃12_j)²)`, transferred energy.
pub fn e_max(statistics: &BeamStatistics, effective: &EffectiveChannels, p_max: f64) -> Result<f64> {
    let cross: f64 = effective
        .h12_blocks
        .iter()
        .map(|h| numerics::spectral_norm(h).map(|s| s * s))
        .sum::<std::result::Result<f64, _>>()?;
    Ok(p_max * (statistics.omega.iter().sum::<f64>() + cross))
}

/// Directions and statistics of `scheme` at transferred energy `e_transfer`.
pub fn scheme_beams(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    scheme: Scheme,
    e_transfer: f64,
    tilt_exponent: u32,
) -> Result<(Vec<ComplexVector>, BeamStatistics)> {
    let dirs = beamforming::scheme_directions(effective, scheme, e_transfer, config.p_max, tilt_exponent, config.tilt_decay)?;
    let stats = beamforming::beam_statistics(effective, channels, &dirs)?;
    Ok((dirs, stats))
}

/// Maximum harvested energy of `scheme`.
///
/// SLER directions depend on the target, so its maximum is the smallest
/// fixed point of `Ē ↦ e_max(directions(Ē))`, reached by iterating from zero.
pub fn scheme_e_max(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    scheme: Scheme,
) -> Result<f64> {
    let model = EnergyModel::from_config(config, effective.partition.eh().len());
    Ok(model.harvested(scheme_e_max_transfer(channels, effective, config, scheme)?))
}

fn scheme_e_max_transfer(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    scheme: Scheme,
) -> Result<f64> {
    let eval = |x: f64| -> Result<f64> {
        let (_, stats) = scheme_beams(channels, effective, config, scheme, x, 0)?;
        e_max(&stats, effective, config.p_max)
    };
    match scheme {
        Scheme::Meb | Scheme::Mlb => eval(0.0),
        Scheme::Sler | Scheme::SlerTilt => {
            let mut x = eval(0.0)?;
            for _ in 0..500 {
                let next = eval(x)?;
                if (next - x).abs() <= 1e-14 * x.abs().max(f64::MIN_POSITIVE) {
                    return Ok(next.min(x));
                }
                x = next;
            }
            Ok(x)
        }
    }
}

/// Interference plus noise seen by the `a`-th information receiver.
fn interference(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    beams: &BeamPlan,
    info: &[ComplexMatrix],
    a: usize,
    variant: Variant,
    noise: f64,
) -> ComplexMatrix {
    let p = &effective.partition;
    let i = p.id()[a];
    let mut r = numerics::identity(channels.m()) * c(noise);
    for (b, &j) in p.eh().iter().enumerate() {
        if beams.powers[b] > 0.0 {
            let w = channels.get(i, j) * &beams.directions[b];
            r += numerics::outer(&w) * c(beams.powers[b]);
        }
    }
    if variant == Variant::P1 {
        for (b, &j) in p.id().iter().enumerate() {
            if b != a {
                let h = channels.get(i, j);
                r += h * &info[b] * h.adjoint();
            }
        }
    }
    numerics::hermitian_part(&r)
}

/// Sum rate under the variant's interference model, in nats.
pub fn objective(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    strategy: &Strategy,
    variant: Variant,
    noise: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (a, &i) in effective.partition.id().iter().enumerate() {
        let r = interference(channels, effective, &strategy.beams, &strategy.info_covariances, a, variant, noise);
        // Scale by the noise level so both log-dets are O(1).
        let r = r * c(1.0 / noise);
        let q = &strategy.info_covariances[a] * c(1.0 / noise);
        total += crate::channel::rate_given_interference(channels.get(i, i), &q, &r)?;
    }
    Ok(total)
}

/// Gradient of the sum rate with respect to the energy powers, information
/// covariances held fixed. Every component is `≤ 0` by construction.
pub fn power_gradient(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    strategy: &Strategy,
    variant: Variant,
    noise: f64,
) -> Result<Vec<f64>> {
    let p = &effective.partition;
    let mut grad = vec![0.0; p.eh().len()];
    for (a, &i) in p.id().iter().enumerate() {
        let r = interference(channels, effective, &strategy.beams, &strategy.info_covariances, a, variant, noise);
        let h = channels.get(i, i);
        let s = numerics::hermitian_part(&(h * &strategy.info_covariances[a] * h.adjoint()));
        // ((S + R)⁻¹ − R⁻¹) = −R^{-1/2} T (I + T)⁻¹ R^{-1/2}, T = R^{-1/2} S R^{-1/2}.
        let w = numerics::inv_sqrt_psd(&r)?;
        let t = numerics::hermitian_eig(&numerics::hermitian_part(&(&w * s * &w)))?;
        let mut b = &w * &t.vectors;
        for (col, &tv) in t.values.iter().enumerate() {
            let tv = tv.max(0.0);
            let f = (tv / (1.0 + tv)).sqrt();
            for row in 0..b.nrows() {
                b[(row, col)] *= f;
            }
        }
        for (k, &j) in p.eh().iter().enumerate() {
            let leak = channels.get(i, j) * &strategy.beams.directions[k];
            grad[k] -= (b.adjoint() * leak).norm_squared();
        }
    }
    Ok(grad)
}

/// Largest step along the gradient that keeps the energy constraint tight:
/// `(Ē − E_info − ωᵀP) / (ωᵀ∇)`, with `0` when `ωᵀ∇ = 0`.
pub fn max_step(omega: &[f64], powers: &[f64], info_energy: f64, e_transfer: f64, gradient: &[f64]) -> f64 {
    let slope: f64 = omega.iter().zip(gradient).map(|(w, g)| w * g).sum();
    if slope == 0.0 {
        return 0.0;
    }
    let eh: f64 = omega.iter().zip(powers).map(|(w, p)| w * p).sum();
    ((e_transfer - info_energy - eh) / slope).max(0.0)
}

/// Step `Δ ≥ 0` such that `ωᵀ max(P + Δ∇, 0)` equals `Ē − E_info`.
///
/// Coincides with [`max_step`] when no power is clamped at zero. Returns
/// `+∞` when even zeroing every decreasing power leaves a surplus.
pub fn clamped_step(omega: &[f64], powers: &[f64], info_energy: f64, e_transfer: f64, gradient: &[f64]) -> f64 {
    let need = e_transfer - info_energy;
    let energy_at = |step: f64| -> f64 {
        omega.iter().zip(powers).zip(gradient).map(|((w, p), g)| w * (p + step * g).max(0.0)).sum()
    };
    if energy_at(0.0) <= need {
        return 0.0;
    }
    let mut breaks: Vec<f64> = powers
        .iter()
        .zip(gradient)
        .filter(|(_, g)| **g < 0.0)
        .map(|(p, g)| p / -g)
        .collect();
    breaks.sort_by(f64::total_cmp);
    let mut start = 0.0;
    for &end in &breaks {
        let (e0, e1) = (energy_at(start), energy_at(end));
        if e1 <= need {
            if e0 == e1 {
                return start;
            }
            return start + (e0 - need) / (e0 - e1) * (end - start);
        }
        start = end;
    }
    f64::INFINITY
}

/// Solver knobs used by [`inner_solve`].
#[derive(Debug, Clone, Copy)]
pub struct InnerSettings {
    pub p_max: f64,
    pub noise: f64,
    pub dual_max_iters: usize,
    pub kkt_tol: f64,
    pub iwf_max_sweeps: usize,
    pub iwf_tol: f64,
}

impl InnerSettings {
    pub fn from_config(config: &SystemConfig) -> Self {
        let s = &config.solver;
        Self {
            p_max: config.p_max,
            noise: config.noise_power,
            dual_max_iters: s.dual_max_iters,
            kkt_tol: s.kkt_tol,
            iwf_max_sweeps: s.iwf_max_sweeps,
            iwf_tol: s.iwf_tol,
        }
    }
}

/// Result of the information-transmitter optimisation for fixed energy beams.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub covariances: Vec<ComplexMatrix>,
    pub dual: DualState,
    /// Transferred energy delivered by the information transmitters.
    pub energy: f64,
    pub converged: bool,
}

/// Per-information-transmitter data that does not depend on the multipliers.
struct CrossLink {
    /// Eigendecomposition of `H̃12ᴴ H̃12`.
    gram: HermitianEig,
    top: ComplexVector,
}

impl CrossLink {
    fn new(h12: &ComplexMatrix) -> Result<Self> {
        let gram = numerics::hermitian_eig(&numerics::hermitian_part(&(h12.adjoint() * h12)))?;
        let top = gram.vectors.column(0).into_owned();
        Ok(Self { gram, top })
    }

    fn g_max(&self) -> f64 {
        self.gram.max_value().max(0.0)
    }

    fn energy(&self, q: &ComplexMatrix) -> f64 {
        // tr(G Q) with G = U diag(g) Uᴴ.
        let uq = self.gram.vectors.adjoint() * q * &self.gram.vectors;
        self.gram.values.iter().enumerate().map(|(k, &g)| g.max(0.0) * uq[(k, k)].re).sum()
    }
}

struct BestResponse {
    q: ComplexMatrix,
    mu: f64,
}

/// Classical waterfilling over the eigenmodes of `N`.
fn waterfill(n_eig: &HermitianEig, p_max: f64) -> BestResponse {
    let gains: Vec<f64> = n_eig.values.iter().map(|&s| s.max(0.0)).collect();
    let dim = gains.len();
    let mut active = gains.iter().take_while(|&&s| s > 0.0).count();
    let mut level = 0.0;
    while active > 0 {
        let inv_sum: f64 = gains[..active].iter().map(|s| 1.0 / s).sum();
        level = (p_max + inv_sum) / active as f64;
        if level > 1.0 / gains[active - 1] {
            break;
        }
        active -= 1;
    }
    if active == 0 {
        return BestResponse { q: ComplexMatrix::zeros(dim, dim), mu: f64::INFINITY };
    }
    let powers: Vec<f64> = (0..dim).map(|k| if k < active { (level - 1.0 / gains[k]).max(0.0) } else { 0.0 }).collect();
    let total: f64 = powers.iter().sum();
    let scale = if total > 0.0 { p_max / total } else { 0.0 };
    let q = eig_combination(&n_eig.vectors, &powers.iter().map(|p| p * scale).collect::<Vec<_>>());
    BestResponse { q, mu: 1.0 / level }
}

fn eig_combination(vectors: &ComplexMatrix, weights: &[f64]) -> ComplexMatrix {
    let mut scaled = vectors.clone();
    for (col, &w) in weights.iter().enumerate() {
        for row in 0..scaled.nrows() {
            scaled[(row, col)] *= w;
        }
    }
    numerics::hermitian_part(&(scaled * vectors.adjoint()))
}

/// Closed-form maximiser of `log det(I + H̄ Q H̄ᴴ) − tr(A Q)` for Hermitian
/// positive definite `A`: `A^{-1/2} V diag((1 − 1/σ_j²)⁺) Vᴴ A^{-1/2}`, with
/// `σ_j, V` the singular values and right vectors of `H̄ A^{-1/2}`.
pub fn waterfilling_covariance(h_bar: &ComplexMatrix, a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let w = numerics::inv_sqrt_psd(a)?;
    let svd = numerics::svd(&(h_bar * &w))?;
    let dim = a.nrows();
    let weights: Vec<f64> = (0..dim)
        .map(|k| {
            let s = svd.singular_values.get(k).copied().unwrap_or(0.0);
            if s * s > 1.0 { 1.0 - 1.0 / (s * s) } else { 0.0 }
        })
        .collect();
    let x = eig_combination(&svd.right_vectors, &weights);
    Ok(numerics::hermitian_part(&(&w * x * &w)))
}

/// `A^{-1/2} X A^{-1/2}` for `A = µI − λG`, `µ = λ g_max + e^s`.
fn shaped_covariance(n: &ComplexMatrix, link: &CrossLink, lambda: f64, s: f64) -> Result<(ComplexMatrix, f64)> {
    let gap = s.exp();
    let g_max = link.g_max();
    let d: Vec<f64> = link.gram.values.iter().map(|&g| gap + lambda * (g_max - g.max(0.0))).collect();
    let w = eig_combination(&link.gram.vectors, &d.iter().map(|x| 1.0 / x.sqrt()).collect::<Vec<_>>());
    let nt = numerics::hermitian_part(&(&w * n * &w));
    let eig = numerics::hermitian_eig(&nt)?;
    let weights: Vec<f64> = eig.values.iter().map(|&v| if v > 1.0 { 1.0 - 1.0 / v } else { 0.0 }).collect();
    let x = eig_combination(&eig.vectors, &weights);
    let q = numerics::hermitian_part(&(&w * x * &w));
    let tr = numerics::trace_re(&q);
    Ok((q, tr))
}

/// Best response of one information transmitter for multiplier `λ`, with
/// `µ` tuned so the power budget is met with equality.
fn best_response(
    n: &ComplexMatrix,
    link: &CrossLink,
    lambda: f64,
    mu_hint: Option<f64>,
    settings: &InnerSettings,
) -> Result<BestResponse> {
    let p_max = settings.p_max;
    let n_eig = numerics::hermitian_eig(n)?;
    let wf = waterfill(&n_eig, p_max);
    if lambda == 0.0 || link.g_max() == 0.0 || !wf.mu.is_finite() {
        return Ok(wf);
    }
    let g_max = link.g_max();
    let mut s = match mu_hint {
        Some(mu) if mu.is_finite() && mu > lambda * g_max => (mu - lambda * g_max).ln(),
        _ => wf.mu.ln(),
    };
    let (mut q, mut tr) = shaped_covariance(n, link, lambda, s)?;
    // Bracket tr(Q(s)) = P: tr is non-increasing in s.
    let (mut lo, mut hi);
    let (mut f_lo, mut f_hi);
    let mut best = (q.clone(), tr, s);
    if tr > p_max {
        lo = s;
        f_lo = tr - p_max;
        loop {
            s += 2.0;
            (q, tr) = shaped_covariance(n, link, lambda, s)?;
            if tr <= p_max {
                hi = s;
                f_hi = tr - p_max;
                best = (q.clone(), tr, s);
                break;
            }
            lo = s;
            f_lo = tr - p_max;
            if s > 700.0 {
                return Err(OptimizerError::InvalidArgument("power multiplier bracket failed".into()));
            }
        }
    } else {
        hi = s;
        f_hi = tr - p_max;
        loop {
            s -= 2.0;
            let (q2, tr2) = shaped_covariance(n, link, lambda, s)?;
            if tr2 > p_max {
                lo = s;
                f_lo = tr2 - p_max;
                break;
            }
            hi = s;
            f_hi = tr2 - p_max;
            best = (q2, tr2, s);
            if s < -700.0 {
                return Err(OptimizerError::InvalidArgument("power multiplier bracket failed".into()));
            }
        }
    }
    // Illinois iteration on s.
    let mut side = 0i8;
    for _ in 0..settings.dual_max_iters {
        if (best.1 - p_max).abs() <= 1e-13 * p_max || (hi - lo) <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        let mut x = if f_lo.is_finite() && f_hi.is_finite() && f_lo != f_hi {
            hi - f_hi * (hi - lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let (qx, trx) = shaped_covariance(n, link, lambda, x)?;
        let fx = trx - p_max;
        if fx > 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            best = (qx, trx, x);
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let (mut q, tr, s) = best;
    if tr > 0.0 {
        q *= c(p_max / tr);
    }
    Ok(BestResponse { q, mu: lambda * g_max + s.exp() })
}

struct InnerProblem<'a> {
    channels: &'a ChannelSet,
    effective: &'a EffectiveChannels,
    beams: &'a BeamPlan,
    links: Vec<CrossLink>,
    variant: Variant,
    settings: InnerSettings,
}

impl<'a> InnerProblem<'a> {
    fn n_matrix(&self, info: &[ComplexMatrix], a: usize) -> Result<ComplexMatrix> {
        let i = self.effective.partition.id()[a];
        let r = interference(self.channels, self.effective, self.beams, info, a, self.variant, self.settings.noise);
        let h = self.channels.get(i, i);
        let rinv = numerics::inverse_hpd(&r)?;
        Ok(numerics::hermitian_part(&(h.adjoint() * rinv * h)))
    }

    fn energy(&self, info: &[ComplexMatrix]) -> f64 {
        self.links.iter().zip(info).map(|(l, q)| l.energy(q)).sum()
    }

    fn max_energy(&self) -> f64 {
        self.links.iter().map(|l| self.settings.p_max * l.g_max()).sum()
    }

    fn steered(&self) -> Vec<ComplexMatrix> {
        self.links.iter().map(|l| numerics::outer(&l.top) * c(self.settings.p_max)).collect()
    }

    /// Covariances for a fixed `λ`; iterative waterfilling when the
    /// information transmitters interfere with each other.
    fn solve_at(&self, lambda: f64, info: &mut [ComplexMatrix], mu: &mut [f64]) -> Result<bool> {
        let users = info.len();
        let coupled = self.variant == Variant::P1 && users > 1;
        let sweeps = if coupled { self.settings.iwf_max_sweeps } else { 1 };
        for _ in 0..sweeps {
            let mut change: f64 = 0.0;
            for a in 0..users {
                let n = self.n_matrix(info, a)?;
                let hint = if mu[a].is_finite() && mu[a] > 0.0 { Some(mu[a]) } else { None };
                let br = best_response(&n, &self.links[a], lambda, hint, &self.settings)?;
                change = change.max(numerics::frobenius_sq(&(&br.q - &info[a])).sqrt());
                info[a] = br.q;
                mu[a] = br.mu;
            }
            if !coupled || change <= self.settings.iwf_tol * self.settings.p_max {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Optimise the information covariances for fixed energy beams so that they
/// deliver at least `target` transferred energy (when possible) at maximal
/// sum rate. `warm` seeds the multipliers and, for coupled users, the
/// covariances.
#[allow(clippy::too_many_arguments)]
pub fn inner_solve(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    beams: &BeamPlan,
    target: f64,
    variant: Variant,
    warm: Option<(&DualState, &[ComplexMatrix])>,
    settings: &InnerSettings,
) -> Result<InnerSolution> {
    let users = effective.partition.id().len();
    if beams.directions.len() != effective.partition.eh().len() || beams.powers.len() != beams.directions.len() {
        return Err(OptimizerError::InvalidArgument("beam plan does not match the partition".into()));
    }
    let links = effective.h12_blocks.iter().map(CrossLink::new).collect::<Result<Vec<_>>>()?;
    let problem = InnerProblem { channels, effective, beams, links, variant, settings: *settings };
    let m = channels.m();

    let (mut info, mut mu) = match warm {
        Some((dual, qs)) if qs.len() == users && dual.mu.len() == users => (qs.to_vec(), dual.mu.clone()),
        _ => (vec![ComplexMatrix::zeros(m, m); users], vec![f64::NAN; users]),
    };
    let e_cap = problem.max_energy();
    if target > 0.0 && target >= e_cap * (1.0 - 1e-10) {
        let covariances = problem.steered();
        let energy = problem.energy(&covariances);
        return Ok(InnerSolution {
            covariances,
            dual: DualState { lambda: f64::INFINITY, mu: vec![f64::INFINITY; users] },
            energy,
            converged: true,
        });
    }

    let mut zero_info = if variant == Variant::P1 && users > 1 { info.clone() } else { vec![ComplexMatrix::zeros(m, m); users] };
    let mut zero_mu = mu.clone();
    let conv0 = problem.solve_at(0.0, &mut zero_info, &mut zero_mu)?;
    let e0 = problem.energy(&zero_info);
    if e0 >= target {
        return Ok(InnerSolution {
            covariances: zero_info,
            dual: DualState { lambda: 0.0, mu: zero_mu },
            energy: e0,
            converged: conv0,
        });
    }

    // Bracket λ: E(λ) is non-decreasing.
    let g_top = problem.links.iter().map(|l| l.g_max()).fold(0.0, f64::max);
    let mu0 = zero_mu.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let lam = warm
        .map(|(d, _)| d.lambda)
        .filter(|l| l.is_finite() && *l > 0.0)
        .unwrap_or(mu0 / g_top);
    if !coupled_start_available(&info) {
        info = zero_info;
        mu = zero_mu;
    }
    let eval = |lam: f64, info: &mut Vec<ComplexMatrix>, mu: &mut Vec<f64>| -> Result<(f64, bool)> {
        let conv = problem.solve_at(lam, info, mu)?;
        Ok((problem.energy(info), conv))
    };
    type Iterate = (Vec<ComplexMatrix>, Vec<f64>, f64, f64, bool);
    let mut best: Option<Iterate> = None;
    let (mut lo, mut e_lo) = (0.0f64, e0);
    let (mut hi, mut e_hi) = (f64::NAN, f64::NAN);
    let (e_first, conv) = eval(lam, &mut info, &mut mu)?;
    if e_first >= target {
        hi = lam;
        e_hi = e_first;
        best = Some((info.clone(), mu.clone(), lam, e_first, conv));
        for _ in 0..40 {
            let down = hi / 4.0;
            let (e, conv) = eval(down, &mut info, &mut mu)?;
            if e >= target {
                hi = down;
                e_hi = e;
                best = Some((info.clone(), mu.clone(), down, e, conv));
            } else {
                lo = down;
                e_lo = e;
                break;
            }
        }
    } else {
        lo = lam;
        e_lo = e_first;
        for _ in 0..400 {
            let up = lo * 4.0;
            let (e, conv) = eval(up, &mut info, &mut mu)?;
            if e >= target {
                hi = up;
                e_hi = e;
                best = Some((info.clone(), mu.clone(), up, e, conv));
                break;
            }
            lo = up;
            e_lo = e;
        }
    }
    let Some(mut best) = best else {
        let covariances = problem.steered();
        let energy = problem.energy(&covariances);
        return Ok(InnerSolution {
            covariances,
            dual: DualState { lambda: f64::INFINITY, mu: vec![f64::INFINITY; users] },
            energy,
            converged: false,
        });
    };
    // Refine in log λ with an Illinois step on E − target, keeping the feasible end.
    let tol = settings.kkt_tol * target.max(f64::MIN_POSITIVE);
    let mut converged = e_hi - target <= tol || lo == 0.0;
    if lo > 0.0 {
        let (mut llo, mut lhi) = (lo.ln(), hi.ln());
        let (mut f_lo, mut f_hi) = (e_lo - target, e_hi - target);
        let mut side = 0i8;
        for _ in 0..settings.dual_max_iters {
            if f_hi <= tol {
                converged = true;
                break;
            }
            if lhi - llo <= 1e-15 * lhi.abs().max(1.0) {
                break;
            }
            let mut x = if f_hi != f_lo { lhi - f_hi * (lhi - llo) / (f_hi - f_lo) } else { 0.5 * (llo + lhi) };
            if !(x > llo && x < lhi) {
                x = 0.5 * (llo + lhi);
            }
            let lam = x.exp();
            let (e, conv) = eval(lam, &mut info, &mut mu)?;
            if e >= target {
                lhi = x;
                f_hi = e - target;
                best = (info.clone(), mu.clone(), lam, e, conv);
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            } else {
                llo = x;
                f_lo = e - target;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            }
        }
    }
    let (covariances, mu, lambda, energy, conv) = best;
    Ok(InnerSolution { covariances, dual: DualState { lambda, mu }, energy, converged: converged && conv })
}

/// Warm covariances are only useful if some transmitter was active.
fn coupled_start_available(info: &[ComplexMatrix]) -> bool {
    info.iter().any(|q| numerics::frobenius_sq(q) > 0.0)
}

fn strategy_energy(stats: &BeamStatistics, beams: &BeamPlan, info_energy: f64) -> f64 {
    info_energy + stats.omega.iter().zip(&beams.powers).map(|(w, p)| w * p).sum::<f64>()
}

/// Every information transmitter at full power on its strongest cross-link mode.
fn max_energy_info(effective: &EffectiveChannels, p_max: f64) -> Result<Vec<ComplexMatrix>> {
    effective
        .h12_blocks
        .iter()
        .map(|h| Ok(numerics::outer(&CrossLink::new(h)?.top) * c(p_max)))
        .collect()
}

fn finish_point(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    variant: Variant,
    e_bar: f64,
    strategy: Strategy,
    stats: &BeamStatistics,
    outer_iterations: usize,
    converged: bool,
    monotone_violations: usize,
) -> Result<REPoint> {
    let model = EnergyModel::from_config(config, effective.partition.eh().len());
    let links = effective.h12_blocks.iter().map(CrossLink::new).collect::<Result<Vec<_>>>()?;
    let info_energy: f64 = links.iter().zip(&strategy.info_covariances).map(|(l, q)| l.energy(q)).sum();
    let energy = model.harvested(strategy_energy(stats, &strategy.beams, info_energy));
    let rate = objective(channels, effective, &strategy, variant, config.noise_power)?;
    Ok(REPoint {
        e_bar,
        rate,
        energy,
        powers: strategy.beams.powers.clone(),
        outer_iterations,
        converged,
        monotone_violations,
        strategy,
    })
}

/// One boundary point of the rate-energy region: steepest-descent power
/// control over the energy transmitters around the inner covariance solve.
pub fn boundary_point(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    scheme: Scheme,
    e_bar: f64,
    variant: Variant,
) -> Result<REPoint> {
    if !(e_bar >= 0.0 && e_bar.is_finite()) {
        return Err(OptimizerError::InvalidArgument(format!("required energy must be finite and >= 0, got {e_bar}")));
    }
    let k1 = effective.partition.eh().len();
    let model = EnergyModel::from_config(config, k1);
    let settings = InnerSettings::from_config(config);
    let p_max = config.p_max;
    let target = model.transferred(e_bar);

    let (mut dirs, mut stats) = scheme_beams(channels, effective, config, scheme, target, 0)?;
    let cap = e_max(&stats, effective, p_max)?;
    if target > cap * (1.0 + 1e-12) {
        return Err(OptimizerError::InfeasibleTarget { e_bar, e_max: model.harvested(cap) });
    }
    if target >= cap * (1.0 - 1e-12) && cap > 0.0 {
        let plan = BeamPlan { scheme, directions: dirs, powers: vec![p_max; k1] };
        let info = max_energy_info(effective, p_max)?;
        let strategy = Strategy { beams: plan, info_covariances: info };
        return finish_point(channels, effective, config, variant, e_bar, strategy, &stats, 0, true, 0);
    }

    // Information transmitters alone: no energy beams at all. When their
    // unconstrained solution already meets the target this is the answer;
    // otherwise it competes with the power-control result below.
    let silent = BeamPlan { scheme, directions: dirs.clone(), powers: vec![0.0; k1] };
    let alone = inner_solve(channels, effective, &silent, target, variant, None, &settings)?;
    let alone_stats = stats.clone();
    let alone_feasible = alone.energy >= target * (1.0 - 1e-12);
    let alone_point = |converged: bool| {
        let strategy = Strategy { beams: silent.clone(), info_covariances: alone.covariances.clone() };
        finish_point(channels, effective, config, variant, e_bar, strategy, &alone_stats, 0, converged, 0)
    };
    if alone.dual.lambda == 0.0 && alone_feasible {
        return alone_point(alone.converged);
    }

    let solver = &config.solver;
    let mut plan = BeamPlan { scheme, directions: dirs.clone(), powers: vec![p_max; k1] };
    let mut warm: Option<(DualState, Vec<ComplexMatrix>)> = None;
    let mut violations = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut tilt_exponent = 0u32;
    for n in 0..solver.outer_max_iters {
        iterations = n + 1;
        let e11: f64 = stats.omega.iter().zip(&plan.powers).map(|(w, p)| w * p).sum();
        let residual = (target - e11).max(0.0);
        let sol = inner_solve(
            channels,
            effective,
            &plan,
            residual,
            variant,
            warm.as_ref().map(|(d, q)| (d, q.as_slice())),
            &settings,
        )?;
        let info_energy = sol.energy;
        warm = Some((sol.dual.clone(), sol.covariances.clone()));
        let previous = plan.powers.clone();

        if info_energy >= target {
            plan.powers = vec![0.0; k1];
        } else if info_energy + e11 > target {
            if scheme == Scheme::SlerTilt {
                let (tdirs, tstats) = scheme_beams(channels, effective, config, scheme, target, tilt_exponent + 1)?;
                let e11_tilt: f64 = tstats.omega.iter().zip(&plan.powers).map(|(w, p)| w * p).sum();
                if info_energy + e11_tilt > target {
                    tilt_exponent += 1;
                    dirs = tdirs;
                    stats = tstats;
                    plan.directions = dirs.clone();
                }
            }
            let strategy = Strategy { beams: plan.clone(), info_covariances: sol.covariances.clone() };
            let grad = power_gradient(channels, effective, &strategy, variant, config.noise_power)?;
            let step = clamped_step(&stats.omega, &plan.powers, info_energy, target, &grad);
            for (p, g) in plan.powers.iter_mut().zip(&grad) {
                *p = if step.is_infinite() && *g < 0.0 {
                    0.0
                } else {
                    (*p + solver.step_fraction * step * g).clamp(0.0, p_max)
                };
            }
        }
        violations += plan.powers.iter().zip(&previous).filter(|(new, old)| **new > **old).count();
        let moved = plan.powers.iter().zip(&previous).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if moved <= solver.outer_tol * p_max {
            converged = true;
            break;
        }
    }

    let e11: f64 = stats.omega.iter().zip(&plan.powers).map(|(w, p)| w * p).sum();
    let residual = (target - e11).max(0.0);
    let sol = inner_solve(
        channels,
        effective,
        &plan,
        residual,
        variant,
        warm.as_ref().map(|(d, q)| (d, q.as_slice())),
        &settings,
    )?;
    let strategy = Strategy { beams: plan, info_covariances: sol.covariances };
    let point = finish_point(channels, effective, config, variant, e_bar, strategy, &stats, iterations, converged && sol.converged, violations)?;
    if alone_feasible {
        let other = alone_point(alone.converged)?;
        if other.rate > point.rate {
            return Ok(other);
        }
    }
    Ok(point)
}

/// Both ends of the time-sharing baseline.
#[derive(Debug, Clone)]
pub struct TimeSharing {
    /// Energy transmitters silent, information transmitters waterfilling.
    pub wf: (f64, f64),
    /// Full-power energy beams, information transmitters steered to their
    /// cross links.
    pub eh: (f64, f64),
}

impl TimeSharing {
    /// `(rate, energy)` when a fraction `τ` of the time is spent in the energy phase.
    pub fn at(&self, tau: f64) -> (f64, f64) {
        let tau = tau.clamp(0.0, 1.0);
        ((1.0 - tau) * self.wf.0 + tau * self.eh.0, (1.0 - tau) * self.wf.1 + tau * self.eh.1)
    }

    /// Sharing fraction that just meets `e_bar`.
    pub fn fraction_for(&self, e_bar: f64) -> f64 {
        let span = self.eh.1 - self.wf.1;
        if span <= 0.0 {
            return if e_bar <= self.wf.1 { 0.0 } else { 1.0 };
        }
        ((e_bar - self.wf.1) / span).clamp(0.0, 1.0)
    }
}

/// Endpoints of the time-sharing baseline for `scheme`; `eh_phase_rate`
/// counts the information rate delivered during the energy phase.
pub fn time_sharing(
    channels: &ChannelSet,
    effective: &EffectiveChannels,
    config: &SystemConfig,
    scheme: Scheme,
    variant: Variant,
) -> Result<TimeSharing> {
    let k1 = effective.partition.eh().len();
    let settings = InnerSettings::from_config(config);
    let model = EnergyModel::from_config(config, k1);
    let e_top = scheme_e_max_transfer(channels, effective, config, scheme)?;
    let (dirs, stats) = scheme_beams(channels, effective, config, scheme, e_top, 0)?;

    let silent = BeamPlan { scheme, directions: dirs.clone(), powers: vec![0.0; k1] };
    let wf = inner_solve(channels, effective, &silent, 0.0, variant, None, &settings)?;
    let wf_strategy = Strategy { beams: silent, info_covariances: wf.covariances };
    let wf_rate = objective(channels, effective, &wf_strategy, variant, config.noise_power)?;
    let wf_energy = model.harvested(wf.energy);

    let full = BeamPlan { scheme, directions: dirs, powers: vec![config.p_max; k1] };
    let info = max_energy_info(effective, config.p_max)?;
    let eh_strategy = Strategy { beams: full, info_covariances: info };
    let eh_rate = if config.eh_phase_rate {
        objective(channels, effective, &eh_strategy, variant, config.noise_power)?
    } else {
        0.0
    };
    let links = effective.h12_blocks.iter().map(CrossLink::new).collect::<Result<Vec<_>>>()?;
    let info_energy: f64 = links.iter().zip(&eh_strategy.info_covariances).map(|(l, q)| l.energy(q)).sum();
    let eh_energy = model.harvested(strategy_energy(&stats, &eh_strategy.beams, info_energy));
    Ok(TimeSharing { wf: (wf_rate, wf_energy), eh: (eh_rate, eh_energy) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_effective, generate_channels, harvested_energy, Partition};
    use num_complex::Complex64;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, k1: usize, trial: u64) -> (SystemConfig, ChannelSet, EffectiveChannels) {
        let cfg = SystemConfig { k, k1, ..SystemConfig::default() };
        let ch = generate_channels(&cfg, trial).unwrap();
        let eff = assemble_effective(&ch, &Partition::default_for(k, k1).unwrap()).unwrap();
        (cfg, ch, eff)
    }

    fn diag(vals: &[f64]) -> ComplexMatrix {
        let mut d = ComplexMatrix::zeros(vals.len(), vals.len());
        for (k, &x) in vals.iter().enumerate() {
            d[(k, k)] = c(x);
        }
        d
    }

    fn random_psd(rng: &mut ChaCha8Rng, m: usize, trace: f64) -> ComplexMatrix {
        let x = ComplexMatrix::from_fn(m, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let q = &x * x.adjoint();
        let t = numerics::trace_re(&q);
        q * c(trace / t)
    }

    fn random_strategy(rng: &mut ChaCha8Rng, cfg: &SystemConfig, ch: &ChannelSet, eff: &EffectiveChannels) -> Strategy {
        let (dirs, _) = scheme_beams(ch, eff, cfg, Scheme::Meb, 0.0, 0).unwrap();
        let powers = dirs.iter().map(|_| cfg.p_max * rng.random_range(0.1..1.0)).collect();
        let info = eff.partition.id().iter().map(|_| random_psd(rng, cfg.m, cfg.p_max)).collect();
        Strategy { beams: BeamPlan { scheme: Scheme::Meb, directions: dirs, powers }, info_covariances: info }
    }

    fn total_harvested(ch: &ChannelSet, eff: &EffectiveChannels, strategy: &Strategy) -> f64 {
        let covs = strategy.pair_covariances(eff);
        eff.partition.eh().iter().map(|&i| harvested_energy(ch, &covs, i, 1.0, None).unwrap()).sum()
    }

    #[test]
    fn e_max_without_cross_energy_is_weighted_sum() {
        let (cfg, ch, _) = setup(3, 2, 1);
        let mut blocks = ch.blocks().to_vec();
        // Zero the information transmitter's links into the energy receivers.
        blocks[2] = ComplexMatrix::zeros(4, 4);
        blocks[5] = ComplexMatrix::zeros(4, 4);
        let ch = ChannelSet::from_blocks(3, 4, blocks).unwrap();
        let eff = assemble_effective(&ch, &Partition::default_for(3, 2).unwrap()).unwrap();
        let (_, stats) = scheme_beams(&ch, &eff, &cfg, Scheme::Mlb, 0.0, 0).unwrap();
        let got = e_max(&stats, &eff, cfg.p_max).unwrap();
        assert!((got - cfg.p_max * stats.omega.iter().sum::<f64>()).abs() < 1e-18);
    }

    #[test]
    fn e_max_hand_example() {
        let h = vec![diag(&[0.0, 0.0]), diag(&[2.0, 1.0]), diag(&[1.0, 1.0]), diag(&[1.0, 1.0])];
        let ch = ChannelSet::from_blocks(2, 2, h).unwrap();
        let eff = assemble_effective(&ch, &Partition::default_for(2, 1).unwrap()).unwrap();
        let stats = BeamStatistics { omega: vec![0.0], shapes: vec![vec![ComplexMatrix::zeros(2, 2)]] };
        assert!((e_max(&stats, &eff, 1.0).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn full_power_steering_delivers_e_max() {
        for (k, k1) in [(2, 1), (3, 2), (4, 2)] {
            let (cfg, ch, eff) = setup(k, k1, 11);
            for scheme in [Scheme::Meb, Scheme::Mlb, Scheme::Sler] {
                let cap = scheme_e_max(&ch, &eff, &cfg, scheme).unwrap();
                let pt = boundary_point(&ch, &eff, &cfg, scheme, cap, Variant::P1).unwrap();
                assert!(pt.powers.iter().all(|&p| p == cfg.p_max));
                let delivered = total_harvested(&ch, &eff, &pt.strategy);
                assert!((delivered - cap).abs() <= 1e-9 * cap, "{scheme}: {delivered:e} vs {cap:e}");
                assert!((pt.energy - cap).abs() <= 1e-9 * cap);
            }
        }
    }

    #[test]
    fn infeasible_target_is_rejected() {
        let (cfg, ch, eff) = setup(2, 1, 0);
        let cap = scheme_e_max(&ch, &eff, &cfg, Scheme::Meb).unwrap();
        let err = boundary_point(&ch, &eff, &cfg, Scheme::Meb, cap * 1.01, Variant::P1).unwrap_err();
        assert!(matches!(err, OptimizerError::InfeasibleTarget { .. }));
    }

    #[test]
    fn gradient_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (cfg, ch, eff) = setup(3, 1, 2);
        let mut s = random_strategy(&mut rng, &cfg, &ch, &eff);
        for q in s.info_covariances.iter_mut() {
            *q = ComplexMatrix::zeros(4, 4);
        }
        let g = power_gradient(&ch, &eff, &s, Variant::P1, cfg.noise_power).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));

        // Beam in the null space of every cross link.
        let mut blocks = ch.blocks().to_vec();
        let kill = diag(&[1.0, 1.0, 1.0, 0.0]) * c(0.03);
        blocks[3] = kill.clone();
        blocks[6] = kill;
        let ch = ChannelSet::from_blocks(3, 4, blocks).unwrap();
        let eff = assemble_effective(&ch, &Partition::default_for(3, 1).unwrap()).unwrap();
        let mut s = random_strategy(&mut rng, &cfg, &ch, &eff);
        s.beams.directions[0] = ComplexVector::from_vec(vec![c(0.0), c(0.0), c(0.0), c(1.0)]);
        let g = power_gradient(&ch, &eff, &s, Variant::P1, cfg.noise_power).unwrap();
        assert_eq!(g[0], 0.0);
    }

    fn finite_difference(ch: &ChannelSet, eff: &EffectiveChannels, s: &Strategy, variant: Variant, noise: f64, p_max: f64) -> Vec<f64> {
        let h = 1e-6 * p_max;
        (0..s.beams.powers.len())
            .map(|k| {
                let mut up = s.clone();
                let mut down = s.clone();
                up.beams.powers[k] += h;
                down.beams.powers[k] -= h;
                let ju = objective(ch, eff, &up, variant, noise).unwrap();
                let jd = objective(ch, eff, &down, variant, noise).unwrap();
                (ju - jd) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            for variant in [Variant::Up, Variant::P1] {
                let (cfg, ch, eff) = setup(4, 2, trial);
                let s = random_strategy(&mut rng, &cfg, &ch, &eff);
                let g = power_gradient(&ch, &eff, &s, variant, cfg.noise_power).unwrap();
                let fd = finite_difference(&ch, &eff, &s, variant, cfg.noise_power, cfg.p_max);
                let scale = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn max_step_examples() {
        assert_eq!(max_step(&[2.0], &[1.0], 1.0, 3.0, &[-0.5]), 0.0);
        // surplus s = 1 with one transmitter: Δ = -s / (ω∇)
        let d = max_step(&[2.0], &[1.0], 2.0, 3.0, &[-0.5]);
        assert!((d - 1.0).abs() < 1e-15);
        assert_eq!(max_step(&[2.0], &[1.0], 2.0, 3.0, &[0.0]), 0.0);
        // unclamped post-step identity ωᵀP⁺ = Ē − E_info
        let omega = [0.3, 0.7];
        let powers = [0.04, 0.05];
        let grad = [-0.01, -0.02];
        let d = max_step(&omega, &powers, 0.001, 0.045, &grad);
        let after: f64 = omega.iter().zip(powers.iter().zip(&grad)).map(|(w, (p, g))| w * (p + d * g)).sum();
        assert!((after - (0.045 - 0.001)).abs() < 1e-10);
        assert!((clamped_step(&omega, &powers, 0.001, 0.045, &grad) - d).abs() < 1e-12 * d);
    }

    #[test]
    fn clamped_step_meets_target_when_a_power_hits_zero() {
        let omega = [1.0, 1.0];
        let powers = [0.01, 0.05];
        let grad = [-1.0, -0.1];
        // Need 0.02 from the energy transmitters.
        let d = clamped_step(&omega, &powers, 0.0, 0.02, &grad);
        let after: f64 = powers.iter().zip(&grad).map(|(p, g)| (p + d * g).max(0.0)).sum();
        assert!((after - 0.02).abs() < 1e-15);
        assert!((clamped_step(&omega, &powers, 0.0, 0.0, &grad) - 0.5).abs() < 1e-15);
        assert!(clamped_step(&omega, &powers, 0.0, 0.0, &[-1.0, 0.0]).is_infinite());
    }

    #[test]
    fn closed_form_waterfilling_examples() {
        let q = waterfilling_covariance(&diag(&[3.0, 2.0, 0.5]), &numerics::identity(3)).unwrap();
        let want = [1.0 - 1.0 / 9.0, 1.0 - 1.0 / 4.0, 0.0];
        for k in 0..3 {
            assert!((q[(k, k)].re - want[k]).abs() < 1e-14);
        }
        let q = waterfilling_covariance(&diag(&[1.0, 0.7]), &numerics::identity(2)).unwrap();
        assert!(numerics::frobenius_sq(&q) < 1e-30);
    }

    #[test]
    fn waterfill_spends_budget_with_flat_level() {
        let eig = numerics::hermitian_eig(&diag(&[4.0, 1.0, 0.05])).unwrap();
        let br = waterfill(&eig, 1.0);
        let q = &br.q;
        assert!((numerics::trace_re(q) - 1.0).abs() < 1e-14);
        // level = (1 + 1/4 + 1) / 2
        let level = 1.125;
        assert!((q[(0, 0)].re - (level - 0.25)).abs() < 1e-14);
        assert!((q[(1, 1)].re - (level - 1.0)).abs() < 1e-14);
        assert_eq!(q[(2, 2)].re, 0.0);
        assert!((br.mu - 1.0 / level).abs() < 1e-14);
    }

    #[test]
    fn inner_solve_meets_energy_and_power_with_slackness() {
        for trial in 0..5 {
            let (cfg, ch, eff) = setup(2, 1, trial);
            let settings = InnerSettings::from_config(&cfg);
            let (dirs, _) = scheme_beams(&ch, &eff, &cfg, Scheme::Sler, 0.0, 0).unwrap();
            let plan = BeamPlan { scheme: Scheme::Sler, directions: dirs, powers: vec![0.02] };
            let free = inner_solve(&ch, &eff, &plan, 0.0, Variant::Up, None, &settings).unwrap();
            let cap = cfg.p_max * numerics::spectral_norm(&eff.h12_blocks[0]).unwrap().powi(2);
            for frac in [0.0, 0.3, 0.7, 0.95] {
                let target = free.energy + frac * (cap - free.energy);
                let sol = inner_solve(&ch, &eff, &plan, target, Variant::Up, None, &settings).unwrap();
                let q = &sol.covariances[0];
                assert!(sol.energy >= target);
                assert!((numerics::trace_re(q) - cfg.p_max).abs() <= 1e-12 * cfg.p_max);
                assert!(numerics::hermitian_eig(q).unwrap().min_value() >= -1e-12 * cfg.p_max);
                assert!(sol.dual.lambda * (sol.energy - target) <= 1e-6, "{}", sol.dual.lambda * (sol.energy - target));
                if frac > 0.0 {
                    assert!(sol.dual.lambda > 0.0);
                }
            }
        }
    }

    #[test]
    fn energy_endpoints_and_plateau() {
        let (cfg, ch, eff) = setup(2, 1, 5);
        let zero = boundary_point(&ch, &eff, &cfg, Scheme::Sler, 0.0, Variant::P1).unwrap();
        assert_eq!(zero.powers, vec![0.0]);
        let settings = InnerSettings::from_config(&cfg);
        let silent = BeamPlan { scheme: Scheme::Sler, directions: zero.strategy.beams.directions.clone(), powers: vec![0.0] };
        let free = inner_solve(&ch, &eff, &silent, 0.0, Variant::P1, None, &settings).unwrap();
        let free_rate = objective(&ch, &eff, &Strategy { beams: silent, info_covariances: free.covariances }, Variant::P1, cfg.noise_power).unwrap();
        assert!((zero.rate - free_rate).abs() < 1e-12);
        let half = boundary_point(&ch, &eff, &cfg, Scheme::Sler, 0.5 * free.energy, Variant::P1).unwrap();
        assert_eq!(half.rate, zero.rate);
        assert_eq!(half.powers, vec![0.0]);
    }

    #[test]
    fn time_sharing_endpoints_match_boundary_points() {
        let (cfg, ch, eff) = setup(2, 1, 6);
        for scheme in [Scheme::Meb, Scheme::Sler] {
            let ts = time_sharing(&ch, &eff, &cfg, scheme, Variant::P1).unwrap();
            let cap = scheme_e_max(&ch, &eff, &cfg, scheme).unwrap();
            let lo = boundary_point(&ch, &eff, &cfg, scheme, 0.0, Variant::P1).unwrap();
            let hi = boundary_point(&ch, &eff, &cfg, scheme, cap, Variant::P1).unwrap();
            assert!((ts.at(0.0).0 - lo.rate).abs() < 1e-9);
            assert!((ts.at(1.0).0 - hi.rate).abs() < 1e-9);
            assert!((ts.at(1.0).1 - cap).abs() <= 1e-12 * cap);
            let mid = ts.at(0.5);
            assert!((mid.0 - 0.5 * (ts.wf.0 + ts.eh.0)).abs() < 1e-12);
            assert!((mid.1 - 0.5 * (ts.wf.1 + ts.eh.1)).abs() < 1e-18);
            assert_eq!(ts.fraction_for(ts.wf.1 * 0.5), 0.0);
            assert_eq!(ts.fraction_for(cap), 1.0);
        }
    }

    #[test]
    fn noise_energy_model_shifts_targets() {
        let (mut cfg, ch, eff) = setup(2, 1, 7);
        let plain = scheme_e_max(&ch, &eff, &cfg, Scheme::Meb).unwrap();
        cfg.include_noise_energy = true;
        cfg.zeta = 0.5;
        let noisy = scheme_e_max(&ch, &eff, &cfg, Scheme::Meb).unwrap();
        assert!((noisy - (0.5 * plain + 0.5 * 4.0 * cfg.noise_power)).abs() <= 1e-12 * noisy);
        let pt = boundary_point(&ch, &eff, &cfg, Scheme::Meb, 0.6 * noisy, Variant::P1).unwrap();
        assert!(pt.energy >= 0.6 * noisy * (1.0 - 1e-9));
    }

    #[test]
    fn frontier_feasible_and_powers_monotone() {
        for (k, k1) in [(2, 1), (4, 2), (5, 4)] {
            let (cfg, ch, eff) = setup(k, k1, 9);
            for scheme in Scheme::ALL {
                let cap = scheme_e_max(&ch, &eff, &cfg, scheme).unwrap();
                for g in 0..=10 {
                    let e = cap * g as f64 / 10.0;
                    let pt = boundary_point(&ch, &eff, &cfg, scheme, e, Variant::P1).unwrap();
                    assert_eq!(pt.monotone_violations, 0);
                    assert!(pt.energy >= e * (1.0 - 1e-9), "{scheme} {g}: {} < {e}", pt.energy);
                    assert!(pt.rate >= 0.0);
                    assert!(pt.powers.iter().all(|&p| (0.0..=cfg.p_max).contains(&p)));
                    for q in &pt.strategy.info_covariances {
                        assert!(numerics::trace_re(q) <= cfg.p_max + 1e-9);
                        assert!(numerics::hermitian_eig(q).unwrap().min_value() >= -1e-10);
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_never_positive(trial in 0u64..10_000, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (cfg, ch, eff) = setup(4, 2, trial);
            let s = random_strategy(&mut rng, &cfg, &ch, &eff);
            for variant in [Variant::Up, Variant::P1] {
                let g = power_gradient(&ch, &eff, &s, variant, cfg.noise_power).unwrap();
                prop_assert!(g.iter().all(|&x| x <= 0.0));
            }
        }

        #[test]
        fn harvested_total_matches_weighted_form(trial in 0u64..10_000, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (cfg, ch, eff) = setup(3, 2, trial);
            let s = random_strategy(&mut rng, &cfg, &ch, &eff);
            let stats = beamforming::beam_statistics(&eff, &ch, &s.beams.directions).unwrap();
            let links: Vec<CrossLink> = eff.h12_blocks.iter().map(|h| CrossLink::new(h).unwrap()).collect();
            let info: f64 = links.iter().zip(&s.info_covariances).map(|(l, q)| l.energy(q)).sum();
            let fast = strategy_energy(&stats, &s.beams, info);
            let slow = total_harvested(&ch, &eff, &s);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow);
        }
    }
}
