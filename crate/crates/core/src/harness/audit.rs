//! Numerical checks of the structural results the optimiser relies on.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::beamforming::BeamPlan;
use crate::channel::{assemble_effective, generate_channels, ChannelSet, Partition, Scheme, SystemConfig, Variant};
use crate::numerics::{self, c, ComplexMatrix, ComplexVector};
use crate::optimizer::{self, InnerSettings, Strategy};

use super::run_sweep;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub name: String,
    pub instances: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AuditReport {
    pub fn new(name: &str, instances: usize, max_violation: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), instances, max_violation, tolerance, passed: max_violation <= tolerance }
    }

    fn failed(name: &str, tolerance: f64, err: impl std::fmt::Display) -> Self {
        log::error!("{name}: {err}");
        Self::new(name, 0, f64::INFINITY, tolerance)
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} instances, max violation {:e} (tolerance {:e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.max_violation,
            self.tolerance
        )
    }
}

type AuditResult<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn rng_for(config: &SystemConfig, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_psd(rng: &mut ChaCha8Rng, m: usize, trace: f64) -> ComplexMatrix {
    let x = gaussian_matrix(rng, m, m);
    let q = numerics::hermitian_part(&(&x * x.adjoint()));
    let t = numerics::trace_re(&q);
    q * c(trace / t)
}

/// Run every check with the default instance counts.
pub fn run_audits(config: &SystemConfig) -> Vec<AuditReport> {
    let mut out = vec![
        rank_one_audit(config, 50, 10_000),
        determinant_order_audit(config, 1000),
        gradient_audit(config, 100),
    ];
    out.extend(waterfilling_audit(config, 100));
    out.push(monotone_audit(config));
    out
}

/// Unit vector `(cos θ, e^{iφ} sin θ)` and its orthogonal complement.
fn unit_pair(theta: f64, phi: f64) -> (ComplexVector, ComplexVector) {
    let e = Complex64::from_polar(1.0, phi);
    let u = ComplexVector::from_vec(vec![c(theta.cos()), e * theta.sin()]);
    let w = ComplexVector::from_vec(vec![c(-theta.sin()), e * theta.cos()]);
    (u, w)
}

struct RankProblem {
    h11: ComplexMatrix,
    h21: ComplexMatrix,
    h22: ComplexMatrix,
    noise: f64,
    p_max: f64,
    target: f64,
}

impl RankProblem {
    /// Waterfilling rate of the information pair under interference `Q1`.
    fn rate(&self, q1: &ComplexMatrix) -> AuditResult<f64> {
        let m = q1.nrows();
        let r = numerics::identity(m) * c(self.noise) + &self.h21 * q1 * self.h21.adjoint();
        let rinv = numerics::inverse_hpd(&numerics::hermitian_part(&r))?;
        let n = numerics::hermitian_part(&(self.h22.adjoint() * rinv * &self.h22));
        let gains: Vec<f64> = numerics::hermitian_eig(&n)?.values.iter().map(|x| x.max(0.0)).collect();
        Ok(scalar_waterfill_rate(&gains, self.p_max))
    }

    fn energy(&self, q1: &ComplexMatrix) -> f64 {
        numerics::trace_re(&(&self.h11 * q1 * self.h11.adjoint()))
    }

    /// Rank-one covariance along `v` at the target energy, if within budget.
    fn rank_one(&self, theta: f64, phi: f64) -> AuditResult<Option<f64>> {
        let (v, _) = unit_pair(theta, phi);
        let q = numerics::outer(&v);
        let p = self.target / self.energy(&q);
        if !(p <= self.p_max) {
            return Ok(None);
        }
        Ok(Some(self.rate(&(q * c(p)))?))
    }

    fn best_rank_one(&self) -> AuditResult<f64> {
        use std::f64::consts::{FRAC_PI_2, PI};
        let (nt, np) = (64, 128);
        let mut starts: Vec<(f64, f64, f64)> = Vec::new();
        for a in 0..=nt {
            for b in 0..np {
                let (t, p) = (FRAC_PI_2 * a as f64 / nt as f64, 2.0 * PI * b as f64 / np as f64);
                if let Some(r) = self.rank_one(t, p)? {
                    starts.push((r, t, p));
                }
            }
        }
        starts.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut best = f64::NEG_INFINITY;
        for &(mut r, mut t, mut p) in starts.iter().take(4) {
            let mut step = FRAC_PI_2 / nt as f64;
            while step > 1e-12 {
                let mut moved = false;
                for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                    let (t2, p2) = ((t + dt).clamp(0.0, FRAC_PI_2), p + dp);
                    if let Some(r2) = self.rank_one(t2, p2)? {
                        if r2 > r {
                            (r, t, p, moved) = (r2, t2, p2, true);
                        }
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            best = best.max(r);
        }
        Ok(best)
    }

    /// Best of `samples` random full-rank covariances at the target energy.
    fn best_rank_two(&self, rng: &mut ChaCha8Rng, samples: usize) -> AuditResult<f64> {
        let mut best = f64::NEG_INFINITY;
        let (mut kept, mut tries) = (0, 0);
        while kept < samples && tries < 100 * samples {
            tries += 1;
            let theta = rng.random::<f64>().sqrt().asin();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let a: f64 = rng.random();
            if a <= 0.0 || a >= 1.0 {
                continue;
            }
            let (u, w) = unit_pair(theta, phi);
            let shape = numerics::outer(&u) * c(a) + numerics::outer(&w) * c(1.0 - a);
            let scale = self.target / self.energy(&shape);
            if !(scale <= self.p_max) {
                continue;
            }
            kept += 1;
            best = best.max(self.rate(&(shape * c(scale)))?);
        }
        Ok(best)
    }
}

fn scalar_waterfill_rate(gains: &[f64], p_max: f64) -> f64 {
    let mut g: Vec<f64> = gains.iter().copied().filter(|&x| x > 0.0).collect();
    g.sort_by(|a, b| b.total_cmp(a));
    while !g.is_empty() {
        let level = (p_max + g.iter().map(|x| 1.0 / x).sum::<f64>()) / g.len() as f64;
        if level > 1.0 / g[g.len() - 1] {
            return g.iter().map(|x| (level * x).ln()).sum();
        }
        g.pop();
    }
    0.0
}

/// No rank-two energy covariance beats the best rank-one one by more than
/// 1% at the same delivered energy.
pub fn rank_one_audit(config: &SystemConfig, draws: usize, samples: usize) -> AuditReport {
    const NAME: &str = "rank-one energy covariance";
    let tol = 0.01;
    let run = || -> AuditResult<f64> {
        let cfg = SystemConfig { k: 2, k1: 1, m: 2, ..config.clone() };
        let mut rng = rng_for(config, 1);
        let mut worst: f64 = 0.0;
        for d in 0..draws as u64 {
            let ch = generate_channels(&cfg, d)?;
            let h11 = ch.get(0, 0).clone();
            let s1 = numerics::spectral_norm(&h11)?;
            let prob = RankProblem {
                target: 0.5 * cfg.p_max * s1 * s1,
                h11,
                h21: ch.get(1, 0).clone(),
                h22: ch.get(1, 1).clone(),
                noise: cfg.noise_power,
                p_max: cfg.p_max,
            };
            let one = prob.best_rank_one()?;
            let two = prob.best_rank_two(&mut rng, samples)?;
            worst = worst.max((two - one) / one);
        }
        Ok(worst.max(0.0))
    };
    match run() {
        Ok(v) => AuditReport::new(NAME, draws, v, tol),
        Err(e) => AuditReport::failed(NAME, tol, e),
    }
}

fn ln_abs_det(m: ComplexMatrix) -> f64 {
    m.determinant().norm().ln()
}

/// `f(X) = log det(I + S (I + X)⁻¹)` decreases exactly when `det(I + X)`
/// increases, checked on rank-one increments.
pub fn determinant_order_audit(config: &SystemConfig, draws: usize) -> AuditReport {
    const NAME: &str = "determinant ordering";
    let mut rng = rng_for(config, 2);
    let mut violations = 0usize;
    let mut run = || -> AuditResult<()> {
        for _ in 0..draws {
            let m = rng.random_range(2..=4usize);
            let a = gaussian_matrix(&mut rng, m, m);
            let s = numerics::hermitian_part(&(&a * a.adjoint())) + numerics::identity(m) * c(0.1);
            let rank = rng.random_range(1..=m);
            let b = gaussian_matrix(&mut rng, m, rank);
            let x1 = numerics::hermitian_part(&(&b * b.adjoint()));
            let v = gaussian_matrix(&mut rng, m, 1).column(0).into_owned();
            let x2 = &x1 + numerics::outer(&v);
            let id = numerics::identity(m);
            let f = |x: &ComplexMatrix| -> AuditResult<f64> {
                let inv = (&id + x).try_inverse().ok_or("singular I + X")?;
                Ok(ln_abs_det(&id + &s * inv))
            };
            let (f1, f2) = (f(&x1)?, f(&x2)?);
            let d1 = numerics::log_det_hpd(&(&id + &x1))?;
            let d2 = numerics::log_det_hpd(&(&id + &x2))?;
            if (f1 > f2) != (d1 < d2) {
                violations += 1;
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => AuditReport::new(NAME, draws, violations as f64, 0.0),
        Err(e) => AuditReport::failed(NAME, 0.0, e),
    }
}

/// Random strategy with SLER beams and full-rank information covariances.
fn random_strategy(rng: &mut ChaCha8Rng, config: &SystemConfig, ch: &ChannelSet, partition: &Partition) -> AuditResult<Strategy> {
    let eff = assemble_effective(ch, partition)?;
    let (dirs, _) = optimizer::scheme_beams(ch, &eff, config, Scheme::Sler, 0.0, 0)?;
    let powers = dirs.iter().map(|_| config.p_max * rng.random_range(0.1..1.0)).collect();
    let info = partition
        .id()
        .iter()
        .map(|_| {
            let t = config.p_max * rng.random_range(0.2..1.0);
            random_psd(rng, config.m, t)
        })
        .collect();
    Ok(Strategy { beams: BeamPlan { scheme: Scheme::Sler, directions: dirs, powers }, info_covariances: info })
}

/// Largest `‖fd − g‖∞ / ‖g‖∞` between the analytic power gradient and
/// central differences with step `1e-6·P`.
pub fn gradient_audit(config: &SystemConfig, instances: usize) -> AuditReport {
    const NAME: &str = "power gradient";
    let tol = 1e-5;
    let run = || -> AuditResult<f64> {
        let mut rng = rng_for(config, 3);
        let mut worst: f64 = 0.0;
        for n in 0..instances {
            let (k, k1) = [(2, 1), (3, 1), (4, 2)][n % 3];
            let variant = if n % 2 == 0 { Variant::P1 } else { Variant::Up };
            let cfg = SystemConfig { k, k1, ..config.clone() };
            let ch = generate_channels(&cfg, n as u64)?;
            let partition = Partition::default_for(k, k1)?;
            let eff = assemble_effective(&ch, &partition)?;
            let s = random_strategy(&mut rng, &cfg, &ch, &partition)?;
            let g = optimizer::power_gradient(&ch, &eff, &s, variant, cfg.noise_power)?;
            let h = 1e-6 * cfg.p_max;
            let mut err: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for (b, gb) in g.iter().enumerate() {
                let (mut up, mut down) = (s.clone(), s.clone());
                up.beams.powers[b] += h;
                down.beams.powers[b] -= h;
                let fd = (optimizer::objective(&ch, &eff, &up, variant, cfg.noise_power)?
                    - optimizer::objective(&ch, &eff, &down, variant, cfg.noise_power)?)
                    / (2.0 * h);
                err = err.max((fd - gb).abs());
                scale = scale.max(gb.abs());
            }
            worst = worst.max(if scale > 0.0 { err / scale } else { err });
        }
        Ok(worst)
    };
    match run() {
        Ok(v) => AuditReport::new(NAME, instances, v, tol),
        Err(e) => AuditReport::failed(NAME, tol, e),
    }
}

/// Single-user covariance problem in normalised units:
/// maximise `log det(I + N^{1/2} X N^{1/2})` over `X ⪰ 0`, `tr X ≤ 1`,
/// `⟨G, X⟩ ≥ τ`.
pub struct CovarianceProblem {
    pub n: ComplexMatrix,
    pub g: ComplexMatrix,
    pub tau: f64,
    n_half: ComplexMatrix,
}

impl CovarianceProblem {
    pub fn new(n: ComplexMatrix, g: ComplexMatrix, tau: f64) -> AuditResult<Self> {
        let n_half = numerics::hermitian_eig(&n)?.map_spectrum(|x| x.max(0.0).sqrt());
        Ok(Self { n, g, tau, n_half })
    }

    fn inner(&self, x: &ComplexMatrix) -> ComplexMatrix {
        numerics::identity(x.nrows()) + &self.n_half * x * &self.n_half
    }

    pub fn value(&self, x: &ComplexMatrix) -> AuditResult<f64> {
        Ok(numerics::log_det_hpd(&numerics::hermitian_part(&self.inner(x)))?)
    }

    pub fn gradient(&self, x: &ComplexMatrix) -> AuditResult<ComplexMatrix> {
        let inv = numerics::inverse_hpd(&numerics::hermitian_part(&self.inner(x)))?;
        Ok(numerics::hermitian_part(&(&self.n_half * inv * &self.n_half)))
    }

    fn g_inner(&self, x: &ComplexMatrix) -> f64 {
        numerics::trace_re(&(&self.g * x))
    }

    /// Projection onto `{X ⪰ 0, tr X ≤ 1}`.
    fn project_budget(y: &ComplexMatrix) -> AuditResult<ComplexMatrix> {
        let eig = numerics::hermitian_eig(&numerics::hermitian_part(y))?;
        let vals: Vec<f64> = eig.values.clone();
        let clipped: f64 = vals.iter().map(|v| v.max(0.0)).sum();
        let shift = if clipped <= 1.0 {
            0.0
        } else {
            // Find θ with Σ (v − θ)⁺ = 1.
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let mut acc = 0.0;
            let mut theta = 0.0;
            for (k, v) in sorted.iter().enumerate() {
                acc += v;
                let t = (acc - 1.0) / (k + 1) as f64;
                if *v > t {
                    theta = t;
                }
            }
            theta
        };
        Ok(eig.map_spectrum(|v| (v - shift).max(0.0)))
    }

    /// Exact projection onto the feasible set: `proj(Y + νG)` with the
    /// multiplier `ν ≥ 0` found by bisection.
    pub fn project(&self, y: &ComplexMatrix) -> AuditResult<ComplexMatrix> {
        let at = |nu: f64| Self::project_budget(&(y + &self.g * c(nu)));
        let x0 = at(0.0)?;
        if self.g_inner(&x0) >= self.tau {
            return Ok(x0);
        }
        let mut hi = 1.0;
        while self.g_inner(&at(hi)?) < self.tau {
            hi *= 2.0;
            if hi > 1e12 {
                return Err("energy constraint infeasible".into());
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.g_inner(&at(mid)?) >= self.tau {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        at(hi)
    }

    /// Accelerated projected gradient ascent with backtracking and restarts.
    pub fn solve(&self, iterations: usize) -> AuditResult<ComplexMatrix> {
        let m = self.n.nrows();
        let mut x = self.project(&(numerics::identity(m) * c(1.0 / m as f64)))?;
        let mut y = x.clone();
        let mut fx = self.value(&x)?;
        let mut t_acc = 1.0f64;
        let mut step = 1.0 / self.n.norm().max(1e-300);
        let mut stalled = 0;
        for _ in 0..iterations {
            let fy = self.value(&y)?;
            let gy = self.gradient(&y)?;
            let mut cand;
            loop {
                cand = self.project(&(&y + &gy * c(step)))?;
                let d = &cand - &y;
                let lin = numerics::trace_re(&(&gy * &d));
                let quad = numerics::frobenius_sq(&d) / (2.0 * step);
                if self.value(&cand)? >= fy + lin - quad - 1e-15 * fy.abs() || step < 1e-20 {
                    break;
                }
                step *= 0.5;
            }
            let fc = self.value(&cand)?;
            let delta = numerics::frobenius_sq(&(&cand - &x)).sqrt();
            if fc < fx {
                stalled += 1;
                if stalled >= 25 {
                    break;
                }
                // restart momentum
                y = x.clone();
                t_acc = 1.0;
                step *= 0.5;
                continue;
            }
            stalled = if fc - fx <= 1e-15 * fc.abs() { stalled + 1 } else { 0 };
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            y = &cand + (&cand - &x) * c((t_acc - 1.0) / t_next);
            t_acc = t_next;
            x = cand;
            fx = fc;
            step *= 1.5;
            if delta <= 1e-13 || stalled >= 25 {
                break;
            }
        }
        Ok(x)
    }

    /// Largest KKT residual of `x` with power multiplier `mu` and energy
    /// multiplier `lambda`, relative to `mu`.
    pub fn kkt_residual(&self, x: &ComplexMatrix, lambda: f64, mu: f64) -> AuditResult<f64> {
        let m = x.nrows();
        let x_eig = numerics::hermitian_eig(x)?;
        let g_x = self.g_inner(x);
        let primal = [(numerics::trace_re(x) - 1.0).abs(), (self.tau - g_x).max(0.0), (-x_eig.min_value()).max(0.0)];
        let z = self.gradient(x)? + &self.g * c(lambda) - numerics::identity(m) * c(mu);
        let z = numerics::hermitian_part(&z);
        let z_top = numerics::hermitian_eig(&z)?.max_value().max(0.0);
        let comp = [lambda * (g_x - self.tau).abs(), numerics::frobenius_sq(&(&z * x)).sqrt()];
        let dual = [(-lambda).max(0.0), (-mu).max(0.0)];
        let scaled = [z_top, comp[0], comp[1], dual[0], dual[1]].map(|v| v / mu);
        Ok(primal.into_iter().chain(scaled).fold(0.0, f64::max))
    }
}

/// Single information receiver instances: the inner solver against a
/// projected-gradient oracle, plus KKT residuals of its own multipliers.
pub fn waterfilling_audit(config: &SystemConfig, instances: usize) -> [AuditReport; 2] {
    const GAP: &str = "waterfilling objective gap";
    const KKT: &str = "waterfilling KKT residual";
    let tol = 1e-6;
    let run = || -> AuditResult<(f64, f64)> {
        let cfg = SystemConfig { k: 2, k1: 1, variant: Variant::Up, ..config.clone() };
        let settings = InnerSettings::from_config(&cfg);
        let partition = Partition::default_for(2, 1)?;
        let mut rng = rng_for(config, 4);
        let (mut gap, mut kkt): (f64, f64) = (0.0, 0.0);
        for n in 0..instances {
            let ch = generate_channels(&cfg, n as u64)?;
            let eff = assemble_effective(&ch, &partition)?;
            let (dirs, _) = optimizer::scheme_beams(&ch, &eff, &cfg, Scheme::Sler, 0.0, 0)?;
            let p_e = cfg.p_max * rng.random::<f64>();
            let plan = BeamPlan { scheme: Scheme::Sler, directions: dirs.clone(), powers: vec![p_e] };

            let h12 = ch.get(0, 1);
            let g = numerics::hermitian_part(&(h12.adjoint() * h12));
            let g_max = numerics::hermitian_eig(&g)?.max_value();
            let free = optimizer::inner_solve(&ch, &eff, &plan, 0.0, Variant::Up, None, &settings)?;
            let cap = cfg.p_max * g_max;
            let target = if n % 5 == 0 {
                0.5 * free.energy
            } else {
                free.energy + rng.random_range(0.05..0.95) * (cap - free.energy)
            };
            let sol = optimizer::inner_solve(&ch, &eff, &plan, target, Variant::Up, None, &settings)?;

            let w = ch.get(1, 0) * &dirs[0];
            let r = numerics::identity(cfg.m) * c(cfg.noise_power) + numerics::outer(&w) * c(p_e);
            let h22 = ch.get(1, 1);
            let n_mat = numerics::hermitian_part(&(h22.adjoint() * numerics::inverse_hpd(&numerics::hermitian_part(&r))? * h22));
            let prob = CovarianceProblem::new(n_mat * c(cfg.p_max), g * c(1.0 / g_max), target / cap)?;

            let ours = &sol.covariances[0] * c(1.0 / cfg.p_max);
            let oracle = prob.solve(20_000)?;
            gap = gap.max(prob.value(&oracle)? - prob.value(&ours)?);
            let lambda = sol.dual.lambda * cfg.p_max * g_max;
            let mu = sol.dual.mu[0] * cfg.p_max;
            kkt = kkt.max(prob.kkt_residual(&ours, lambda, mu)?);
        }
        Ok((gap.max(0.0), kkt))
    };
    match run() {
        Ok((gap, kkt)) => [AuditReport::new(GAP, instances, gap, tol), AuditReport::new(KKT, instances, kkt, tol)],
        Err(e) => [AuditReport::failed(GAP, tol, &e), AuditReport::failed(KKT, tol, &e)],
    }
}

/// Energy powers never increase between outer iterations over a sweep.
pub fn monotone_audit(config: &SystemConfig) -> AuditReport {
    const NAME: &str = "monotone power iterates";
    match run_sweep(config) {
        Ok(out) => AuditReport::new(NAME, config.trials, out.monotone_violations as f64, 0.0),
        Err(e) => AuditReport::failed(NAME, 0.0, e),
    }
}
