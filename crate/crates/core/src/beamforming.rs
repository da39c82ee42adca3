//! Rank-one energy beams and the per-beam quantities the optimizer consumes.

use thiserror::Error;

use crate::channel::{ChannelSet, EffectiveChannels, Scheme};
use crate::numerics::{self, c, ComplexMatrix, ComplexVector, NumericsError};

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("beam direction undefined: {0} is zero")]
    UndefinedDirection(&'static str),
    #[error("expected {expected} directions, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, BeamError>;

/// Directions and powers of the energy transmitters, in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPlan {
    pub scheme: Scheme,
    pub directions: Vec<ComplexVector>,
    pub powers: Vec<f64>,
}

impl BeamPlan {
    /// `P_k v_k v_kᴴ`.
    pub fn covariance(&self, k: usize) -> ComplexMatrix {
        numerics::outer(&self.directions[k]) * c(self.powers[k])
    }
}

/// Per-unit-power energy weights and interference shapes of a set of beams.
#[derive(Debug, Clone)]
pub struct BeamStatistics {
    /// `ω_j = ‖H̃11_j v_j‖²`, one per energy transmitter.
    pub omega: Vec<f64>,
    /// `shapes[a][j] = (H[i][j] v_j)(H[i][j] v_j)ᴴ` for the `a`-th information
    /// receiver `i` and `j`-th energy transmitter.
    pub shapes: Vec<Vec<ComplexMatrix>>,
}

fn is_zero(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

/// Dominant right singular vector of `H̃11`.
pub fn meb_direction(h11: &ComplexMatrix) -> Result<ComplexVector> {
    if is_zero(h11) {
        return Err(BeamError::UndefinedDirection("H11"));
    }
    Ok(numerics::svd(h11)?.right_vector(0))
}

/// Right singular vector of the smallest singular value of `H̃21`.
pub fn mlb_direction(h21: &ComplexMatrix) -> Result<ComplexVector> {
    if is_zero(h21) {
        return Err(BeamError::UndefinedDirection("H21"));
    }
    let s = numerics::svd(h21)?;
    Ok(s.right_vector(h21.ncols() - 1))
}

/// `max(Ē/(K1·P) − σ₁(H̃11)², 0)`.
pub fn sler_regularizer(h11: &ComplexMatrix, e_bar: f64, p_max: f64, k1: usize) -> Result<f64> {
    if !(e_bar >= 0.0 && e_bar.is_finite()) || !(p_max > 0.0) || k1 == 0 {
        return Err(BeamError::InvalidArgument(format!(
            "need finite e_bar >= 0, p_max > 0, k1 >= 1 (got {e_bar}, {p_max}, {k1})"
        )));
    }
    let s1 = numerics::spectral_norm(h11)?;
    Ok((e_bar / (k1 as f64 * p_max) - s1 * s1).max(0.0))
}

/// The pair `(H̃11ᴴH̃11, H̃21ᴴH̃21 + reg·I)`.
fn sler_pair(h11: &ComplexMatrix, h21: &ComplexMatrix, reg: f64) -> (ComplexMatrix, ComplexMatrix) {
    let a = numerics::hermitian_part(&(h11.adjoint() * h11));
    let mut b = numerics::hermitian_part(&(h21.adjoint() * h21));
    for d in 0..b.nrows() {
        b[(d, d)] += c(reg);
    }
    (a, b)
}

/// SLER of a unit vector for a given regulariser.
pub fn sler_ratio(h11: &ComplexMatrix, h21: &ComplexMatrix, reg: f64, v: &ComplexVector) -> f64 {
    let num = numerics::quad_gain(h11, v);
    let den = numerics::quad_gain(h21, v) + reg * v.norm_squared();
    num / den
}

/// Dominant generalized eigenpair of the SLER pair for an explicit regulariser.
///
/// When the leakage Gram is singular the ratio is unbounded on its null space;
/// the returned vector then maximises the harvested energy inside that null
/// space and the value is `+∞`.
pub fn sler_eigpair(h11: &ComplexMatrix, h21: &ComplexMatrix, reg: f64) -> Result<numerics::EigPair> {
    if h11.ncols() != h21.ncols() {
        return Err(BeamError::InvalidArgument("H11 and H21 column counts differ".into()));
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(BeamError::InvalidArgument(format!("regulariser must be finite and >= 0, got {reg}")));
    }
    let (a, b) = sler_pair(h11, h21, reg);
    let scale = numerics::frobenius_sq(&a).sqrt().max(numerics::frobenius_sq(&b).sqrt());
    if scale == 0.0 {
        return Err(BeamError::UndefinedDirection("SLER matrix pair"));
    }
    let (a, b) = (a * c(1.0 / scale), b * c(1.0 / scale));
    match numerics::generalized_eigmax(&a, &b) {
        Ok(pair) => Ok(pair),
        Err(NumericsError::IllConditioned { .. }) => {
            // Null space of B, then the best energy direction inside it.
            let beig = numerics::hermitian_eig(&b)?;
            let tol = 1e-12 * beig.max_value().max(1e-300);
            let null: Vec<usize> = (0..beig.values.len()).filter(|&k| beig.values[k] <= tol).collect();
            let basis = ComplexMatrix::from_fn(b.nrows(), null.len(), |r, col| beig.vectors[(r, null[col])]);
            let restricted = numerics::hermitian_part(&(basis.adjoint() * &a * &basis));
            let eig = numerics::hermitian_eig(&restricted)?;
            let mut v = &basis * eig.vectors.column(0);
            let norm = v.norm();
            v /= c(norm);
            numerics::fix_phase(&mut v);
            let value = if eig.values[0] > 0.0 { f64::INFINITY } else { 0.0 };
            Ok(numerics::EigPair { vector: v, value })
        }
        Err(e) => Err(e.into()),
    }
}

/// SLER-maximising direction. `tilt_exponent = n` scales the regulariser by
/// `decayⁿ`; `n = 0` is the untilted beam.
pub fn sler_direction(
    h11: &ComplexMatrix,
    h21: &ComplexMatrix,
    e_bar: f64,
    p_max: f64,
    k1: usize,
    tilt_exponent: u32,
    decay: f64,
) -> Result<ComplexVector> {
    let reg = sler_regularizer(h11, e_bar, p_max, k1)? * decay.powi(tilt_exponent as i32);
    Ok(sler_eigpair(h11, h21, reg)?.vector)
}

/// Maximal SLER (the dominant generalized eigenvalue) at required energy `Ē`.
pub fn sler_value(h11: &ComplexMatrix, h21: &ComplexMatrix, e_bar: f64, p_max: f64, k1: usize) -> Result<f64> {
    let reg = sler_regularizer(h11, e_bar, p_max, k1)?;
    Ok(sler_eigpair(h11, h21, reg)?.value)
}

/// Minimising eigenvector of `H̃21ᴴ U (I + Σ)⁻¹ Uᴴ H̃21` with `C = U Σ Uᴴ`.
///
/// `C` is expressed in noise units (the identity stands for unit noise).
pub fn whitened_mlb_direction(h21: &ComplexMatrix, cov: &ComplexMatrix) -> Result<ComplexVector> {
    if cov.nrows() != h21.nrows() || cov.ncols() != h21.nrows() {
        return Err(BeamError::InvalidArgument(format!(
            "interference covariance must be {0}x{0}",
            h21.nrows()
        )));
    }
    if is_zero(h21) {
        return Err(BeamError::UndefinedDirection("H21"));
    }
    let eig = numerics::hermitian_eig(cov)?;
    if eig.min_value() < -1e-10 * eig.max_value().abs().max(1.0) {
        return Err(BeamError::InvalidArgument("interference covariance is not PSD".into()));
    }
    let weight = eig.map_spectrum(|x| 1.0 / (1.0 + x.max(0.0)));
    let gram = numerics::hermitian_part(&(h21.adjoint() * weight * h21));
    let geig = numerics::hermitian_eig(&gram)?;
    let mut v = geig.vectors.column(gram.nrows() - 1).into_owned();
    numerics::fix_phase(&mut v);
    Ok(v)
}

/// Directions of every energy transmitter for `scheme` at required energy `Ē`.
pub fn scheme_directions(
    effective: &EffectiveChannels,
    scheme: Scheme,
    e_bar: f64,
    p_max: f64,
    tilt_exponent: u32,
    decay: f64,
) -> Result<Vec<ComplexVector>> {
    let k1 = effective.partition.eh().len();
    effective
        .h11
        .iter()
        .zip(&effective.h21)
        .map(|(h11, h21)| match scheme {
            Scheme::Meb => meb_direction(h11),
            Scheme::Mlb => mlb_direction(h21),
            Scheme::Sler => sler_direction(h11, h21, e_bar, p_max, k1, 0, decay),
            Scheme::SlerTilt => sler_direction(h11, h21, e_bar, p_max, k1, tilt_exponent, decay),
        })
        .collect()
}

pub fn beam_statistics(
    effective: &EffectiveChannels,
    channels: &ChannelSet,
    directions: &[ComplexVector],
) -> Result<BeamStatistics> {
    let eh = effective.partition.eh();
    if directions.len() != eh.len() {
        return Err(BeamError::DirectionCount { expected: eh.len(), got: directions.len() });
    }
    for v in directions {
        if v.len() != channels.m() || (v.norm() - 1.0).abs() > 1e-9 {
            return Err(BeamError::InvalidArgument("directions must be unit-norm M-vectors".into()));
        }
    }
    let omega = effective.h11.iter().zip(directions).map(|(h, v)| numerics::quad_gain(h, v)).collect();
    let shapes = effective
        .partition
        .id()
        .iter()
        .map(|&i| {
            eh.iter()
                .zip(directions)
                .map(|(&j, v)| numerics::outer(&(channels.get(i, j) * v)))
                .collect()
        })
        .collect();
    Ok(BeamStatistics { omega, shapes })
}
