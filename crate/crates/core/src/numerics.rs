//! Dense complex linear algebra used by every other module.
//!
//! Storage and arithmetic come from `nalgebra`; the decompositions (Hermitian
//! eigendecomposition, SVD) are cyclic Jacobi kernels so that results are
//! bit-reproducible, accurate for small singular values, and carry a fixed
//! phase convention: the first non-negligible component of every returned
//! vector is real and positive.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Smallest eigenvalue (relative to `max(1, largest)`) accepted as positive definite.
pub const PD_THRESHOLD: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is empty")]
    Empty,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ill-conditioned matrix: smallest eigenvalue {min_eig:e} (largest {max_eig:e})")]
    IllConditioned { min_eig: f64, max_eig: f64 },
    #[error("direction undefined for a zero matrix")]
    ZeroMatrix,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Full singular value decomposition `A = U diag(σ) Vᴴ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × rows` unitary.
    pub left_vectors: ComplexMatrix,
    /// `min(rows, cols)` values, descending.
    pub singular_values: Vec<f64>,
    /// `cols × cols` unitary.
    pub right_vectors: ComplexMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let (m, n) = (self.left_vectors.nrows(), self.right_vectors.nrows());
        let mut s = ComplexMatrix::zeros(m, n);
        for (k, &sv) in self.singular_values.iter().enumerate() {
            s[(k, k)] = Complex64::new(sv, 0.0);
        }
        &self.left_vectors * s * self.right_vectors.adjoint()
    }

    pub fn right_vector(&self, k: usize) -> ComplexVector {
        self.right_vectors.column(k).into_owned()
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// `V f(Λ) Vᴴ` for a real spectral function.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (k, &val) in self.values.iter().enumerate() {
            let fk = f(val);
            for r in 0..n {
                scaled[(r, k)] *= fk;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub vector: ComplexVector,
    pub value: f64,
}

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn check_input(a: &ComplexMatrix) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(NumericsError::Empty);
    }
    if !is_finite(a) {
        return Err(NumericsError::NonFinite);
    }
    Ok(())
}

fn check_square(a: &ComplexMatrix) -> Result<()> {
    check_input(a)?;
    if a.nrows() != a.ncols() {
        return Err(NumericsError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(())
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// `(A + Aᴴ) / 2`.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()) * c(0.5)
}

pub fn trace_re(a: &ComplexMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius_sq(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn outer(v: &ComplexVector) -> ComplexMatrix {
    v * v.adjoint()
}

/// `‖A v‖²` without forming `A v v^H A^H`.
pub fn quad_gain(a: &ComplexMatrix, v: &ComplexVector) -> f64 {
    (a * v).norm_squared()
}

/// Rotate `v` so its first non-negligible entry is real positive.
pub fn fix_phase(v: &mut ComplexVector) {
    let _ = fix_phase_factor(v);
}

/// Same as [`fix_phase`], returning the unit factor that was applied.
fn fix_phase_factor(v: &mut ComplexVector) -> Complex64 {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let lead = v.iter().find(|z| z.norm() > 1e-12 * max).copied().unwrap();
    let factor = lead.conj() / lead.norm();
    for z in v.iter_mut() {
        *z *= factor;
    }
    factor
}

/// 2×2 unitary `J` such that `Jᴴ [[a, h], [h̄, b]] J` is diagonal.
///
/// Columns of `J` are ordered so the eigenvalue `a − t|h|` lands in slot p.
fn jacobi_rotation(a: f64, b: f64, h: Complex64) -> [[Complex64; 2]; 2] {
    let habs = h.norm();
    let phase = h / habs;
    let tau = (b - a) / (2.0 * habs);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let cs = 1.0 / (1.0 + t * t).sqrt();
    let sn = t * cs;
    // diag(1, e^{-iφ}) followed by the real rotation [[c, s], [-s, c]].
    let conj_phase = phase.conj();
    [
        [c(cs), c(sn)],
        [-conj_phase * sn, conj_phase * cs],
    ]
}

/// Hermitian eigendecomposition by cyclic Jacobi. Values descending.
pub fn hermitian_eig(a: &ComplexMatrix) -> Result<HermitianEig> {
    check_square(a)?;
    let n = a.nrows();
    let mut h = hermitian_part(a);
    let mut v = identity(n);
    let scale = frobenius_sq(&h).sqrt();
    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
                .map(|(p, q)| h[(p, q)].norm_sqr())
                .sum();
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let hpq = h[(p, q)];
                    let app = h[(p, p)].re;
                    let aqq = h[(q, q)].re;
                    if hpq.norm() <= 1e-300
                        || hpq.norm() <= f64::EPSILON * 1e-3 * (app.abs() * aqq.abs()).sqrt()
                    {
                        h[(p, q)] = c(0.0);
                        h[(q, p)] = c(0.0);
                        continue;
                    }
                    rotated = true;
                    let j = jacobi_rotation(app, aqq, hpq);
                    // h <- h J (columns p, q)
                    for r in 0..n {
                        let xp = h[(r, p)];
                        let xq = h[(r, q)];
                        h[(r, p)] = xp * j[0][0] + xq * j[1][0];
                        h[(r, q)] = xp * j[0][1] + xq * j[1][1];
                    }
                    // h <- Jᴴ h (rows p, q)
                    for col in 0..n {
                        let xp = h[(p, col)];
                        let xq = h[(q, col)];
                        h[(p, col)] = j[0][0].conj() * xp + j[1][0].conj() * xq;
                        h[(q, col)] = j[0][1].conj() * xp + j[1][1].conj() * xq;
                    }
                    h[(p, q)] = c(0.0);
                    h[(q, p)] = c(0.0);
                    h[(p, p)] = c(h[(p, p)].re);
                    h[(q, q)] = c(h[(q, q)].re);
                    for r in 0..n {
                        let xp = v[(r, p)];
                        let xq = v[(r, q)];
                        v[(r, p)] = xp * j[0][0] + xq * j[1][0];
                        v[(r, q)] = xp * j[0][1] + xq * j[1][1];
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in index order, which keeps output deterministic.
    order.sort_by(|&x, &y| h[(y, y)].re.total_cmp(&h[(x, x)].re));
    let values = order.iter().map(|&k| h[(k, k)].re).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        fix_phase(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(HermitianEig { values, vectors })
}

/// One-sided Jacobi SVD for `rows >= cols`. Returns thin `U`, values, full `V`.
fn svd_tall(a: &ComplexMatrix) -> (ComplexMatrix, Vec<f64>, ComplexMatrix) {
    let (m, n) = (a.nrows(), a.ncols());
    let mut u = a.clone();
    let mut v = identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = c(0.0);
                for r in 0..m {
                    alpha += u[(r, p)].norm_sqr();
                    beta += u[(r, q)].norm_sqr();
                    gamma += u[(r, p)].conj() * u[(r, q)];
                }
                if gamma.norm() <= 1e-300 || gamma.norm() <= 1e-16 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Diagonalize the 2×2 Gram block; larger norm goes to slot q
                // here, the final sort restores descending order.
                let j = jacobi_rotation(alpha, beta, gamma);
                for r in 0..m {
                    let xp = u[(r, p)];
                    let xq = u[(r, q)];
                    u[(r, p)] = xp * j[0][0] + xq * j[1][0];
                    u[(r, q)] = xp * j[0][1] + xq * j[1][1];
                }
                for r in 0..n {
                    let xp = v[(r, p)];
                    let xq = v[(r, q)];
                    v[(r, p)] = xp * j[0][0] + xq * j[1][0];
                    v[(r, q)] = xp * j[0][1] + xq * j[1][1];
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|k| u.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let smax = norms.iter().copied().fold(0.0, f64::max);
    let mut uu = ComplexMatrix::zeros(m, n);
    let mut vv = ComplexMatrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    let mut rank = 0;
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        let mut vcol = v.column(src).into_owned();
        let factor = fix_phase_factor(&mut vcol);
        vv.set_column(dst, &vcol);
        if s > smax * 1e-13 && s > 1e-300 {
            let ucol = u.column(src) * (factor / s);
            uu.set_column(dst, &ucol);
            rank = dst + 1;
        }
        sv.push(s);
    }
    // Columns past the numerical rank are completed later.
    for k in rank..n {
        uu.set_column(k, &ComplexVector::zeros(m));
    }
    (uu, sv, vv)
}

/// Extend the first `filled` orthonormal columns of `q` to a full unitary.
fn complete_basis(q: &mut ComplexMatrix, filled: usize) {
    let m = q.nrows();
    let mut next = filled;
    let mut candidate = 0;
    while next < q.ncols() && candidate < m {
        let mut e = ComplexVector::zeros(m);
        e[candidate] = c(1.0);
        candidate += 1;
        // Two passes of Gram-Schmidt.
        for _ in 0..2 {
            for k in 0..next {
                let col = q.column(k).into_owned();
                let proj = col.dotc(&e);
                e -= col * proj;
            }
        }
        let norm = e.norm();
        if norm > 1e-8 {
            e /= c(norm);
            fix_phase(&mut e);
            q.set_column(next, &e);
            next += 1;
        }
    }
}

/// Full SVD with descending singular values and unitary factors.
pub fn svd(a: &ComplexMatrix) -> Result<SvdResult> {
    check_input(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    if m >= n {
        let (thin_u, sv, v) = svd_tall(a);
        let rank = (0..n).take_while(|&k| thin_u.column(k).norm() > 0.5).count();
        let mut u = ComplexMatrix::zeros(m, m);
        for k in 0..rank {
            u.set_column(k, &thin_u.column(k));
        }
        complete_basis(&mut u, rank);
        Ok(SvdResult { left_vectors: u, singular_values: sv, right_vectors: v })
    } else {
        let t = svd(&a.adjoint())?;
        // A = (Aᴴ)ᴴ = V' Σ U'ᴴ; re-apply the phase convention to V = U'.
        let mut u = t.right_vectors;
        let mut v = t.left_vectors;
        for k in 0..m {
            let mut col = v.column(k).into_owned();
            let factor = fix_phase_factor(&mut col);
            v.set_column(k, &col);
            let ucol = u.column(k) * factor;
            u.set_column(k, &ucol);
        }
        Ok(SvdResult { left_vectors: u, singular_values: t.singular_values, right_vectors: v })
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &ComplexMatrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.first().copied().unwrap_or(0.0))
}

fn check_pd(eig: &HermitianEig) -> Result<()> {
    let (lo, hi) = (eig.min_value(), eig.max_value());
    if !(lo > PD_THRESHOLD * hi.max(1.0)) {
        return Err(NumericsError::IllConditioned { min_eig: lo, max_eig: hi });
    }
    Ok(())
}

/// `A^{-1/2}` for Hermitian positive definite `A`.
pub fn inv_sqrt_psd(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(a)?;
    check_pd(&eig)?;
    Ok(eig.map_spectrum(|x| 1.0 / x.sqrt()))
}

/// Dominant eigenpair of the Hermitian pair `(A, B)`: the unit vector
/// maximising `vᴴAv / vᴴBv` and that maximal ratio.
///
/// `B` is whitened through its eigendecomposition, then the whitened `A`
/// is diagonalised; no explicit inverse of `B` is formed.
pub fn generalized_eigmax(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<EigPair> {
    check_square(a)?;
    check_square(b)?;
    if a.nrows() != b.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "pair sizes {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let beig = hermitian_eig(b)?;
    check_pd(&beig)?;
    let w = beig.map_spectrum(|x| 1.0 / x.sqrt());
    let whitened = &w * hermitian_part(a) * &w;
    let eig = hermitian_eig(&whitened)?;
    let y = eig.vectors.column(0).into_owned();
    let mut v = &w * y;
    let norm = v.norm();
    v /= c(norm);
    fix_phase(&mut v);
    Ok(EigPair { vector: v, value: eig.values[0] })
}

/// `log det A` for Hermitian positive definite `A` (natural log).
pub fn log_det_hpd(a: &ComplexMatrix) -> Result<f64> {
    check_square(a)?;
    let n = a.nrows();
    let mut l = hermitian_part(a);
    let mut acc = 0.0;
    for j in 0..n {
        let mut d = l[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            let eig = hermitian_eig(a)?;
            return Err(NumericsError::IllConditioned {
                min_eig: eig.min_value(),
                max_eig: eig.max_value(),
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = c(djj);
        acc += d.ln();
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(acc)
}

/// Inverse of a Hermitian positive definite matrix via its eigendecomposition.
pub fn inverse_hpd(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(a)?;
    check_pd(&eig)?;
    Ok(eig.map_spectrum(|x| 1.0 / x))
}

/// Stack matrices with equal column count vertically.
pub fn vstack(blocks: &[&ComplexMatrix]) -> ComplexMatrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = ComplexMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(m, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> ComplexVector {
        let v = random_matrix(rng, n, 1).column(0).into_owned();
        let norm = v.norm();
        v / c(norm)
    }

    fn unitary_error(u: &ComplexMatrix) -> f64 {
        frobenius_sq(&(u.adjoint() * u - identity(u.ncols()))).sqrt()
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&identity(4)).unwrap();
        assert!(s.singular_values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(frobenius_sq(&(s.left_vectors.clone() - identity(4))) < 1e-24);
        assert!(frobenius_sq(&(s.right_vectors.clone() - identity(4))) < 1e-24);

        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(1.0), c(3.0), c(2.0)]));
        let s = svd(&d).unwrap();
        for (got, want) in s.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_random_reconstruction_tall_wide_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, n) in &[(4, 4), (8, 4), (4, 8), (12, 4), (1, 3), (3, 1)] {
            let a = random_matrix(&mut rng, m, n);
            let s = svd(&a).unwrap();
            let err = frobenius_sq(&(s.reconstruct() - &a)).sqrt() / frobenius_sq(&a).sqrt();
            assert!(err <= 1e-10, "{m}x{n} reconstruction {err}");
            assert!(unitary_error(&s.left_vectors) < 1e-10);
            assert!(unitary_error(&s.right_vectors) < 1e-10);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.singular_values.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn svd_rank_deficient_completes_left_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 5, 1);
        let y = random_matrix(&mut rng, 1, 3);
        let a = &x * &y;
        let s = svd(&a).unwrap();
        assert!(s.singular_values[1] < 1e-12);
        assert!(unitary_error(&s.left_vectors) < 1e-10);
        let err = frobenius_sq(&(s.reconstruct() - &a)).sqrt();
        assert!(err < 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = identity(2);
        a[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert_eq!(svd(&a).unwrap_err(), NumericsError::NonFinite);
    }

    #[test]
    fn phase_convention_first_component_real_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 4, 4);
        let s = svd(&a).unwrap();
        for k in 0..4 {
            let z = s.right_vectors[(0, k)];
            assert!(z.im.abs() < 1e-15 && z.re > 0.0);
        }
        let h = &a * a.adjoint();
        let e = hermitian_eig(&h).unwrap();
        for k in 0..4 {
            let z = e.vectors[(0, k)];
            assert!(z.im.abs() < 1e-15 && z.re > 0.0);
        }
    }

    #[test]
    fn hermitian_eig_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 6, 6);
        let h = &x + x.adjoint();
        let e = hermitian_eig(&h).unwrap();
        let rec = e.map_spectrum(|v| v);
        assert!(frobenius_sq(&(rec - &h)).sqrt() < 1e-12);
        assert!(unitary_error(&e.vectors) < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigmax_identity_b_and_diagonal_pair() {
        let a = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(4.0), c(1.0)]));
        let p = generalized_eigmax(&a, &identity(2)).unwrap();
        assert!((p.value - 4.0).abs() < 1e-14);
        assert!((p.vector[0] - c(1.0)).norm() < 1e-14 && p.vector[1].norm() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 4, 4);
        let a = &x * x.adjoint();
        let p = generalized_eigmax(&a, &identity(4)).unwrap();
        let e = hermitian_eig(&a).unwrap();
        assert!((p.value - e.values[0]).abs() < 1e-12 * e.values[0]);
        assert!((p.vector.dotc(&e.vectors.column(0)).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigmax_beats_random_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 4, 4);
        let y = random_matrix(&mut rng, 4, 4);
        let a = &x * x.adjoint();
        let b = &y * y.adjoint() + identity(4) * c(0.1);
        let p = generalized_eigmax(&a, &b).unwrap();
        let ratio = |v: &ComplexVector| v.dotc(&(&a * v)).re / v.dotc(&(&b * v)).re;
        assert!((ratio(&p.vector) - p.value).abs() < 1e-10 * p.value);
        let mut best: f64 = 0.0;
        for _ in 0..100_000 {
            let v = random_unit(&mut rng, 4);
            best = best.max(ratio(&v));
        }
        assert!(best <= p.value * (1.0 + 1e-12));
        assert!((p.value - best) / p.value <= 1e-3 * 50.0, "sampling max {best} far from {}", p.value);
    }

    #[test]
    fn eigmax_rejects_singular_b() {
        let a = identity(2);
        let b = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(1.0), c(0.0)]));
        assert!(matches!(generalized_eigmax(&a, &b), Err(NumericsError::IllConditioned { .. })));
        let b = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(1.0), c(-1.0)]));
        assert!(matches!(generalized_eigmax(&a, &b), Err(NumericsError::IllConditioned { .. })));
    }

    #[test]
    fn inv_sqrt_examples() {
        let s = inv_sqrt_psd(&identity(3)).unwrap();
        assert!(frobenius_sq(&(s - identity(3))) < 1e-28);
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(4.0), c(9.0)]));
        let s = inv_sqrt_psd(&d).unwrap();
        assert!((s[(0, 0)] - c(0.5)).norm() < 1e-15);
        assert!((s[(1, 1)] - c(1.0 / 3.0)).norm() < 1e-15);
        assert!(s[(0, 1)].norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 5, 5);
        let a = &x * x.adjoint() + identity(5) * c(0.05);
        let s = inv_sqrt_psd(&a).unwrap();
        assert!(frobenius_sq(&(&s * &a * &s - identity(5))).sqrt() <= 1e-10);
        assert!(frobenius_sq(&(&s * &a - &a * &s)).sqrt() <= 1e-9);
        assert!(frobenius_sq(&(&s - s.adjoint())) < 1e-24);

        let sing = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(1.0), c(1e-14)]));
        assert!(matches!(inv_sqrt_psd(&sing), Err(NumericsError::IllConditioned { .. })));
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 4, 4);
        let a = &x * x.adjoint() + identity(4);
        let e = hermitian_eig(&a).unwrap();
        let want: f64 = e.values.iter().map(|v| v.ln()).sum();
        assert!((log_det_hpd(&a).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_identical_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 6, 4);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a).unwrap();
        assert_eq!(s1.left_vectors, s2.left_vectors);
        assert_eq!(s1.right_vectors, s2.right_vectors);
        assert_eq!(s1.singular_values, s2.singular_values);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
                ComplexMatrix::from_iterator(n, n, v.into_iter().map(|(re, im)| Complex64::new(re, im)))
            })
        }

        proptest! {
            #[test]
            fn svd_factors_unitary_and_sorted(a in matrix(4)) {
                let s = svd(&a).unwrap();
                prop_assert!(unitary_error(&s.left_vectors) <= 1e-10);
                prop_assert!(unitary_error(&s.right_vectors) <= 1e-10);
                prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
                let scale = frobenius_sq(&a).sqrt().max(1e-300);
                prop_assert!(frobenius_sq(&(s.reconstruct() - &a)).sqrt() <= 1e-10 * scale);
            }

            #[test]
            fn eigmax_invariant_under_joint_scaling(x in matrix(3), y in matrix(3), scale in 1e-3f64..1e3) {
                let a = &x * x.adjoint();
                let b = &y * y.adjoint() + identity(3) * c(0.2);
                let p = generalized_eigmax(&a, &b).unwrap();
                let q = generalized_eigmax(&(&a * c(scale)), &(&b * c(scale))).unwrap();
                prop_assert!((p.value - q.value).abs() <= 1e-10 * p.value.abs().max(1e-300));
                // vectors agree up to phase
                prop_assert!((p.vector.dotc(&q.vector).norm() - 1.0).abs() <= 1e-8);
            }
        }
    }
}
