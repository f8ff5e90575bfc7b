//! Channel-dependent second-stage precoding: zero-forcing, matrix-polynomial
//! precoding evaluated by Horner's rule, and transmit power normalization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ComplexMap, HermitianCholesky};

/// Channels whose Gram matrix has a larger condition estimate are rejected.
pub const ZF_CONDITION_LIMIT: f64 = 1e10;

/// Polynomial fits whose (scaled) Vandermonde matrix exceeds this are rejected.
pub const VANDERMONDE_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    Zf,
    Mp,
}

/// Loss minimized when fitting the matrix-polynomial coefficients to
/// eigenvalue samples λ of `HHᴴ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpObjective {
    /// Σ (p(λ) − 1/λ)²
    InverseError,
    /// Σ (λ·p(λ) − 1)², i.e. the squared eigenvalues of `HW − I`.
    ResidualError,
}

/// A ready-to-use linear precoder for one channel realization.
///
/// As a [`ComplexMap`] it applies the power-normalized map `s ↦ W s / √ς_W`.
#[derive(Debug, Clone)]
pub struct PrecoderState {
    kind: PrecoderKind,
    // ZF: materialized W (M_t × M_r). MP: the channel itself, W stays implicit.
    matrix: CMatrix,
    mu: Vec<f64>,
    varsigma: f64,
}

impl PrecoderState {
    pub fn kind(&self) -> PrecoderKind {
        self.kind
    }

    /// Normalization scalar ς_W (unit symbol power).
    pub fn varsigma(&self) -> f64 {
        self.varsigma
    }

    /// Polynomial coefficients μ (empty for ZF).
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Materialized ZF matrix; `None` for MP.
    pub fn zf_matrix(&self) -> Option<&CMatrix> {
        match self.kind {
            PrecoderKind::Zf => Some(&self.matrix),
            PrecoderKind::Mp => None,
        }
    }

    pub fn users(&self) -> usize {
        match self.kind {
            PrecoderKind::Zf => self.matrix.cols(),
            PrecoderKind::Mp => self.matrix.rows(),
        }
    }

    pub fn antennas(&self) -> usize {
        match self.kind {
            PrecoderKind::Zf => self.matrix.rows(),
            PrecoderKind::Mp => self.matrix.cols(),
        }
    }

    /// `W s` without normalization.
    pub fn apply_unnormalized(&self, s: &[Complex64]) -> Vec<Complex64> {
        match self.kind {
            PrecoderKind::Zf => self.matrix.mul_vec(s),
            PrecoderKind::Mp => mp_apply_horner(&self.matrix, &self.mu, s),
        }
    }

    /// `x = W s / √ς_W`
    pub fn precode(&self, s: &[Complex64]) -> Vec<Complex64> {
        let mut x = self.apply_unnormalized(s);
        let k = 1.0 / self.varsigma.sqrt();
        x.iter_mut().for_each(|v| *v *= k);
        x
    }

    /// Dense `W` (materialized column by column for MP).
    pub fn dense_matrix(&self) -> CMatrix {
        match self.kind {
            PrecoderKind::Zf => self.matrix.clone(),
            PrecoderKind::Mp => {
                let (m_t, m_r) = (self.antennas(), self.users());
                let mut w = CMatrix::zeros(m_t, m_r);
                let mut e = vec![Complex64::new(0.0, 0.0); m_r];
                for k in 0..m_r {
                    e.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    e[k] = Complex64::new(1.0, 0.0);
                    let col = mp_apply_horner(&self.matrix, &self.mu, &e);
                    for (t, v) in col.into_iter().enumerate() {
                        w[(t, k)] = v;
                    }
                }
                w
            }
        }
    }
}

impl ComplexMap for PrecoderState {
    fn dims(&self) -> (usize, usize) {
        (self.antennas(), self.users())
    }

    fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(&self.precode(x));
    }

    fn apply_adjoint_into(&self, y: &[Complex64], out: &mut [Complex64]) {
        let k = 1.0 / self.varsigma.sqrt();
        match self.kind {
            PrecoderKind::Zf => self.matrix.adjoint_mul_vec_into(y, out),
            PrecoderKind::Mp => {
                // Wᴴ = p(A) H since p has real coefficients and A is Hermitian.
                let v = self.matrix.mul_vec(y);
                out.copy_from_slice(&horner_gram_poly(&self.matrix, &self.mu, &v));
            }
        }
        out.iter_mut().for_each(|v| *v *= k);
    }
}

/// Zero-forcing precoder `W = Hᴴ(HHᴴ)⁻¹`, computed by factoring `HHᴴ`.
pub fn zf_precoder(channel: &ChannelRealization) -> Result<PrecoderState> {
    zf_precoder_with_limit(channel, ZF_CONDITION_LIMIT)
}

pub fn zf_precoder_with_limit(channel: &ChannelRealization, condition_limit: f64) -> Result<PrecoderState> {
    let h = channel.matrix();
    let gram = h.gram();
    let chol = HermitianCholesky::factor(&gram)?;
    let condition = chol.condition_estimate(&gram, 30);
    if !(condition <= condition_limit) {
        return Err(Error::Singular { condition });
    }
    let (m_r, m_t) = (h.rows(), h.cols());
    // Wᴴ = (HHᴴ)⁻¹ H, one solve per antenna column.
    let mut w = CMatrix::zeros(m_t, m_r);
    let mut col = vec![Complex64::new(0.0, 0.0); m_r];
    for t in 0..m_t {
        for (k, c) in col.iter_mut().enumerate() {
            *c = h[(k, t)];
        }
        chol.solve_in_place(&mut col);
        for (k, c) in col.iter().enumerate() {
            w[(t, k)] = c.conj();
        }
    }
    let varsigma = normalize_power(&w, 1.0)?;
    Ok(PrecoderState {
        kind: PrecoderKind::Zf,
        matrix: w,
        mu: Vec::new(),
        varsigma,
    })
}

/// Matrix-polynomial precoder `W = Hᴴ Σ_j μ_j (HHᴴ)^j` for one channel.
pub fn mp_precoder(channel: &ChannelRealization, mu: &[f64]) -> Result<PrecoderState> {
    if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::Argument("matrix-polynomial coefficients must be finite and non-empty".into()));
    }
    let mut state = PrecoderState {
        kind: PrecoderKind::Mp,
        matrix: channel.matrix().clone(),
        mu: mu.to_vec(),
        varsigma: 1.0,
    };
    let unnormalized = MpOperator { h: &state.matrix, mu };
    state.varsigma = normalize_power(&unnormalized, 1.0)?;
    Ok(state)
}

struct MpOperator<'a> {
    h: &'a CMatrix,
    mu: &'a [f64],
}

impl ComplexMap for MpOperator<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.h.cols(), self.h.rows())
    }

    fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(&mp_apply_horner(self.h, self.mu, x));
    }

    fn apply_adjoint_into(&self, y: &[Complex64], out: &mut [Complex64]) {
        let v = self.h.mul_vec(y);
        out.copy_from_slice(&horner_gram_poly(self.h, self.mu, &v));
    }
}

/// `Σ_j μ_j A^j v` with `A = HHᴴ`, by Horner's rule using only products
/// with `H` and `Hᴴ`.
fn horner_gram_poly(h: &CMatrix, mu: &[f64], v: &[Complex64]) -> Vec<Complex64> {
    let (m_r, m_t) = (h.rows(), h.cols());
    let j = mu.len() - 1;
    let mut z: Vec<Complex64> = v.iter().map(|x| x * mu[j]).collect();
    let mut tmp = vec![Complex64::new(0.0, 0.0); m_t];
    let mut az = vec![Complex64::new(0.0, 0.0); m_r];
    for k in (0..j).rev() {
        h.adjoint_mul_vec_into(&z, &mut tmp);
        h.mul_vec_into(&tmp, &mut az);
        for ((zi, ai), vi) in z.iter_mut().zip(&az).zip(v) {
            *zi = ai + vi * mu[k];
        }
    }
    z
}

/// `x = Hᴴ Σ_j μ_j (HHᴴ)^j s` (unnormalized), never forming `HHᴴ`.
pub fn mp_apply_horner(h: &CMatrix, mu: &[f64], s: &[Complex64]) -> Vec<Complex64> {
    assert!(!mu.is_empty(), "matrix polynomial needs at least one coefficient");
    assert_eq!(s.len(), h.rows(), "symbol vector length must equal M_r");
    let z = horner_gram_poly(h, mu, s);
    h.adjoint_mul_vec(&z)
}

/// ς_W = σ_s² Σ_k ‖W e_k‖², i.e. σ_s²‖W‖²_F, so that `E‖W s‖² / ς_W = 1`.
pub fn normalize_power(op: &dyn ComplexMap, symbol_power: f64) -> Result<f64> {
    let (m, n) = op.dims();
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let mut total = 0.0;
    for k in 0..n {
        e.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        e[k] = Complex64::new(1.0, 0.0);
        op.apply_into(&e, &mut out);
        total += out.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let varsigma = symbol_power * total;
    if !(varsigma > 0.0) || !varsigma.is_finite() {
        return Err(Error::Degenerate(format!("precoder power {varsigma} cannot be normalized")));
    }
    Ok(varsigma)
}

/// Eigenvalues of `HHᴴ` for one channel.
pub fn gram_eigenvalues(channel: &ChannelRealization) -> Vec<f64> {
    let g = channel.matrix().gram();
    let n = g.rows();
    let m = DMatrix::from_fn(n, n, |r, c| g[(r, c)]);
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Fitted coefficients together with the setup they were fitted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpCoefficients {
    pub users: usize,
    pub antennas: usize,
    pub order: usize,
    pub mu: Vec<f64>,
}

/// Fits μ (length `order + 1`) by linear least squares over eigenvalues of
/// `HHᴴ` drawn from `channels` random realizations.
///
/// Eigenvalues are rescaled by the upper edge of their asymptotic support
/// before building the Vandermonde system; the coefficients are mapped back
/// afterwards, so the returned μ act on unscaled `HHᴴ`.
pub fn fit_mp_coefficients<R: Rng + ?Sized>(
    users: usize,
    antennas: usize,
    order: usize,
    channels: usize,
    objective: MpObjective,
    rng: &mut R,
) -> Result<MpCoefficients> {
    if channels == 0 {
        return Err(Error::Argument("need at least one channel sample".into()));
    }
    let mut lambdas = Vec::with_capacity(channels * users);
    for _ in 0..channels {
        let ch = sample_channel(users, antennas, 1, rng)?;
        lambdas.extend(gram_eigenvalues(&ch));
    }
    fit_mp_to_eigenvalues(users, antennas, order, &lambdas, objective)
}

pub fn fit_mp_to_eigenvalues(
    users: usize,
    antennas: usize,
    order: usize,
    lambdas: &[f64],
    objective: MpObjective,
) -> Result<MpCoefficients> {
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let scale = antennas as f64 * (1.0 + (users as f64 / antennas as f64).sqrt()).powi(2);
    let n = lambdas.len();
    let cols = order + 1;
    let offset = match objective {
        MpObjective::InverseError => 0,
        MpObjective::ResidualError => 1,
    };
    let v = DMatrix::from_fn(n, cols, |i, j| (lambdas[i] / scale).powi((j + offset) as i32));
    let b = DVector::from_fn(n, |i, _| match objective {
        MpObjective::InverseError => scale / lambdas[i],
        MpObjective::ResidualError => 1.0,
    });
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= VANDERMONDE_CONDITION_LIMIT) {
        return Err(Error::Conditioning { condition });
    }
    let d = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::Conditioning { condition })?;
    // p(λ) = Σ_j d_j (λ/c)^j / c
    let mu: Vec<f64> = (0..cols).map(|j| d[j] / scale.powi(j as i32 + 1)).collect();
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::Conditioning { condition });
    }
    Ok(MpCoefficients {
        users,
        antennas,
        order,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_channel(m_r: usize, m_t: usize, idx: u64) -> ChannelRealization {
        sample_channel(m_r, m_t, 1, &mut stream_rng(99, Stream::Channel, &[idx])).unwrap()
    }

    fn residual(h: &CMatrix, w: &CMatrix) -> f64 {
        h.mul(w).unwrap().sub(&CMatrix::identity(h.rows())).unwrap().frobenius_norm_sq().sqrt()
    }

    #[test]
    fn scalar_zf() {
        let ch = ChannelRealization::new(CMatrix::from_vec(1, 1, vec![c(2.0, 0.0)]).unwrap(), 1).unwrap();
        let p = zf_precoder(&ch).unwrap();
        assert!((p.zf_matrix().unwrap()[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);

        let h = c(0.6, -0.8) * 1.5;
        let ch = ChannelRealization::new(CMatrix::from_vec(1, 1, vec![h]).unwrap(), 1).unwrap();
        let w = zf_precoder(&ch).unwrap().zf_matrix().unwrap()[(0, 0)];
        assert!((w - h.conj() / h.norm_sqr()).norm() < 1e-15);
    }

    #[test]
    fn orthonormal_rows_give_adjoint() {
        let s = 0.5f64.sqrt();
        let h = CMatrix::from_vec(2, 2, vec![c(s, 0.0), c(s, 0.0), c(0.0, s), c(0.0, -s)]).unwrap();
        let ch = ChannelRealization::new(h.clone(), 1).unwrap();
        let w = zf_precoder(&ch).unwrap();
        let w = w.zf_matrix().unwrap();
        assert!(w.sub(&h.adjoint()).unwrap().frobenius_norm_sq() < 1e-28);
        assert!(residual(&h, w) < 1e-14);
    }

    #[test]
    fn zf_residual_on_random_channels() {
        for i in 0..20 {
            let ch = random_channel(10, 100, i);
            let p = zf_precoder(&ch).unwrap();
            assert!(residual(ch.matrix(), p.zf_matrix().unwrap()) < 1e-9);
        }
    }

    #[test]
    fn singular_channel_is_rejected() {
        let h = CMatrix::from_vec(2, 3, vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 1.0), c(2.0, 0.0), c(4.0, 0.0), c(6.0, 2.0)]).unwrap();
        let ch = ChannelRealization::new(h, 1).unwrap();
        match zf_precoder(&ch) {
            Err(Error::Singular { condition }) => assert!(condition > 1e10),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn normalization_reference_values() {
        assert!((normalize_power(&CMatrix::identity(2), 1.0).unwrap() - 2.0).abs() < 1e-15);
        let mut w = CMatrix::identity(3);
        w.scale(1.7);
        assert!((normalize_power(&w, 1.0).unwrap() - 1.7f64.powi(2) * 3.0).abs() < 1e-12);
        assert!(matches!(normalize_power(&CMatrix::zeros(3, 2), 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalized_power_is_unity_on_average() {
        let ch = random_channel(4, 16, 0);
        let p = zf_precoder(&ch).unwrap();
        let mut rng = stream_rng(1, Stream::Data, &[]);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s: Vec<Complex64> = (0..4).map(|_| crate::rng::complex_gaussian(&mut rng, 1.0)).collect();
            acc += p.precode(&s).iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        let mean = acc / n as f64;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn horner_degenerate_order_is_scaled_matched_filter() {
        let ch = random_channel(3, 6, 1);
        let s = vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.0, -1.0)];
        let x = mp_apply_horner(ch.matrix(), &[0.25], &s);
        let mf = ch.matrix().adjoint_mul_vec(&s);
        for (a, b) in x.iter().zip(&mf) {
            assert!((a - b * 0.25).norm() < 1e-14);
        }
    }

    fn dense_poly(h: &CMatrix, mu: &[f64], s: &[Complex64]) -> Vec<Complex64> {
        let a = h.mul(&h.adjoint()).unwrap();
        let n = h.rows();
        let mut acc = CMatrix::zeros(n, n);
        let mut power = CMatrix::identity(n);
        for &m in mu {
            let mut term = power.clone();
            term.scale(m);
            acc = CMatrix::from_fn(n, n, |r, c| acc[(r, c)] + term[(r, c)]);
            power = power.mul(&a).unwrap();
        }
        h.adjoint().mul(&acc).unwrap().mul_vec(s)
    }

    #[test]
    fn horner_matches_dense_evaluation() {
        for (idx, (m_r, m_t, mu)) in [
            (2usize, 4usize, vec![0.3, -0.05, 0.002]),
            (4, 8, vec![0.2, -0.03, 0.001, -2e-5, 1e-7, 3e-9, -1e-10]),
            (1, 3, vec![0.5, 0.1]),
        ]
        .into_iter()
        .enumerate()
        {
            let ch = random_channel(m_r, m_t, 10 + idx as u64);
            let s: Vec<Complex64> = (0..m_r).map(|k| c(k as f64 - 0.5, 0.3 * k as f64 + 0.1)).collect();
            let fast = mp_apply_horner(ch.matrix(), &mu, &s);
            let slow = dense_poly(ch.matrix(), &mu, &s);
            let err: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let nrm: f64 = slow.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(err / nrm < 1e-10, "{m_r}x{m_t}: {}", err / nrm);
        }
    }

    #[test]
    fn horner_is_linear() {
        let ch = random_channel(3, 7, 3);
        let mu = [0.2, -0.01, 3e-4];
        let s1 = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.5)];
        let s2 = vec![c(0.3, -0.2), c(2.0, 1.0), c(0.1, 0.1)];
        let sum: Vec<Complex64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let lhs = mp_apply_horner(ch.matrix(), &mu, &sum);
        let r1 = mp_apply_horner(ch.matrix(), &mu, &s1);
        let r2 = mp_apply_horner(ch.matrix(), &mu, &s2);
        for ((l, a), b) in lhs.iter().zip(&r1).zip(&r2) {
            assert!((l - a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn mp_adjoint_is_consistent() {
        let ch = random_channel(3, 6, 4);
        let p = mp_precoder(&ch, &[0.2, -0.01, 3e-4]).unwrap();
        let x = vec![c(1.0, 0.2), c(-0.4, 0.1), c(0.5, -0.5)];
        let y: Vec<Complex64> = (0..6).map(|t| c(t as f64 * 0.1, 1.0 - t as f64 * 0.2)).collect();
        let mut wx = vec![c(0.0, 0.0); 6];
        let mut why = vec![c(0.0, 0.0); 3];
        p.apply_into(&x, &mut wx);
        p.apply_adjoint_into(&y, &mut why);
        let lhs: Complex64 = y.iter().zip(&wx).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = why.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn single_user_constant_fit() {
        for objective in [MpObjective::InverseError, MpObjective::ResidualError] {
            let mu = fit_mp_coefficients(1, 100, 0, 1000, objective, &mut stream_rng(2, Stream::MpFit, &[])).unwrap();
            assert!((mu.mu[0] * 100.0 - 1.0).abs() < 0.05, "{:?}", mu.mu);
        }
    }

    #[test]
    fn fitted_mp_approaches_zf_on_held_out_channels() {
        let fit = fit_mp_coefficients(10, 100, 5, 200, MpObjective::InverseError, &mut stream_rng(3, Stream::MpFit, &[])).unwrap();
        for i in 0..20 {
            let ch = random_channel(10, 100, 500 + i);
            let p = mp_precoder(&ch, &fit.mu).unwrap();
            let r = residual(ch.matrix(), &p.dense_matrix()) / 10f64.sqrt();
            assert!(r < 0.05, "channel {i}: {r}");
        }
    }

    #[test]
    fn refit_on_disjoint_samples_agrees() {
        for objective in [MpObjective::InverseError, MpObjective::ResidualError] {
            let a = fit_mp_coefficients(10, 100, 3, 1000, objective, &mut stream_rng(4, Stream::MpFit, &[0])).unwrap();
            let b = fit_mp_coefficients(10, 100, 3, 1000, objective, &mut stream_rng(4, Stream::MpFit, &[1])).unwrap();
            for (x, y) in a.mu.iter().zip(&b.mu) {
                assert!((x - y).abs() / x.abs() < 0.02, "{:?} vs {:?}", a.mu, b.mu);
            }
        }
    }

    #[test]
    fn excessive_order_is_a_conditioning_error() {
        let r = fit_mp_coefficients(4, 16, 25, 200, MpObjective::InverseError, &mut stream_rng(5, Stream::MpFit, &[]));
        assert!(matches!(r, Err(Error::Conditioning { .. })), "{r:?}");
    }

    #[test]
    fn mp_residual_decreases_with_order() {
        let mut prev = f64::INFINITY;
        for order in 0..=6 {
            let fit = fit_mp_coefficients(4, 32, order, 300, MpObjective::InverseError, &mut stream_rng(6, Stream::MpFit, &[])).unwrap();
            let mut acc = 0.0;
            for i in 0..100 {
                let ch = random_channel(4, 32, 1000 + i);
                let p = mp_precoder(&ch, &fit.mu).unwrap();
                acc += residual(ch.matrix(), &p.dense_matrix());
            }
            let mean = acc / 100.0;
            assert!(mean <= prev, "order {order}: {mean} > {prev}");
            prev = mean;
        }
    }
}
