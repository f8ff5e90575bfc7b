//! Rayleigh block-fading channels, additive noise, and the complex/real
//! conversion used at the network boundaries.
//!
//! Complex vectors are flattened as interleaved `(Re, Im)` pairs, so user `k`
//! occupies positions `2k` and `2k + 1`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::complex_gaussian;

/// One block-fading realization `H ∈ ℂ^{M_r × M_t}`, constant for
/// `coherence_len` consecutive symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: CMatrix,
    coherence_len: usize,
}

impl ChannelRealization {
    pub fn new(h: CMatrix, coherence_len: usize) -> Result<Self> {
        if coherence_len == 0 {
            return Err(Error::Argument("coherence length must be positive".into()));
        }
        Ok(Self { h, coherence_len })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.h
    }

    pub fn users(&self) -> usize {
        self.h.rows()
    }

    pub fn antennas(&self) -> usize {
        self.h.cols()
    }

    pub fn coherence_len(&self) -> usize {
        self.coherence_len
    }
}

/// Per-entry complex noise variance σ_b².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    variance: f64,
}

impl NoiseSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Argument(format!("noise variance must be finite and ≥ 0, got {variance}")));
        }
        Ok(Self { variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Draws `H` with i.i.d. CN(0, 1) entries.
pub fn sample_channel<R: Rng + ?Sized>(
    users: usize,
    antennas: usize,
    coherence_len: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if users == 0 || users > antennas {
        return Err(Error::Config(format!(
            "need 1 ≤ M_r ≤ M_t for zero-forcing, got M_r = {users}, M_t = {antennas}"
        )));
    }
    let data = (0..users * antennas).map(|_| complex_gaussian(rng, 1.0)).collect();
    ChannelRealization::new(CMatrix::from_vec(users, antennas, data)?, coherence_len)
}

/// Adds i.i.d. CN(0, σ_b²) noise in place. σ_b² = 0 leaves the input untouched.
pub fn add_awgn<R: Rng + ?Sized>(r: &mut [Complex64], spec: NoiseSpec, rng: &mut R) {
    if spec.variance == 0.0 {
        return;
    }
    for v in r.iter_mut() {
        *v += complex_gaussian(rng, spec.variance);
    }
}

pub fn complex_to_real(v: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    for z in v {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

pub fn real_to_complex(v: &[f64]) -> Result<Vec<Complex64>> {
    if v.len() % 2 != 0 {
        return Err(Error::dim("real_to_complex", &[v.len()], &[v.len() + 1]));
    }
    Ok(v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    #[test]
    fn scalar_channel_statistics() {
        let mut rng = stream_rng(11, Stream::Channel, &[0]);
        let n = 1_000_000;
        let mut mean = Complex64::new(0.0, 0.0);
        let mut power = 0.0;
        for _ in 0..n {
            let h = sample_channel(1, 1, 1, &mut rng).unwrap().matrix()[(0, 0)];
            mean += h;
            power += h.norm_sqr();
        }
        mean /= n as f64;
        power /= n as f64;
        assert!(mean.norm() < 0.01, "{mean}");
        assert!((power - 1.0).abs() < 0.01, "{power}");
    }

    #[test]
    fn paper_scale_shape_and_replay() {
        let h1 = sample_channel(10, 100, 5, &mut stream_rng(3, Stream::Channel, &[9])).unwrap();
        let h2 = sample_channel(10, 100, 5, &mut stream_rng(3, Stream::Channel, &[9])).unwrap();
        assert_eq!((h1.users(), h1.antennas()), (10, 100));
        assert_eq!(h1, h2);
    }

    #[test]
    fn fat_channel_required() {
        let mut rng = stream_rng(0, Stream::Channel, &[]);
        assert!(matches!(sample_channel(5, 4, 1, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut v = vec![Complex64::new(1.0, -2.0); 4];
        let before = v.clone();
        add_awgn(&mut v, NoiseSpec::new(0.0).unwrap(), &mut stream_rng(0, Stream::Noise, &[]));
        assert_eq!(v, before);
    }

    #[test]
    fn noise_variance_and_circularity() {
        let n = 1_000_000;
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        add_awgn(&mut v, NoiseSpec::new(4.0).unwrap(), &mut stream_rng(5, Stream::Noise, &[]));
        let var = v.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        let var_re = v.iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
        let var_im = v.iter().map(|z| z.im * z.im).sum::<f64>() / n as f64;
        assert!((3.96..=4.04).contains(&var), "{var}");
        assert!((var_re - 2.0).abs() < 0.02 && (var_im - 2.0).abs() < 0.02);
    }

    #[test]
    fn real_complex_layout() {
        assert_eq!(complex_to_real(&[Complex64::new(1.0, 2.0)]), vec![1.0, 2.0]);
        assert!(real_to_complex(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let n = 100_000;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let a = sample_channel(1, 1, 1, &mut stream_rng(1, Stream::Channel, &[i])).unwrap().matrix()[(0, 0)];
            let b = sample_channel(1, 1, 1, &mut stream_rng(1, Stream::Channel, &[i + n])).unwrap().matrix()[(0, 0)];
            acc += a * b.conj();
        }
        assert!((acc / n as f64).norm() < 0.01);
    }

    proptest! {
        #[test]
        fn roundtrip_and_isometry(parts in proptest::collection::vec(-1e3f64..1e3, 0..40)) {
            let v: Vec<Complex64> = parts.chunks(2).filter(|c| c.len() == 2).map(|c| Complex64::new(c[0], c[1])).collect();
            let r = complex_to_real(&v);
            prop_assert_eq!(real_to_complex(&r).unwrap(), v.clone());
            let n_c: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            let n_r: f64 = r.iter().map(|x| x * x).sum();
            prop_assert!((n_c - n_r).abs() <= 1e-9 * n_c.max(1.0));
        }
    }
}
