//! Dense complex matrices and the Hermitian positive-definite factorization
//! used by zero-forcing precoding.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("CMatrix::from_vec", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `out = self · x`
    pub fn mul_vec_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = selfᴴ · y`
    pub fn adjoint_mul_vec_into(&self, y: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (r, yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * yr;
            }
        }
    }

    pub fn adjoint_mul_vec(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        self.adjoint_mul_vec_into(y, &mut out);
        out
    }

    pub fn mul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "CMatrix::mul",
                &[self.rows, self.cols],
                &[other.rows, other.cols],
            ));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// `self · selfᴴ`, exploiting Hermitian symmetry.
    pub fn gram(&self) -> CMatrix {
        let n = self.rows;
        let mut g = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, b) in self.row(i).iter().zip(self.row(j)) {
                    acc += a * b.conj();
                }
                g[(i, j)] = acc;
                g[(j, i)] = acc.conj();
            }
        }
        g
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                "CMatrix::sub",
                &[self.rows, self.cols],
                &[other.rows, other.cols],
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// A linear map `ℂ^n → ℂ^m` with its adjoint.
pub trait ComplexMap: Send + Sync {
    /// `(m, n)`: output and input dimensions.
    fn dims(&self) -> (usize, usize);

    fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]);

    fn apply_adjoint_into(&self, y: &[Complex64], out: &mut [Complex64]);
}

impl ComplexMap for CMatrix {
    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        self.mul_vec_into(x, out);
    }

    fn apply_adjoint_into(&self, y: &[Complex64], out: &mut [Complex64]) {
        self.adjoint_mul_vec_into(y, out);
    }
}

/// Lower-triangular factor `L` with `A = L Lᴴ` for Hermitian positive-definite `A`.
#[derive(Debug, Clone)]
pub struct HermitianCholesky {
    n: usize,
    // Row-major lower triangle; diagonal entries are real and positive.
    l: Vec<Complex64>,
}

impl HermitianCholesky {
    /// Factors `a`. Only the lower triangle is read.
    pub fn factor(a: &CMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::dim("HermitianCholesky::factor", &[a.rows(), a.cols()], &[a.cols(), a.rows()]));
        }
        let n = a.rows();
        let mut l = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular { condition: f64::INFINITY });
            }
            let djj = d.sqrt();
            l[j * n + j] = Complex64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        // L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
        // Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
    }

    /// `tr(A⁻¹) = ‖L⁻¹‖²_F`.
    pub fn trace_inverse(&self) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            col[j] = Complex64::new(1.0, 0.0);
            for i in j..n {
                let mut s = col[i];
                for k in j..i {
                    s -= self.l[i * n + k] * col[k];
                }
                col[i] = s / self.l[i * n + i].re;
                total += col[i].norm_sqr();
            }
        }
        total
    }

    /// 2-norm condition number estimate of `A` from power iteration on `A`
    /// and inverse iteration through the factor.
    pub fn condition_estimate(&self, a: &CMatrix, iterations: usize) -> f64 {
        let n = self.n;
        let start: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64))
            .collect();
        let normalize = |v: &mut Vec<Complex64>| -> f64 {
            let nrm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if nrm > 0.0 {
                v.iter_mut().for_each(|x| *x /= nrm);
            }
            nrm
        };
        let mut v = start.clone();
        normalize(&mut v);
        let mut lmax = 0.0;
        for _ in 0..iterations {
            let mut w = a.mul_vec(&v);
            lmax = normalize(&mut w);
            v = w;
        }
        let mut v = start;
        normalize(&mut v);
        let mut inv_lmin = 0.0;
        for _ in 0..iterations {
            self.solve_in_place(&mut v);
            inv_lmin = normalize(&mut v);
        }
        lmax * inv_lmin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = CMatrix::from_vec(2, 2, vec![c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]).unwrap();
        let chol = HermitianCholesky::factor(&a).unwrap();
        let x_true = vec![c(1.0, -2.0), c(0.5, 0.25)];
        let mut b = a.mul_vec(&x_true);
        chol.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn trace_inverse_of_diagonal() {
        let a = CMatrix::from_vec(2, 2, vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)]).unwrap();
        let chol = HermitianCholesky::factor(&a).unwrap();
        assert!((chol.trace_inverse() - 0.75).abs() < 1e-15);
        assert!((chol.condition_estimate(&a, 50) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(matches!(HermitianCholesky::factor(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn gram_matches_product_with_adjoint() {
        let h = CMatrix::from_fn(3, 5, |r, k| c(r as f64 - k as f64 * 0.5, (r * k) as f64 * 0.1));
        let g = h.gram();
        let g2 = h.mul(&h.adjoint()).unwrap();
        assert!(g.sub(&g2).unwrap().frobenius_norm_sq() < 1e-24);
    }
}
