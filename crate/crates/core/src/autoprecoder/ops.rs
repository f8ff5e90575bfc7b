//! Tape nodes for the non-network stages of the end-to-end chain.

use std::sync::Arc;

use num_complex::Complex64;

use crate::autodiff::{CustomOp, RealTensor};
use crate::error::{Error, Result};
use crate::linalg::ComplexMap;

/// Scales an `[M × 2]` codebook to unit mean power over its rows.
pub struct CodebookNormalize;

fn mean_power(c: &RealTensor) -> f64 {
    c.data().iter().map(|v| v * v).sum::<f64>() / c.rows() as f64
}

impl CustomOp for CodebookNormalize {
    fn name(&self) -> &'static str {
        "codebook_normalize"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        let c = inputs[0];
        let p = mean_power(c);
        if !(p > 0.0) {
            return Err(Error::Degenerate("constellation has zero power".into()));
        }
        let k = 1.0 / p.sqrt();
        RealTensor::new(c.shape().to_vec(), c.data().iter().map(|v| v * k).collect())
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, g: &RealTensor) -> Vec<Option<RealTensor>> {
        // out = c/√P with P = Σ|c|²/M:  ∂ = g/√P − c·⟨g, c⟩/(M·P^{3/2})
        let c = inputs[0];
        let m = c.rows() as f64;
        let p = mean_power(c);
        let dot: f64 = g.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let a = 1.0 / p.sqrt();
        let b = dot / (m * p.powf(1.5));
        let data = g.data().iter().zip(c.data()).map(|(gv, cv)| gv * a - cv * b).collect();
        vec![RealTensor::new(c.shape().to_vec(), data).ok()]
    }
}

/// Selects rows of a table: `out[i] = table[indices[i]]`.
pub struct GatherRows {
    pub indices: Vec<usize>,
}

impl CustomOp for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        let t = inputs[0];
        let w = t.cols();
        let mut data = Vec::with_capacity(self.indices.len() * w);
        for &i in &self.indices {
            if i >= t.rows() {
                return Err(Error::Argument(format!("row {i} out of range for {} rows", t.rows())));
            }
            data.extend_from_slice(t.row(i));
        }
        RealTensor::new(vec![self.indices.len(), w], data)
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, g: &RealTensor) -> Vec<Option<RealTensor>> {
        let t = inputs[0];
        let mut d = RealTensor::zeros(t.shape());
        for (r, &i) in self.indices.iter().enumerate() {
            d.row_mut(i).iter_mut().zip(g.row(r)).for_each(|(a, b)| *a += b);
        }
        vec![Some(d)]
    }
}

/// Shape change without data movement.
pub struct Reshape {
    pub shape: Vec<usize>,
}

impl CustomOp for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        inputs[0].clone().reshaped(self.shape.clone())
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, g: &RealTensor) -> Vec<Option<RealTensor>> {
        vec![g.clone().reshaped(inputs[0].shape().to_vec()).ok()]
    }
}

/// Row `b` of the `[B × 2n]` input is mapped through its own complex
/// operator `maps[b]: ℂ^n → ℂ^m`.
pub struct BatchComplexLinear {
    pub maps: Vec<Arc<dyn ComplexMap>>,
}

fn to_complex(row: &[f64]) -> Vec<Complex64> {
    row.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

impl CustomOp for BatchComplexLinear {
    fn name(&self) -> &'static str {
        "batch_complex_linear"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        let x = inputs[0];
        if x.rows() != self.maps.len() || self.maps.is_empty() {
            return Err(Error::dim("batch_complex_linear", x.shape(), &[self.maps.len()]));
        }
        let (m, n) = self.maps[0].dims();
        if x.cols() != 2 * n || self.maps.iter().any(|op| op.dims() != (m, n)) {
            return Err(Error::dim("batch_complex_linear", x.shape(), &[self.maps.len(), 2 * n]));
        }
        let mut data = Vec::with_capacity(x.rows() * 2 * m);
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for (r, op) in self.maps.iter().enumerate() {
            op.apply_into(&to_complex(x.row(r)), &mut out);
            for v in &out {
                data.push(v.re);
                data.push(v.im);
            }
        }
        RealTensor::new(vec![x.rows(), 2 * m], data)
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, g: &RealTensor) -> Vec<Option<RealTensor>> {
        let x = inputs[0];
        let (_, n) = self.maps[0].dims();
        let mut data = Vec::with_capacity(x.len());
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (r, op) in self.maps.iter().enumerate() {
            op.apply_adjoint_into(&to_complex(g.row(r)), &mut out);
            for v in &out {
                data.push(v.re);
                data.push(v.im);
            }
        }
        vec![RealTensor::new(x.shape().to_vec(), data).ok()]
    }
}

/// Multiplies row `b` by the constant `factors[b]`.
pub struct ScaleRows {
    pub factors: Vec<f64>,
}

impl ScaleRows {
    fn scaled(&self, t: &RealTensor) -> Result<RealTensor> {
        if t.rows() != self.factors.len() {
            return Err(Error::dim("scale_rows", t.shape(), &[self.factors.len()]));
        }
        let mut out = t.clone();
        for (r, &f) in self.factors.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        Ok(out)
    }
}

impl CustomOp for ScaleRows {
    fn name(&self) -> &'static str {
        "scale_rows"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        self.scaled(inputs[0])
    }

    fn backward(&self, _inputs: &[&RealTensor], _output: &RealTensor, g: &RealTensor) -> Vec<Option<RealTensor>> {
        vec![self.scaled(g).ok()]
    }
}
