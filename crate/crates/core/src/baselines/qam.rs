use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square M-QAM with Gray labels and unit mean power.
///
/// Label `c − 1` splits into an in-phase half (high bits) and a quadrature
/// half (low bits); each half is Gray-decoded to an amplitude level.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    side: usize,
    points: Vec<Complex64>,
}

fn gray_to_position(mut g: usize) -> usize {
    let mut p = g;
    while g > 0 {
        g >>= 1;
        p ^= g;
    }
    p
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if side < 2 || side * side != order || !side.is_power_of_two() {
            return Err(Error::Argument(format!("{order}-QAM is not a square power-of-four order")));
        }
        let bits = side.trailing_zeros();
        // Mean power of levels ±1, ±3, … per dimension is (side² − 1)/3.
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let level = |g: usize| (2.0 * gray_to_position(g) as f64 - (side as f64 - 1.0)) * scale;
        let points = (0..order)
            .map(|label| Complex64::new(level(label >> bits), level(label & (side - 1))))
            .collect();
        Ok(Self { side, points })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Symbol for the 1-based message `c`.
    pub fn modulate(&self, c: usize) -> Result<Complex64> {
        if c == 0 || c > self.order() {
            return Err(Error::Argument(format!("message {c} outside 1..={}", self.order())));
        }
        Ok(self.points[c - 1])
    }

    /// Nearest point, 1-based; equidistant points resolve to the lowest index.
    pub fn demodulate(&self, r: Complex64) -> usize {
        self.nearest(r) + 1
    }

    pub(crate) fn nearest(&self, r: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (r - p).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Points per dimension.
    pub fn side(&self) -> usize {
        self.side
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_power() {
        let q = QamConstellation::new(16).unwrap();
        for c in 1..=16 {
            assert_eq!(q.demodulate(q.modulate(c).unwrap()), c);
        }
        let p = q.points().iter().map(|z| z.norm_sqr()).sum::<f64>() / 16.0;
        assert!((p - 1.0).abs() < 1e-12);
        let corner = q.points().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((corner - 3.0 / 10f64.sqrt() * 2f64.sqrt()).abs() < 1e-12);
        assert!((corner - 1.341_640_786_499_874).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        for order in [4, 16, 64] {
            let q = QamConstellation::new(order).unwrap();
            let d = 2.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
            let mut pairs = 0;
            for i in 0..order {
                for j in i + 1..order {
                    let diff = q.points()[i] - q.points()[j];
                    let adjacent = ((diff.re.abs() - d).abs() < 1e-9 && diff.im.abs() < 1e-9)
                        || ((diff.im.abs() - d).abs() < 1e-9 && diff.re.abs() < 1e-9);
                    if adjacent {
                        pairs += 1;
                        assert_eq!((i ^ j).count_ones(), 1, "{order}-QAM labels {i} and {j}");
                    }
                }
            }
            let side = q.side();
            assert_eq!(pairs, 2 * side * (side - 1));
        }
    }

    #[test]
    fn origin_goes_to_lowest_inner_point() {
        let q = QamConstellation::new(16).unwrap();
        let c = q.demodulate(Complex64::new(0.0, 0.0));
        let inner: Vec<usize> = (1..=16).filter(|&c| q.modulate(c).unwrap().norm() < 0.5).collect();
        assert_eq!(inner.len(), 4);
        assert_eq!(c, inner[0]);
    }

    #[test]
    fn invalid_orders_and_indices() {
        assert!(QamConstellation::new(8).is_err());
        assert!(QamConstellation::new(9).is_err());
        let q = QamConstellation::new(16).unwrap();
        assert!(q.modulate(0).is_err());
        assert!(q.modulate(17).is_err());
    }
}
