use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature affine map of the training range onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Numerical("cannot fit a scaler on no data".into()))?;
        let mut min = first.clone();
        let mut max = first.clone();
        for r in rows {
            if r.len() != min.len() {
                return Err(Error::Dimension { expected: min.len(), got: r.len() });
            }
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Constant features map to 0.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width() {
            return Err(Error::Dimension { expected: self.width(), got: x.len() });
        }
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.width() {
            return Err(Error::Dimension { expected: self.width(), got: z.len() });
        }
        Ok(z.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect())
    }

    /// Fraction of entries of `x` inside the fitted range.
    pub fn coverage(&self, x: &[f64]) -> f64 {
        let inside = x
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .filter(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
            .count();
        inside as f64 / x.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = MinMaxScaler::fit(&[vec![0.0, 3.0], vec![10.0, 3.0]]).unwrap();
        assert_eq!(s.transform(&[5.0, 3.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(s.transform(&[0.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(s.transform(&[1.0]).is_err());
        assert!(MinMaxScaler::fit(&[]).is_err());
    }

    #[test]
    fn round_trip() {
        let s = MinMaxScaler::fit(&[vec![-1.3, 2.0], vec![4.7, 9.5], vec![0.2, 3.3]]).unwrap();
        let x = [1.234, 5.678];
        let back = s.inverse(&s.transform(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.coverage(&[0.0, 100.0]), 0.5);
    }
}
