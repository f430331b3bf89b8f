use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Componentwise standardization of training vectors; α is passed through
/// on its own range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub alpha_range: (f64, f64),
}

impl NormalizationStats {
    pub fn fit<'a>(data: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, DiffusionError> {
        let rows: Vec<&[f64]> = data.into_iter().collect();
        let dim = rows.first().ok_or(DiffusionError::EmptyDataset)?.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(DiffusionError::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..dim)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        if let Some(k) = std.iter().position(|s| !(*s > 0.0)) {
            return Err(DiffusionError::DegenerateNormalization(k));
        }
        Ok(Self {
            mean,
            std,
            alpha_range: (0.0, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((z, m), s)| z * s + m).collect()
    }

    pub fn normalize_alpha(&self, alpha: f64) -> f64 {
        let (lo, hi) = self.alpha_range;
        (alpha - lo) / (hi - lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_spread_is_rejected() {
        let rows = [vec![1.0, 2.0], vec![1.0, 3.0]];
        assert_eq!(
            NormalizationStats::fit(rows.iter().map(|r| r.as_slice())),
            Err(DiffusionError::DegenerateNormalization(0))
        );
    }

    proptest! {
        #[test]
        fn round_trip(
            rows in prop::collection::vec(prop::array::uniform4(-5.0f64..5.0), 2..50),
            x in prop::array::uniform4(-10.0f64..10.0),
        ) {
            let Ok(stats) = NormalizationStats::fit(rows.iter().map(|r| r.as_slice())) else { return Ok(()); };
            let back = stats.denormalize(&stats.normalize(&x));
            for k in 0..4 {
                prop_assert!((back[k] - x[k]).abs() <= 1e-12 * (1.0 + x[k].abs()));
            }
        }
    }
}
