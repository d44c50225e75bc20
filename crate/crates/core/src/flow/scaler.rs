use serde::{Deserialize, Serialize};

use super::FlowError;

/// Per-dimension affine map of the `[1st, 99th]` percentile range onto
/// `[-1, 1]`. Constant dimensions keep unit scale and map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScaler {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ActionScaler {
    /// Fit from action rows (each of length `D`).
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, FlowError> {
        let first = rows.first().ok_or(FlowError::EmptyDataset)?;
        let d = first.len();
        let mut s = Self { center: Vec::with_capacity(d), scale: Vec::with_capacity(d), degenerate: Vec::with_capacity(d) };
        for j in 0..d {
            let mut col = Vec::with_capacity(rows.len());
            for r in rows {
                if r.len() != d {
                    return Err(FlowError::ShapeMismatch { expected: (1, d), got: (1, r.len()) });
                }
                col.push(r[j]);
            }
            col.sort_by(f64::total_cmp);
            let (lo, hi) = (percentile(&col, 1.0), percentile(&col, 99.0));
            if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
                log::warn!("action dimension {j} is constant ({lo}); mapped to 0 with unit scale");
                s.center.push(lo);
                s.scale.push(1.0);
                s.degenerate.push(true);
            } else {
                s.center.push((lo + hi) / 2.0);
                s.scale.push(2.0 / (hi - lo));
                s.degenerate.push(false);
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Normalize one row; returns the number of clipped entries.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) -> usize {
        let mut clipped = 0;
        for j in 0..self.dim() {
            let v = (x[j] - self.center[j]) * self.scale[j];
            if v.abs() > 1.0 {
                clipped += 1;
            }
            out[j] = v.clamp(-1.0, 1.0);
        }
        clipped
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| y[j] / self.scale[j] + self.center[j]).collect()
    }
}
