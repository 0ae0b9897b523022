//! Diagonal Gaussian algebra: construction, log densities, and KL divergence
//! in bits. Everything downstream (chunking, PFR scoring, rate accounting)
//! runs through these few functions, all computed in log space.

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// A diagonal Gaussian over `dim()` independent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    /// Build from mean and per-dimension variance. Variances must be strictly
    /// positive and both vectors the same nonzero length.
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParameter { name: "mean", reason: "empty vector".into() });
        }
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: variance.len() });
        }
        for (i, &v) in variance.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveVariance { index: i, value: v });
            }
        }
        Ok(Self { mean, variance })
    }

    /// N(mean, var) with a shared scalar variance.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![variance; n])
    }

    /// Standard normal N(0, I).
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], variance: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Restriction to a contiguous dimension range.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim() {
            return Err(Error::InvalidParameter {
                name: "range",
                reason: format!("{range:?} invalid for dim {}", self.dim()),
            });
        }
        Ok(Self {
            mean: self.mean[range.clone()].to_vec(),
            variance: self.variance[range].to_vec(),
        })
    }

    /// ln density at `z`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let mut acc = 0.0;
        let mut comp = 0.0;
        for i in 0..z.len() {
            let d = z[i] - self.mean[i];
            let term = -0.5 * (LN_2PI + self.variance[i].ln() + d * d / self.variance[i]);
            neumaier(&mut acc, &mut comp, term);
        }
        Ok(acc + comp)
    }

    /// Per-dimension KL(q_i || p_i) against `p`, in bits.
    pub fn kl_bits_per_dim(&self, p: &DiagonalGaussian) -> Result<Vec<f64>> {
        if self.dim() != p.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: p.dim() });
        }
        Ok((0..self.dim())
            .map(|i| {
                let vq = self.variance[i];
                let vp = p.variance[i];
                let dm = self.mean[i] - p.mean[i];
                (0.5 * (vp / vq).ln() + (vq + dm * dm) / (2.0 * vp) - 0.5) / std::f64::consts::LN_2
            })
            .collect())
    }
}

/// KL(q || p) for diagonal Gaussians, in bits.
///
/// Per dimension this is `[ln(sigma_p/sigma_q) + (sigma_q^2 + (mu_q-mu_p)^2) /
/// (2 sigma_p^2) - 1/2] / ln 2`, summed with compensation so block partitions
/// add up to the total.
pub fn kl_bits(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    let per_dim = q.kl_bits_per_dim(p)?;
    let mut acc = 0.0;
    let mut comp = 0.0;
    for t in per_dim {
        neumaier(&mut acc, &mut comp, t);
    }
    Ok(acc + comp)
}

/// ln q(z) - ln p(z).
pub fn log_density_ratio(z: &[f64], q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: p.dim() });
    }
    if z.len() != q.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: z.len() });
    }
    let mut acc = 0.0;
    let mut comp = 0.0;
    for i in 0..z.len() {
        let dq = z[i] - q.mean()[i];
        let dp = z[i] - p.mean()[i];
        let term = 0.5 * (p.variance()[i] / q.variance()[i]).ln()
            + dp * dp / (2.0 * p.variance()[i])
            - dq * dq / (2.0 * q.variance()[i]);
        neumaier(&mut acc, &mut comp, term);
    }
    Ok(acc + comp)
}

/// Neumaier compensated accumulation step.
#[inline]
pub(crate) fn neumaier(acc: &mut f64, comp: &mut f64, term: f64) {
    let t = *acc + term;
    if acc.abs() >= term.abs() {
        *comp += (*acc - t) + term;
    } else {
        *comp += (term - t) + *acc;
    }
    *acc = t;
}
