//! DDPM machinery: noise schedules, forward marginals, posteriors, reverse
//! kernels, and an analytic Gaussian-mixture denoiser whose conditional
//! posterior mean is exact, so every rate identity downstream can be checked
//! against closed forms.
//!
//! Indexing convention: timesteps run 1..=T, `alpha_bar(0) = 1`. The reverse
//! kernel `p(z_t | z_{t+1})` uses the posterior variance
//! `beta_tilde_{t+1} = (1 - alpha_bar_t) / (1 - alpha_bar_{t+1}) * beta_{t+1}`,
//! which matches the q-posterior variance so the per-step KL is a pure mean
//! shift. At the chain boundary (t = 0) the posterior variance degenerates to
//! zero; the reverse variance there falls back to `beta_1`.

use crate::error::{Error, Result};
use crate::gaussian::DiagonalGaussian;
use crate::grid::Grid;

/// beta_t tables plus the derived alpha and alpha-bar products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    id: String,
    registry_index: u16,
    /// betas[i] = beta_{i+1}, i in 0..T.
    betas: Vec<f64>,
    /// alpha_bars[t] = prod_{s<=t} (1 - beta_s); alpha_bars[0] = 1.
    alpha_bars: Vec<f64>,
}

/// Registry indices 0..16 are reserved for built-in schedules; config files
/// may register external schedules at 16 and above.
pub const SCHEDULE_LINEAR_64: u16 = 0;
pub const SCHEDULE_LINEAR_256: u16 = 1;
pub const FIRST_EXTERNAL_SCHEDULE: u16 = 16;

impl NoiseSchedule {
    pub fn linear(id: &str, registry_index: u16, t: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t == 0 || t > u16::MAX as usize {
            return Err(Error::InvalidParameter { name: "t", reason: format!("bad step count {t}") });
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            });
        }
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        Self::from_betas(id, registry_index, betas)
    }

    pub fn from_betas(id: &str, registry_index: u16, betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.len() > u16::MAX as usize {
            return Err(Error::InvalidParameter { name: "betas", reason: "bad length".into() });
        }
        for w in betas.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidParameter {
                    name: "betas",
                    reason: "must be monotonically non-decreasing".into(),
                });
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::NonPositiveVariance { index: i, value: b });
            }
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(Self { id: id.to_string(), registry_index, betas, alpha_bars })
    }

    /// Built-in schedules addressable by registry index.
    pub fn builtin(index: u16) -> Result<Self> {
        match index {
            SCHEDULE_LINEAR_64 => Self::linear("linear64", SCHEDULE_LINEAR_64, 64, 1e-4, 0.02),
            SCHEDULE_LINEAR_256 => Self::linear("linear256", SCHEDULE_LINEAR_256, 256, 1e-4, 0.02),
            other => Err(Error::UnknownSchedule(other)),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn registry_index(&self) -> u16 {
        self.registry_index
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_t = 1 - beta_t.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// alpha_bar_t for t in 0..=T (alpha_bar_0 = 1).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance beta_tilde_t = (1 - abar_{t-1})/(1 - abar_t) beta_t,
    /// defined for t in 2..=T (it degenerates to 0 at t = 1).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.beta(t)
    }

    /// Variance of the reverse kernel p(z_{t_next - 1} | z_{t_next}); the
    /// boundary step t_next = 1 uses beta_1.
    pub fn reverse_variance(&self, t_next: usize) -> f64 {
        if t_next >= 2 {
            self.posterior_variance(t_next)
        } else {
            self.beta(1)
        }
    }
}

/// Axis-aligned tag region in latent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    pub fn intersects(&self, other: &Rect) -> bool {
        self.row < other.row + other.rows
            && other.row < self.row + self.rows
            && self.col < other.col + other.cols
            && other.col < self.col + self.cols
    }
}

/// Transmitted latent hint with the observation variance the conditional
/// prior should assume for it.
#[derive(Debug, Clone, PartialEq)]
pub struct HintField {
    pub values: Grid,
    pub variance: f64,
}

/// Explicit conditioning: tag indices (optionally with spatial regions) and
/// the dequantized latent hint. Both parts may be absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Condition {
    pub tags: Vec<usize>,
    /// Parallel to `tags` when non-empty; a region scopes its tag spatially.
    pub regions: Vec<Option<Rect>>,
    pub latent_hint: Option<HintField>,
    /// When the conditioned state is a tile of a larger latent, the
    /// row-major cell indices (into the full latent) that the state covers.
    /// Spatial denoisers restrict themselves to these cells.
    pub cells: Option<Vec<usize>>,
}

impl Condition {
    pub fn from_tags(tags: Vec<usize>) -> Self {
        Self { tags, regions: Vec::new(), latent_hint: None, cells: None }
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty() && self.latent_hint.is_none()
    }

    pub fn region_of(&self, i: usize) -> Option<Rect> {
        self.regions.get(i).copied().flatten()
    }
}

/// Noise predictor interface; implementations must be pure functions of
/// their arguments and safe to call concurrently.
pub trait Denoiser: Sync {
    fn predict_noise(&self, x_t: &[f64], t: usize, cond: &Condition, sched: &NoiseSchedule) -> Vec<f64>;
}

/// Forward marginal q(x_t | x_0) = N(sqrt(abar_t) x0, (1 - abar_t) I).
pub fn forward_marginal(x0: &[f64], t: usize, sched: &NoiseSchedule) -> Result<DiagonalGaussian> {
    if t < 1 || t > sched.len() {
        return Err(Error::TimestepOutOfRange { t, lo: 1, hi: sched.len() });
    }
    let abar = sched.alpha_bar(t);
    let scale = abar.sqrt();
    DiagonalGaussian::isotropic(x0.iter().map(|&v| scale * v).collect(), 1.0 - abar)
}

/// DDPM posterior q(x_t | x_{t+1}, x_0) for t in 1..T:
/// mean = (sqrt(abar_t) beta_{t+1} x0 + sqrt(alpha_{t+1})(1 - abar_t) x_next)
///        / (1 - abar_{t+1}),
/// variance = beta_tilde_{t+1}.
pub fn posterior(x0: &[f64], x_next: &[f64], t: usize, sched: &NoiseSchedule) -> Result<DiagonalGaussian> {
    if t < 1 || t + 1 > sched.len() {
        return Err(Error::TimestepOutOfRange { t, lo: 1, hi: sched.len().saturating_sub(1) });
    }
    if x0.len() != x_next.len() {
        return Err(Error::DimensionMismatch { expected: x0.len(), got: x_next.len() });
    }
    let abar_t = sched.alpha_bar(t);
    let abar_next = sched.alpha_bar(t + 1);
    let beta_next = sched.beta(t + 1);
    let alpha_next = sched.alpha(t + 1);
    let c0 = abar_t.sqrt() * beta_next / (1.0 - abar_next);
    let c1 = alpha_next.sqrt() * (1.0 - abar_t) / (1.0 - abar_next);
    let mean = x0.iter().zip(x_next).map(|(&a, &b)| c0 * a + c1 * b).collect();
    DiagonalGaussian::isotropic(mean, sched.posterior_variance(t + 1))
}

/// Reverse kernel p(z_t | z_{t+1}, cond) for t in 0..T:
/// mean = (x_next - beta_{t+1}/sqrt(1 - abar_{t+1}) * eps_hat) / sqrt(alpha_{t+1}),
/// variance = reverse_variance(t+1).
pub fn reverse_kernel<D: Denoiser + ?Sized>(
    den: &D,
    x_next: &[f64],
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
) -> Result<DiagonalGaussian> {
    if t + 1 > sched.len() {
        return Err(Error::TimestepOutOfRange { t, lo: 0, hi: sched.len() - 1 });
    }
    let eps = den.predict_noise(x_next, t + 1, cond, sched);
    if eps.len() != x_next.len() {
        return Err(Error::DimensionMismatch { expected: x_next.len(), got: eps.len() });
    }
    let beta_next = sched.beta(t + 1);
    let abar_next = sched.alpha_bar(t + 1);
    let alpha_next = sched.alpha(t + 1);
    let k = beta_next / (1.0 - abar_next).sqrt();
    let inv = 1.0 / alpha_next.sqrt();
    let mean = x_next.iter().zip(&eps).map(|(&x, &e)| (x - k * e) * inv).collect();
    DiagonalGaussian::isotropic(mean, sched.reverse_variance(t + 1))
}

/// Predicts zero noise everywhere; handy as a null model in tests.
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, x_t: &[f64], _t: usize, _cond: &Condition, _sched: &NoiseSchedule) -> Vec<f64> {
        vec![0.0; x_t.len()]
    }
}

/// Gaussian mixture over clean latents: x0 ~ sum_k w_k N(mu_k, v I). The
/// optimal noise prediction is (x_t - sqrt(abar_t) E[x0|x_t]) / sqrt(1-abar_t)
/// with E[x0|x_t] computed from per-component conjugate posteriors. Tags
/// condition the prior by restricting and renormalizing component weights
/// (tag index i selects component i mod K); the latent hint, when present,
/// enters as an extra per-dimension Gaussian observation of x0.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    component_means: Vec<Vec<f64>>,
    component_weights: Vec<f64>,
    observation_variance: f64,
}

impl MixtureModel {
    pub fn new(
        component_means: Vec<Vec<f64>>,
        component_weights: Vec<f64>,
        observation_variance: f64,
    ) -> Result<Self> {
        if component_means.is_empty() || component_means.len() != component_weights.len() {
            return Err(Error::InvalidParameter {
                name: "component_means",
                reason: "need one weight per component and at least one component".into(),
            });
        }
        let dim = component_means[0].len();
        if dim == 0 || component_means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidParameter {
                name: "component_means",
                reason: "components must share a nonzero dimension".into(),
            });
        }
        let sum: f64 = component_weights.iter().sum();
        if component_weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "component_weights",
                reason: format!("weights must be nonnegative and sum to 1 (sum = {sum})"),
            });
        }
        if !(observation_variance > 0.0) {
            return Err(Error::NonPositiveVariance { index: 0, value: observation_variance });
        }
        Ok(Self { component_means, component_weights, observation_variance })
    }

    pub fn dim(&self) -> usize {
        self.component_means[0].len()
    }

    pub fn components(&self) -> usize {
        self.component_means.len()
    }

    pub fn component_mean(&self, k: usize) -> &[f64] {
        &self.component_means[k]
    }

    pub fn observation_variance(&self) -> f64 {
        self.observation_variance
    }

    /// Prior weights after tag conditioning: the tag set selects component
    /// indices (mod K) and renormalizes; no tags means the original weights.
    pub fn conditioned_weights(&self, cond: &Condition) -> Vec<f64> {
        if cond.tags.is_empty() {
            return self.component_weights.clone();
        }
        let k = self.components();
        let mut mask = vec![false; k];
        for &tag in &cond.tags {
            mask[tag % k] = true;
        }
        let mut w: Vec<f64> =
            (0..k).map(|i| if mask[i] { self.component_weights[i] } else { 0.0 }).collect();
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return self.component_weights.clone();
        }
        for v in &mut w {
            *v /= sum;
        }
        w
    }

    /// Posterior component responsibilities and per-component posterior means
    /// of x0 given x_t (and the hint when present). When `cond.cells` is set
    /// the model restricts itself to those latent cells, so tiles condition
    /// on their own local evidence.
    pub fn posterior_stats(
        &self,
        x_t: &[f64],
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let abar = sched.alpha_bar(t);
        let dim = x_t.len();
        let cells = cond.cells.as_deref();
        debug_assert!(cells.map_or(dim == self.dim(), |c| c.len() == dim));
        let v = self.observation_variance;
        let noise_var = 1.0 - abar;
        let sqrt_abar = abar.sqrt();
        let weights = self.conditioned_weights(cond);
        let hint = cond.latent_hint.as_ref();

        let mut log_post = Vec::with_capacity(self.components());
        let mut means = Vec::with_capacity(self.components());
        for (k, mu_full) in self.component_means.iter().enumerate() {
            if weights[k] <= 0.0 {
                log_post.push(f64::NEG_INFINITY);
                means.push(vec![0.0; dim]);
                continue;
            }
            let mu = |d: usize| mu_full[cells.map_or(d, |c| c[d])];
            let mut ll = weights[k].ln();
            let mut mean_k = Vec::with_capacity(dim);
            // Marginal of x_t under component k: N(sqrt(abar) mu, abar v + 1 - abar).
            let marg_var = abar * v + noise_var;
            for d in 0..dim {
                let diff = x_t[d] - sqrt_abar * mu(d);
                ll += -0.5 * ((2.0 * std::f64::consts::PI * marg_var).ln() + diff * diff / marg_var);
                // Conjugate update of x0_d from x_t_d.
                let prec1 = 1.0 / v + abar / noise_var;
                let m1 = (mu(d) / v + sqrt_abar * x_t[d] / noise_var) / prec1;
                let (m2, _prec2) = if let Some(h) = hint {
                    let hv = h.variance;
                    let hd = h.values.data()[d];
                    // Hint likelihood under component k marginalizes the
                    // stage-1 posterior: h_d ~ N(m1, 1/prec1 + hv).
                    let s = 1.0 / prec1 + hv;
                    let dh = hd - m1;
                    ll += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + dh * dh / s);
                    let prec2 = prec1 + 1.0 / hv;
                    ((m1 * prec1 + hd / hv) / prec2, prec2)
                } else {
                    (m1, prec1)
                };
                mean_k.push(m2);
            }
            log_post.push(ll);
            means.push(mean_k);
        }
        // Normalized responsibilities in log space.
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = log_post.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= sum;
        }
        (resp, means)
    }

    /// E[x0 | x_t, cond] under the mixture.
    pub fn posterior_mean_x0(&self, x_t: &[f64], t: usize, cond: &Condition, sched: &NoiseSchedule) -> Vec<f64> {
        let (resp, means) = self.posterior_stats(x_t, t, cond, sched);
        let mut out = vec![0.0; x_t.len()];
        for (k, m) in means.iter().enumerate() {
            if resp[k] > 0.0 {
                for d in 0..x_t.len() {
                    out[d] += resp[k] * m[d];
                }
            }
        }
        out
    }
}

impl Denoiser for MixtureModel {
    fn predict_noise(&self, x_t: &[f64], t: usize, cond: &Condition, sched: &NoiseSchedule) -> Vec<f64> {
        let abar = sched.alpha_bar(t);
        let e_x0 = self.posterior_mean_x0(x_t, t, cond, sched);
        let k = 1.0 / (1.0 - abar).sqrt();
        let s = abar.sqrt();
        x_t.iter().zip(&e_x0).map(|(&x, &m)| k * (x - s * m)).collect()
    }
}
