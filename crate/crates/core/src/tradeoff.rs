//! Distortion-perception knob: a fixed linear decoder, a perception-flavored
//! encoder, the closed-form MSE-optimal plugin encoder, and the tau blend
//! that produces the coding target.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Condition-number ceiling past which the decoder matrix counts as rank
/// deficient.
const COND_LIMIT: f64 = 1e10;

/// Fixed linear decoder with both encoders precomputed.
#[derive(Debug, Clone)]
pub struct LinearAutoencoder {
    decoder: DMatrix<f64>,
    encoder_perceptual: DMatrix<f64>,
    encoder_mse: DMatrix<f64>,
    latent_shape: (usize, usize),
    pixel_shape: (usize, usize),
}

/// Least-squares minimizer of |x - D e|^2 over encoders e = E x, i.e. the
/// pseudo-inverse (D^T D)^-1 D^T, via singular value decomposition. Errors
/// when the condition number exceeds 1e10.
pub fn fit_mse_encoder(decoder: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = decoder.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient { cond });
    }
    svd.pseudo_inverse(smax * 1e-13).map_err(|_| Error::RankDeficient { cond })
}

/// Perception-flavored encoder stand-in: D^T with a fixed diagonal whitening
/// by column energy. Deliberately mismatched to the pseudo-inverse so the
/// tau knob has two distinct endpoints.
pub fn perceptual_encoder(decoder: &DMatrix<f64>) -> DMatrix<f64> {
    let nlat = decoder.ncols();
    let mut scales = Vec::with_capacity(nlat);
    let mean_energy: f64 =
        (0..nlat).map(|j| decoder.column(j).norm_squared()).sum::<f64>() / nlat as f64;
    for j in 0..nlat {
        let energy = decoder.column(j).norm_squared();
        scales.push(1.0 / (energy + 0.5 * mean_energy));
    }
    let mut enc = decoder.transpose();
    for (j, s) in scales.iter().enumerate() {
        enc.row_mut(j).scale_mut(*s);
    }
    enc
}

/// Elementwise convex combination tau*z + (1-tau)*z_tilde.
pub fn blend(z: &[f64], z_tilde: &[f64], tau: f64) -> Result<Vec<f64>> {
    if z.len() != z_tilde.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), got: z_tilde.len() });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must lie in [0, 1], got {tau}"),
        });
    }
    Ok(z.iter().zip(z_tilde).map(|(&a, &b)| tau * a + (1.0 - tau) * b).collect())
}

impl LinearAutoencoder {
    pub fn new(decoder: DMatrix<f64>, latent_shape: (usize, usize), pixel_shape: (usize, usize)) -> Result<Self> {
        let nlat = latent_shape.0 * latent_shape.1;
        let npix = pixel_shape.0 * pixel_shape.1;
        if decoder.nrows() != npix || decoder.ncols() != nlat {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "decoder {}x{} vs pixel {npix} / latent {nlat}",
                    decoder.nrows(),
                    decoder.ncols()
                ),
            });
        }
        if npix < nlat {
            return Err(Error::ShapeMismatch {
                context: format!("decoder must not compress: {npix} pixels < {nlat} latents"),
            });
        }
        let encoder_mse = fit_mse_encoder(&decoder)?;
        let encoder_perceptual = perceptual_encoder(&decoder);
        Ok(Self { decoder, encoder_perceptual, encoder_mse, latent_shape, pixel_shape })
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        self.latent_shape
    }

    pub fn pixel_shape(&self) -> (usize, usize) {
        self.pixel_shape
    }

    pub fn decoder_matrix(&self) -> &DMatrix<f64> {
        &self.decoder
    }

    fn apply(&self, m: &DMatrix<f64>, v: &[f64], out_shape: (usize, usize)) -> Result<Grid> {
        if v.len() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.ncols(), got: v.len() });
        }
        let x = DVector::from_column_slice(v);
        let y = m * x;
        Grid::new(out_shape.0, out_shape.1, y.data.into())
    }

    /// Perception-oriented latent z = E(x).
    pub fn encode_perceptual(&self, x: &Grid) -> Result<Grid> {
        self.apply(&self.encoder_perceptual, x.data(), self.latent_shape)
    }

    /// Distortion-oriented latent z~ = E_M(x).
    pub fn encode_mse(&self, x: &Grid) -> Result<Grid> {
        self.apply(&self.encoder_mse, x.data(), self.latent_shape)
    }

    pub fn decode(&self, z: &Grid) -> Result<Grid> {
        self.apply(&self.decoder, z.data(), self.pixel_shape)
    }

    /// Relative residual of D E_M D against D; near zero when E_M is the
    /// pseudo-inverse.
    pub fn pseudo_inverse_residual(&self) -> f64 {
        let ded = &self.decoder * &self.encoder_mse * &self.decoder;
        (&ded - &self.decoder).norm() / self.decoder.norm()
    }

    /// Serialize the decoder matrix: 16-byte dimension header (rows u64 LE,
    /// cols u64 LE) then rows*cols f64 LE, row-major.
    pub fn decoder_to_bytes(&self) -> Vec<u8> {
        matrix_to_bytes(&self.decoder)
    }
}

pub fn matrix_to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.len() * 8);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Malformed { offset: 0, reason: "matrix file shorter than its header".into() });
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expect = 16 + rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or(
        Error::Malformed { offset: 0, reason: "matrix dimensions overflow".into() },
    )?;
    if bytes.len() != expect {
        return Err(Error::Malformed {
            offset: 16,
            reason: format!("matrix file length {} != expected {expect}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let off = 16 + i * 8;
        data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
