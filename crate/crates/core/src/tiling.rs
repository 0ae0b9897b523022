//! Overlapping-tile processing: grid construction, Gaussian weight masks,
//! normalized overlap-add merging, and per-tile condition partitioning.

use crate::diffusion::{Condition, Rect};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Floor applied to mask weights so no cell is ever weightless.
pub const MASK_FLOOR: f64 = 1e-4;

/// Deterministic tiling of a full grid into equal-extent, overlapping tiles.
/// Boundary tiles shift inward rather than padding, so extents never exceed
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub full: (usize, usize),
    pub tile: usize,
    pub overlap: usize,
    pub tiles: Vec<Rect>,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

fn axis_origins(full: usize, tile: usize, stride: usize) -> Vec<usize> {
    if full <= tile {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0usize;
    loop {
        if o + tile >= full {
            origins.push(full - tile);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins.dedup();
    origins
}

/// Build the tile rectangles covering `full` with the given square tile size
/// and overlap. Inputs smaller than the tile yield a single full-extent tile.
pub fn make_grid(full: (usize, usize), tile: usize, overlap: usize) -> Result<TileGrid> {
    if full.0 == 0 || full.1 == 0 {
        return Err(Error::InvalidParameter { name: "full", reason: "empty grid".into() });
    }
    if tile == 0 {
        return Err(Error::InvalidParameter { name: "tile", reason: "tile size must be positive".into() });
    }
    if overlap >= tile {
        return Err(Error::InvalidParameter {
            name: "overlap",
            reason: format!("overlap {overlap} must be smaller than tile {tile}"),
        });
    }
    let stride = tile - overlap;
    let rows = axis_origins(full.0, tile, stride);
    let cols = axis_origins(full.1, tile, stride);
    let tr = tile.min(full.0);
    let tc = tile.min(full.1);
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            tiles.push(Rect { row: r, col: c, rows: tr, cols: tc });
        }
    }
    Ok(TileGrid { full, tile, overlap, tiles })
}

/// Nonnegative per-cell weights over one tile extent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl WeightMask {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }
}

/// Separable Gaussian mask centered on the tile, floor-clamped to keep every
/// weight strictly positive. `sigma_fraction` scales each axis extent.
pub fn gaussian_mask(extent: (usize, usize), sigma_fraction: f64) -> Result<WeightMask> {
    if extent.0 == 0 || extent.1 == 0 {
        return Err(Error::InvalidParameter { name: "extent", reason: "empty mask".into() });
    }
    if !(sigma_fraction > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma_fraction",
            reason: format!("must be positive, got {sigma_fraction}"),
        });
    }
    let axis = |n: usize| -> Vec<f64> {
        let sigma = sigma_fraction * n as f64;
        let center = n as f64 / 2.0;
        (0..n)
            .map(|i| {
                let d = (i as f64 + 0.5 - center) / sigma;
                (-0.5 * d * d).exp()
            })
            .collect()
    };
    let gr = axis(extent.0);
    let gc = axis(extent.1);
    let mut weights = Vec::with_capacity(extent.0 * extent.1);
    for r in 0..extent.0 {
        for c in 0..extent.1 {
            weights.push((gr[r] * gc[c]).max(MASK_FLOOR));
        }
    }
    Ok(WeightMask { rows: extent.0, cols: extent.1, weights })
}

/// Weighted overlap-add: out(cell) = sum_i w_i v_i / sum_i w_i over covering
/// tiles. Cells covered by exactly one tile are copied bit-exactly.
pub fn merge(outputs: &[Grid], grid: &TileGrid, masks: &[WeightMask]) -> Result<Grid> {
    if outputs.len() != grid.tiles.len() || masks.len() != grid.tiles.len() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{} tile outputs / {} masks for {} tiles",
                outputs.len(),
                masks.len(),
                grid.tiles.len()
            ),
        });
    }
    let (rows, cols) = grid.full;
    let mut num = vec![0.0f64; rows * cols];
    let mut den = vec![0.0f64; rows * cols];
    let mut count = vec![0u32; rows * cols];
    let mut single = vec![0.0f64; rows * cols];
    for ((rect, out), mask) in grid.tiles.iter().zip(outputs).zip(masks) {
        if out.shape() != (rect.rows, rect.cols) {
            return Err(Error::ShapeMismatch {
                context: format!("tile output {:?} vs rect {}x{}", out.shape(), rect.rows, rect.cols),
            });
        }
        if (mask.rows, mask.cols) != (rect.rows, rect.cols) {
            return Err(Error::ShapeMismatch {
                context: format!("mask {}x{} vs rect {}x{}", mask.rows, mask.cols, rect.rows, rect.cols),
            });
        }
        for r in 0..rect.rows {
            for c in 0..rect.cols {
                let idx = (rect.row + r) * cols + rect.col + c;
                let w = mask.get(r, c);
                let v = out.get(r, c);
                num[idx] += w * v;
                den[idx] += w;
                count[idx] += 1;
                single[idx] = v;
            }
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        match count[idx] {
            0 => {
                return Err(Error::ShapeMismatch {
                    context: format!("cell {idx} not covered by any tile"),
                })
            }
            1 => data.push(single[idx]),
            _ => data.push(num[idx] / den[idx]),
        }
    }
    Grid::new(rows, cols, data)
}

/// Split a condition across tiles: a tag with a region goes to every tile
/// whose rectangle intersects it; unscoped tags go to all tiles. Each tile's
/// list is truncated to `cap` in input order. The latent hint is cropped to
/// the tile extent, and each tile condition records the full-latent cells it
/// covers so spatial denoisers can restrict themselves.
pub fn partition_condition(cond: &Condition, grid: &TileGrid, cap: usize) -> Result<Vec<Condition>> {
    let mut out = Vec::with_capacity(grid.tiles.len());
    for rect in &grid.tiles {
        let mut tags = Vec::new();
        for (i, &tag) in cond.tags.iter().enumerate() {
            let keep = match cond.region_of(i) {
                Some(region) => region.intersects(rect),
                None => true,
            };
            if keep && tags.len() < cap {
                tags.push(tag);
            }
        }
        let latent_hint = match &cond.latent_hint {
            Some(h) => {
                let values = h.values.crop(rect.row, rect.col, rect.rows, rect.cols)?;
                Some(crate::diffusion::HintField { values, variance: h.variance })
            }
            None => None,
        };
        out.push(Condition {
            tags,
            regions: Vec::new(),
            latent_hint,
            cells: Some(tile_cells(rect, grid.full)),
        });
    }
    Ok(out)
}

/// Row-major full-latent indices covered by a tile rectangle.
pub fn tile_cells(rect: &Rect, full: (usize, usize)) -> Vec<usize> {
    let mut cells = Vec::with_capacity(rect.rows * rect.cols);
    for r in rect.row..rect.row + rect.rows {
        for c in rect.col..rect.col + rect.cols {
            cells.push(r * full.1 + c);
        }
    }
    cells
}
