//! Grid file ingestion: binary portable graymap (P5) and raw little-endian
//! float64 grids with a 16-byte dimension header.

use drc_core::error::{Error, Result};
use drc_core::Grid;

/// Read either format, sniffing the P5 magic.
pub fn read_grid(path: &std::path::Path) -> Result<Grid> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") {
        read_pgm(&bytes)
    } else {
        read_raw(&bytes)
    }
}

/// Binary PGM: "P5", whitespace-separated width/height/maxval (comments with
/// '#'), one raster byte per pixel, scaled to [0, 1].
fn read_pgm(bytes: &[u8]) -> Result<Grid> {
    let mut pos = 2usize;
    let mut fields = Vec::new();
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace()) {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Malformed { offset: pos as u64 * 8, reason: "bad pgm header".into() });
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Malformed { offset: pos as u64 * 8, reason: "bad pgm number".into() })?;
        fields.push(v);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Malformed { offset: 0, reason: format!("unsupported pgm maxval {maxval}") });
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(Error::Truncated { needed: (pos + w * h) as u64 * 8, available: bytes.len() as u64 * 8 });
    }
    let data = bytes[pos..pos + w * h].iter().map(|&b| b as f64 / maxval as f64).collect();
    Grid::new(h, w, data)
}

/// Raw grid: rows (u64 LE), cols (u64 LE), then rows*cols f64 LE row-major.
fn read_raw(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < 16 {
        return Err(Error::Malformed { offset: 0, reason: "raw grid shorter than its header".into() });
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expect = 16usize
        .checked_add(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or(
            Error::Malformed { offset: 0, reason: "raw grid dimensions overflow".into() },
        )?)
        .ok_or(Error::Malformed { offset: 0, reason: "raw grid dimensions overflow".into() })?;
    if bytes.len() != expect {
        return Err(Error::Malformed {
            offset: 16,
            reason: format!("raw grid length {} != expected {expect}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let off = 16 + i * 8;
        data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Grid::new(rows, cols, data)
}

/// Write by extension: .pgm clamps to [0, 1] and scales to 255; anything
/// else gets the raw f64 layout.
pub fn write_grid(path: &std::path::Path, grid: &Grid) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "pgm") {
        let mut out = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
        out.extend(grid.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    } else {
        let mut out = Vec::with_capacity(16 + grid.len() * 8);
        out.extend_from_slice(&(grid.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(grid.cols() as u64).to_le_bytes());
        for v in grid.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
