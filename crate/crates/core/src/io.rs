//! Plain-text image and residual files.
//!
//! Pixel-domain grids are written as ASCII PGM (`P2`, one channel) or PPM
//! (`P3`, three channels) with maxval 65535. Residuals are written as CSV:
//! a literal `h,w,c` header, one row with the dimensions, then one value per
//! line in channel-fastest order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Shape};

const MAXVAL: u32 = 65535;

pub fn encode_netpbm(grid: &ImageGrid) -> String {
    let s = grid.shape();
    let magic = if s.channels == 1 { "P2" } else { "P3" };
    let mut out = format!("{magic}\n{} {}\n{MAXVAL}\n", s.width, s.height);
    let per_row = s.width * s.channels;
    for row in grid.data().chunks(per_row) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u32).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_netpbm(text: &str) -> Result<ImageGrid> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let channels = match tokens.next() {
        Some("P2") => 1,
        Some("P3") => 3,
        other => return Err(Error::Parse(format!("unsupported netpbm magic {other:?}"))),
    };
    let mut next_num = |what: &str| -> Result<u32> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .parse::<u32>()
            .map_err(|e| Error::Parse(format!("{what}: {e}")))
    };
    let width = next_num("width")? as usize;
    let height = next_num("height")? as usize;
    let maxval = next_num("maxval")?;
    if maxval == 0 {
        return Err(Error::Parse("maxval must be positive".into()));
    }
    let shape = Shape::new(height, width, channels)?;
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        let v = next_num(&format!("sample {i}"))?;
        if v > maxval {
            return Err(Error::Parse(format!("sample {i} exceeds maxval")));
        }
        data.push(v as f64 / maxval as f64);
    }
    ImageGrid::from_vec(shape, data, true)
}

pub fn encode_residual_csv(grid: &ImageGrid) -> String {
    let s = grid.shape();
    let mut out = format!("h,w,c\n{},{},{}\n", s.height, s.width, s.channels);
    for v in grid.data() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn decode_residual_csv(text: &str) -> Result<ImageGrid> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("h,w,c") {
        return Err(Error::Parse("residual csv must start with `h,w,c`".into()));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::Parse("missing dimension row".into()))?
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse("dimension row needs three fields".into()));
    }
    let shape = Shape::new(dims[0], dims[1], dims[2])?;
    let data = lines
        .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    ImageGrid::from_vec(shape, data, false)
}

/// Writes a grid using the format matching its domain.
pub fn write_grid(path: &Path, grid: &ImageGrid) -> Result<()> {
    let text = if grid.pixel_domain() { encode_netpbm(grid) } else { encode_residual_csv(grid) };
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a `.ppm`/`.pgm` image or a residual `.csv`.
pub fn read_grid(path: &Path) -> Result<ImageGrid> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => decode_residual_csv(&text),
        _ => decode_netpbm(&text),
    }
}
