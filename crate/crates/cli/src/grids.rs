//! PNG sample grids.

use std::path::Path;

use image::{GrayImage, Luma};
use oneshot_core::{Bitmap, SIDE};

use crate::error::{CliError, Result};

const PAD: usize = 2;

/// Rows of tiles on a white page, ink dark; short rows are left blank.
pub fn write_grid(path: &Path, rows: &[Vec<&Bitmap>]) -> Result<()> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let w = cols * (SIDE + PAD) + PAD;
    let h = rows.len().max(1) * (SIDE + PAD) + PAD;
    let mut img = GrayImage::from_pixel(w as u32, h as u32, Luma([200]));
    for (r, row) in rows.iter().enumerate() {
        for (c, bitmap) in row.iter().enumerate() {
            let (x0, y0) = (PAD + c * (SIDE + PAD), PAD + r * (SIDE + PAD));
            for (i, v) in bitmap.to_gray8().into_iter().enumerate() {
                img.put_pixel((x0 + i % SIDE) as u32, (y0 + i / SIDE) as u32, Luma([v]));
            }
        }
    }
    img.save(path)
        .map_err(|e| CliError::Evaluation(format!("cannot write {}: {e}", path.display())))
}
