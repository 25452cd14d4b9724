use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Image, Matrix};

/// 58 uniform patterns plus one bin for everything else.
pub const LBP_BINS: usize = 59;

fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Bin of every 8-bit code: uniform codes in ascending order, then the shared
/// non-uniform bin.
fn bin_table() -> [usize; 256] {
    let mut table = [LBP_BINS - 1; 256];
    let mut next = 0;
    for code in 0..=255u8 {
        if transitions(code) <= 2 {
            table[code as usize] = next;
            next += 1;
        }
    }
    debug_assert_eq!(next, LBP_BINS - 1);
    table
}

/// Radius-1, 8-neighbour uniform LBP histogram of the luma image over interior
/// pixels, L1-normalized. Neighbour `k` sits at angle `k·45°` counter-clockwise
/// from east and sets bit `k` when strictly brighter than the centre.
pub fn lbp_features(image: &Image) -> Result<Vec<f64>> {
    let (h, w) = (image.height, image.width);
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("LBP needs at least 3x3 pixels, got {h}x{w}")));
    }
    let gray = image.to_gray();
    let table = bin_table();
    let ring: Vec<(isize, isize)> = (0..8)
        .map(|k| {
            let a = f64::from(k) * std::f64::consts::FRAC_PI_4;
            (-(a.sin().round() as isize), a.cos().round() as isize)
        })
        .collect();
    let mut hist = vec![0.0; LBP_BINS];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let centre = gray[y * w + x];
            let code = ring.iter().enumerate().fold(0u8, |acc, (k, &(dy, dx))| {
                let v = gray[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                if v > centre { acc | (1 << k) } else { acc }
            });
            hist[table[code as usize]] += 1.0;
        }
    }
    let total = ((h - 2) * (w - 2)) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(hist)
}

/// One histogram row per image.
pub fn lbp_matrix(exec: Exec, images: &[&Image]) -> Result<Matrix> {
    let rows = exec.map(images.len(), |i| lbp_features(images[i]));
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, LBP_BINS));
    }
    Matrix::from_rows(&rows)
}
