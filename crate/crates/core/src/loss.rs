//! Large-margin loss over latent vectors.
//!
//! Each term takes the live latents of its query instances (one row per
//! anchor-table row) and the frozen anchor latents `t`, and returns the value
//! together with the gradient with respect to the live rows only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Floor for the type-3 denominator.
pub const CC_DENOM_MIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sv: f64,
    pub l_mc: f64,
    pub l_cc: f64,
    pub total: f64,
    pub n_s: usize,
    pub n_q: usize,
    pub n_r: usize,
    pub sv_close: usize,
    pub wr_close: usize,
    pub sh_close: usize,
}

fn check_shapes(live: &Matrix, anchors: &Matrix, table: &[Vec<usize>]) -> Result<()> {
    if live.rows() != table.len() {
        return Err(Error::Shape(format!("{} live rows for {} anchor rows", live.rows(), table.len())));
    }
    if live.rows() > 0 && live.cols() != anchors.cols() {
        return Err(Error::Shape(format!("live width {} vs anchor width {}", live.cols(), anchors.cols())));
    }
    if let Some(&j) = table.iter().flatten().find(|&&j| j >= anchors.rows()) {
        return Err(Error::Shape(format!("anchor index {j} outside {} stored latents", anchors.rows())));
    }
    Ok(())
}

/// `Σ_i Σ_j ||f_i − t_j||²` and the per-row sums `Σ_j (f_i − t_j)`.
fn pull_sums(live: &Matrix, anchors: &Matrix, table: &[Vec<usize>]) -> (f64, Matrix) {
    let mut total = 0.0;
    let mut diff = Matrix::zeros(live.rows(), live.cols());
    for (i, row) in table.iter().enumerate() {
        let f = live.row(i);
        let g = diff.row_mut(i);
        for &j in row {
            for ((gk, &fk), &tk) in g.iter_mut().zip(f).zip(anchors.row(j)) {
                let d = fk - tk;
                total += d * d;
                *gk += d;
            }
        }
    }
    (total, diff)
}

fn scaled(mut m: Matrix, s: f64) -> Matrix {
    m.data_mut().iter_mut().for_each(|v| *v *= s);
    m
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

/// Pulls each support vector towards its type-1 anchors, averaged over |S|.
pub fn loss_sv(live_s: &Matrix, anchors: &Matrix, a: &[Vec<usize>]) -> Result<(f64, Matrix)> {
    check_shapes(live_s, anchors, a)?;
    if a.is_empty() {
        return Err(Error::NoSupportVectors("support-vector loss over an empty set".into()));
    }
    let n = a.len() as f64;
    let (sum, diff) = pull_sums(live_s, anchors, a);
    Ok((finite("l_sv", sum / n)?, scaled(diff, 2.0 / n)))
}

/// Pulls each misclassified instance towards its nearest support vectors,
/// averaged over |Q|. Zero when Q is empty.
pub fn loss_mc(live_q: &Matrix, anchors: &Matrix, m: &[Vec<usize>]) -> Result<(f64, Matrix)> {
    check_shapes(live_q, anchors, m)?;
    if m.is_empty() {
        return Ok((0.0, Matrix::zeros(0, live_q.cols())));
    }
    let n = m.len() as f64;
    let (sum, diff) = pull_sums(live_q, anchors, m);
    Ok((finite("l_mc", sum / n)?, scaled(diff, 2.0 / n)))
}

/// Pushes correctly classified instances away from opposite-class anchors:
/// `|R|` over the summed squared distances. Zero when every row is empty.
pub fn loss_cc(live_r: &Matrix, anchors: &Matrix, g: &[Vec<usize>]) -> Result<(f64, Matrix)> {
    check_shapes(live_r, anchors, g)?;
    if g.iter().all(Vec::is_empty) {
        return Ok((0.0, Matrix::zeros(live_r.rows(), live_r.cols())));
    }
    let n = g.len() as f64;
    let (mut denom, diff) = pull_sums(live_r, anchors, g);
    if denom < CC_DENOM_MIN {
        log::warn!("type-3 denominator {denom:.3e} clamped to {CC_DENOM_MIN:.0e}");
        denom = CC_DENOM_MIN;
        // the clamp is flat in the latents
        return Ok((finite("l_cc", n / denom)?, Matrix::zeros(live_r.rows(), live_r.cols())));
    }
    Ok((finite("l_cc", n / denom)?, scaled(diff, -2.0 * n / (denom * denom))))
}

pub fn total_loss(
    (l_sv, l_mc, l_cc): (f64, f64, f64),
    (n_s, n_q, n_r): (usize, usize, usize),
    (sv_close, wr_close, sh_close): (usize, usize, usize),
) -> LossBreakdown {
    LossBreakdown {
        l_sv,
        l_mc,
        l_cc,
        total: l_sv + l_mc + l_cc,
        n_s,
        n_q,
        n_r,
        sv_close,
        wr_close,
        sh_close,
    }
}
