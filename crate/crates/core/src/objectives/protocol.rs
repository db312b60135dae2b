//! Order-invariant sequence evaluation.
//!
//! A blurred image is the same whether its latent frames play forwards or
//! backwards, so a prediction is scored against both the ground-truth order
//! and its reverse and the better alignment is reported.

use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Per-frame scores under the chosen alignment.
///
/// Entry `i` always refers to ground-truth position `i`. Under
/// [`Direction::Reverse`] it scores `pred[n - 1 - i]` against `gt[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub direction: Direction,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn score<T: Scalar>(pred: &[&Image<T>], gt: &[&Image<T>], reverse: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gt.len();
    let mut p = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for (i, g) in gt.iter().enumerate() {
        let q = if reverse { pred[n - 1 - i] } else { pred[i] };
        p.push(psnr(q, g)?);
        s.push(ssim(q, g)?);
    }
    Ok((p, s))
}

/// Scores `pred` against `gt` in both temporal orders and keeps the one with
/// the higher mean PSNR (ties go to forward). SSIM follows the same choice.
pub fn order_invariant_eval<T: Scalar>(pred: &[&Image<T>], gt: &[&Image<T>]) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Input("cannot evaluate an empty sequence".into()));
    }
    let (fp, fs) = score(pred, gt, false)?;
    let (rp, rs) = score(pred, gt, true)?;
    Ok(if mean(&rp) > mean(&fp) {
        MetricReport {
            direction: Direction::Reverse,
            psnr: rp,
            ssim: rs,
        }
    } else {
        MetricReport {
            direction: Direction::Forward,
            psnr: fp,
            ssim: fs,
        }
    })
}
