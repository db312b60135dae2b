//! Training losses.
//!
//! Every `|.|_1` term is a per-pixel mean so that level weights and lambdas
//! do not depend on resolution. Each loss exists twice: as a plain function of
//! tensors and as a builder on an autodiff [`Graph`]. The two are written
//! independently and cross-checked in tests.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{image_pyramid, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Per-level weights from coarsest to full scale; empty selects `1 / 2^(k - l)`.
    pub level_weights: Vec<f64>,
    pub lambda_tc: f64,
    pub lambda_p: f64,
    /// Transformation consistency term on/off.
    pub use_tcl: bool,
    /// Symmetric penalty term on/off.
    pub use_pt: bool,
    /// Also feed image-transformer parameters into the consistency term.
    pub tc_include_itn: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            level_weights: Vec::new(),
            lambda_tc: 0.1,
            lambda_p: 0.01,
            use_tcl: true,
            use_pt: true,
            tc_include_itn: false,
        }
    }
}

impl LossConfig {
    /// Resolved weights for a `levels`-scale model, with disabled terms zeroed.
    pub fn weights(&self, levels: usize) -> Result<LossWeights> {
        let level_weights = if self.level_weights.is_empty() {
            default_level_weights(levels)
        } else if self.level_weights.len() == levels {
            self.level_weights.clone()
        } else {
            return Err(Error::Config(format!(
                "level_weights has {} entries for {levels} levels",
                self.level_weights.len()
            )));
        };
        let w = LossWeights {
            levels: level_weights,
            lambda_tc: if self.use_tcl { self.lambda_tc } else { 0.0 },
            lambda_p: if self.use_pt { self.lambda_p } else { 0.0 },
        };
        w.validate()?;
        Ok(w)
    }
}

/// `w_l = 1 / 2^(k - l)` for `l = 1..k`, coarsest first.
pub fn default_level_weights(levels: usize) -> Vec<f64> {
    (1..=levels).map(|l| 0.5f64.powi((levels - l) as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub levels: Vec<f64>,
    pub lambda_tc: f64,
    pub lambda_p: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let last = self.levels.last().copied().unwrap_or(0.0);
        if self.levels.iter().any(|w| !(*w >= 0.0)) || !(last > 0.0) {
            return Err(Error::Config(format!(
                "level weights must be >= 0 with a positive full-scale weight, got {:?}",
                self.levels
            )));
        }
        if !(self.lambda_tc >= 0.0 && self.lambda_p >= 0.0) {
            return Err(Error::Config("loss lambdas must be >= 0".into()));
        }
        Ok(())
    }
}

/// The three loss terms evaluated on one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub photometric: f64,
    pub consistency: f64,
    pub penalty: f64,
}

impl LossComponents {
    pub fn total(&self, lambda_tc: f64, lambda_p: f64) -> f64 {
        total_loss(self, lambda_tc, lambda_p)
    }
}

/// `L = L_mp + lambda_tc * L_tc + lambda_p * L_p`.
pub fn total_loss(c: &LossComponents, lambda_tc: f64, lambda_p: f64) -> f64 {
    c.photometric + lambda_tc * c.consistency + lambda_p * c.penalty
}

fn mean_abs_diff<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.expect_same_shape(b)?;
    let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(s / T::from_usize(a.len()).unwrap())
}

/// Ground-truth pyramid matching a `levels`-scale prediction.
pub fn gt_pyramid<T: Scalar>(gt: &Image<T>, levels: usize) -> Vec<Image<T>> {
    image_pyramid(gt, levels)
}

/// `sum_j sum_l w_l * mean|y_{j,l} - yhat_{j,l}|`.
///
/// `pred[j]` lists frame `j`'s images from coarsest to full scale; `gt[j]` is
/// the full-scale ground truth, downsampled here by repeated bilinear halving.
pub fn multiscale_photometric<T: Scalar>(pred: &[Vec<Image<T>>], gt: &[Image<T>], weights: &[f64]) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = T::zero();
    for (scales, y) in pred.iter().zip(gt) {
        if scales.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} scales vs {} level weights",
                scales.len(),
                weights.len()
            )));
        }
        let pyramid = gt_pyramid(y, scales.len());
        for ((yhat, yl), &w) in scales.iter().zip(&pyramid).zip(weights) {
            total += T::lit(w) * mean_abs_diff(yl, yhat)?;
        }
    }
    Ok(total)
}

/// `sum_j sum_{l >= 2} ||theta_{j,l} - theta_{j,l-1}||^2`.
pub fn transformation_consistency<T: Scalar>(thetas: &[Vec<[T; 6]>]) -> Result<T> {
    let mut total = T::zero();
    for levels in thetas {
        if levels.len() < 2 {
            return Err(Error::Input(format!(
                "transformation consistency needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        for pair in levels.windows(2) {
            total += pair[1]
                .iter()
                .zip(&pair[0])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>();
        }
    }
    Ok(total)
}

/// `-sum_{j != m} mean|y_{n+1-j} - yhat_j|` over full-scale frames.
pub fn symmetric_penalty<T: Scalar>(pred: &[Image<T>], gt: &[Image<T>]) -> Result<T> {
    let n = pred.len();
    if n != gt.len() {
        return Err(Error::Shape(format!(
            "{n} predictions vs {} ground-truth frames",
            gt.len()
        )));
    }
    if n % 2 == 0 {
        return Err(Error::Input(format!(
            "symmetric penalty needs an odd frame count, got {n}"
        )));
    }
    let m = n / 2;
    let mut total = T::zero();
    for j in (0..n).filter(|&j| j != m) {
        total -= mean_abs_diff(&gt[n - 1 - j], &pred[j])?;
    }
    Ok(total)
}

/// Graph form of [`multiscale_photometric`] taking precomputed GT pyramids.
pub fn photometric_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: &[Vec<Var>],
    gt_pyramids: &[Vec<Image<T>>],
    weights: &[f64],
) -> Var {
    let mut terms = Vec::new();
    for (scales, pyr) in pred.iter().zip(gt_pyramids) {
        for ((&yhat, y), &w) in scales.iter().zip(pyr).zip(weights) {
            if w != 0.0 {
                let l = g.l1_mean(yhat, y.clone());
                terms.push((l, T::lit(w)));
            }
        }
    }
    g.weighted_sum(&terms)
}

/// Graph form of [`transformation_consistency`].
pub fn consistency_graph<T: Scalar>(g: &mut Graph<T>, thetas: &[Vec<Var>]) -> Var {
    let mut terms = Vec::new();
    for levels in thetas {
        for pair in levels.windows(2) {
            let d = g.sq_dist(pair[1], pair[0]);
            terms.push((d, T::one()));
        }
    }
    g.weighted_sum(&terms)
}

/// Graph form of [`symmetric_penalty`].
pub fn penalty_graph<T: Scalar>(g: &mut Graph<T>, pred: &[Var], gt: &[Image<T>]) -> Var {
    let n = pred.len();
    let m = n / 2;
    let terms: Vec<(Var, T)> = (0..n)
        .filter(|&j| j != m)
        .map(|j| (g.l1_mean(pred[j], gt[n - 1 - j].clone()), -T::one()))
        .collect();
    g.weighted_sum(&terms)
}

/// Graph form of [`total_loss`].
pub fn total_graph<T: Scalar>(
    g: &mut Graph<T>,
    photometric: Var,
    consistency: Var,
    penalty: Var,
    lambda_tc: f64,
    lambda_p: f64,
) -> Var {
    g.weighted_sum(&[
        (photometric, T::one()),
        (consistency, T::lit(lambda_tc)),
        (penalty, T::lit(lambda_p)),
    ])
}
