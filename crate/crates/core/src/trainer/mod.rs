//! Optimization loop, learning-rate schedule and evaluation harness.

mod adam;
pub mod eval;
mod log;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use eval::{
    cross_evaluate, evaluate, evaluate_with, position_labels, write_reports, AggregateReport, EvalOptions, RotationBin,
    SampleEval,
};
pub use log::{IterationRecord, RunLog};

use crate::autodiff::{Graph, Var};
use crate::blur_synth::dataset::{write_json, SampleSource};
use crate::blur_synth::BlurSample;
use crate::error::{Error, Result};
use crate::network::{save_checkpoint, ForwardVars, Model};
use crate::objectives::losses::{
    consistency_graph, gt_pyramid, penalty_graph, photometric_graph, total_graph, LossComponents, LossConfig,
    LossWeights,
};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Epochs (1-based) at which the learning rate halves.
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
    /// Center-crop training inputs to this square size; 0 keeps samples as stored.
    pub input_size: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_iterations: usize,
    /// Clip the global gradient norm to this value (0 = off).
    pub grad_clip: f64,
    /// Save a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    /// Evaluate on the held-out set every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 80,
            decay_epochs: vec![40, 60],
            batch_size: 8,
            input_size: 128,
            seed: 0,
            max_iterations: 0,
            grad_clip: 0.0,
            checkpoint_every: 10,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let increasing = self.decay_epochs.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.decay_epochs.iter().all(|&e| (1..=self.epochs).contains(&e));
        if !increasing || !in_range {
            return Err(Error::Config(format!(
                "decay_epochs {:?} must be strictly increasing within [1, {}]",
                self.decay_epochs, self.epochs
            )));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: `lr0` halved once for every decay epoch `<= epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = cfg.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    cfg.lr * 0.5f64.powi(halvings as i32)
}

/// Graph nodes of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub photometric: Var,
    pub consistency: Var,
    pub penalty: Var,
}

impl LossVars {
    pub fn components<T: Scalar>(&self, g: &Graph<T>) -> LossComponents {
        LossComponents {
            photometric: g.scalar(self.photometric).to_f64_lossy(),
            consistency: g.scalar(self.consistency).to_f64_lossy(),
            penalty: g.scalar(self.penalty).to_f64_lossy(),
        }
    }
}

/// Builds the total loss of one forward pass against `gt` (one image per predicted frame).
///
/// The full-scale photometric term and the penalty use the refined frames.
pub fn sequence_loss<T: Scalar>(
    g: &mut Graph<T>,
    fv: &ForwardVars,
    gt: &[&Image<T>],
    weights: &LossWeights,
    tc_include_itn: bool,
) -> Result<LossVars> {
    let n = fv.refined.len();
    if gt.len() != n {
        return Err(Error::Shape(format!(
            "{n} predicted frames vs {} ground-truth frames",
            gt.len()
        )));
    }
    let levels = fv.scales[0].len();
    if weights.levels.len() != levels {
        return Err(Error::Shape(format!(
            "{} level weights for a {levels}-level model",
            weights.levels.len()
        )));
    }
    for (j, y) in gt.iter().enumerate() {
        g.value(fv.refined[j]).expect_same_shape(y)?;
    }
    let pyramids: Vec<Vec<Image<T>>> = gt.iter().map(|y| gt_pyramid(y, levels)).collect();
    let photometric = photometric_graph(g, &fv.supervised_scales(), &pyramids, &weights.levels);
    let mut thetas: Vec<Vec<Var>> = fv.ftn_theta.iter().filter(|t| !t.is_empty()).cloned().collect();
    if tc_include_itn {
        thetas.extend(fv.itn_theta.iter().filter(|t| !t.is_empty()).cloned());
    }
    let consistency = consistency_graph(g, &thetas);
    let targets: Vec<Image<T>> = gt.iter().map(|&y| y.clone()).collect();
    let penalty = penalty_graph(g, &fv.refined, &targets);
    let total = total_graph(
        g,
        photometric,
        consistency,
        penalty,
        weights.lambda_tc,
        weights.lambda_p,
    );
    Ok(LossVars {
        total,
        photometric,
        consistency,
        penalty,
    })
}

/// Center crop to `size x size`, or the sample unchanged when `size` is 0.
pub fn prepare_sample<T: Scalar>(sample: &BlurSample<T>, size: usize) -> Result<BlurSample<T>> {
    if size == 0 {
        return Ok(sample.clone());
    }
    let (_, h, w) = sample.blurred.chw();
    if h < size || w < size {
        return Err(Error::Input(format!(
            "sample of {w}x{h} is smaller than input_size {size}"
        )));
    }
    let (y0, x0) = ((h - size) / 2, (w - size) / 2);
    let crop = |img: &Image<T>| img.crop(y0, x0, size, size);
    Ok(BlurSample {
        blurred: crop(&sample.blurred)?,
        frames: sample.frames.iter().map(crop).collect::<Result<_>>()?,
        rotation: sample.rotation,
        seed: sample.seed,
        crop_origin: sample.crop_origin,
    })
}

/// Loss and parameter gradients of one sample.
pub struct SampleGradient<T> {
    pub components: LossComponents,
    pub total: f64,
    pub grads: BTreeMap<String, Tensor<T>>,
}

pub fn sample_gradient<T: Scalar>(
    model: &Model<T>,
    sample: &BlurSample<T>,
    weights: &LossWeights,
    tc_include_itn: bool,
) -> Result<SampleGradient<T>> {
    let n = model.config().frames;
    let gt = sample.gt_sequence(n)?;
    let mut g = Graph::new();
    let x = g.constant(sample.blurred.clone());
    let mut session = model.session(&mut g, true);
    let fv = session.forward(x)?;
    let bindings = session.into_bindings();
    let loss = sequence_loss(&mut g, &fv, &gt, weights, tc_include_itn)?;
    let components = loss.components(&g);
    let total = g.scalar(loss.total).to_f64_lossy();
    if !total.is_finite() {
        return Ok(SampleGradient {
            components,
            total,
            grads: BTreeMap::new(),
        });
    }
    let mut grads = g.backward(loss.total);
    let grads = bindings
        .into_iter()
        .map(|(name, v)| {
            let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
            (name, t)
        })
        .collect();
    Ok(SampleGradient {
        components,
        total,
        grads,
    })
}

/// Where training writes its artifacts. Everything is optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub run_dir: Option<PathBuf>,
    /// Stored in every checkpoint header.
    pub checkpoint_extra: serde_json::Value,
}

pub const LOG_FILE: &str = "train_log.csv";
pub const LR_FILE: &str = "lr_trace.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.json";
pub const DIVERGENCE_FILE: &str = "divergence.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

/// The learning-rate trace of a run without executing any step.
pub fn dry_run(cfg: &TrainConfig) -> Result<RunLog> {
    cfg.validate()?;
    let mut log = RunLog::default();
    for epoch in 1..=cfg.epochs {
        log.lr_trace.push((epoch, lr_at(epoch, cfg)));
    }
    Ok(log)
}

fn global_norm<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data())
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Trains `model` in place on `data` with Adam.
///
/// Deterministic for a given seed: data order comes from a per-epoch seeded
/// shuffle and samples within a batch are processed sequentially.
pub fn train<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &mut Model<T>,
    data: &S,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    eval_set: Option<(&dyn SampleSource<T>, &EvalOptions)>,
    outputs: &TrainOutputs,
) -> Result<RunLog> {
    cfg.validate()?;
    let weights = loss_cfg.weights(model.config().levels)?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let ckpt_dir = outputs.run_dir.as_ref().map(|d| d.join(CHECKPOINT_DIR));
    if let Some(d) = &ckpt_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = RunLog::default();
    let mut iteration = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, cfg);
        log.lr_trace.push((epoch, lr));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_iterations > 0 && iteration >= cfg.max_iterations {
                break 'epochs;
            }
            let mut acc: BTreeMap<String, Tensor<T>> = BTreeMap::new();
            let mut comps = LossComponents::default();
            let mut total = 0.0;
            for &idx in chunk {
                let sample = prepare_sample(&data.sample(idx)?, cfg.input_size)?;
                let sg = sample_gradient(model, &sample, &weights, loss_cfg.tc_include_itn)?;
                let grads_finite = sg.grads.values().all(Tensor::all_finite);
                if !sg.total.is_finite() || !grads_finite {
                    let detail = format!(
                        "non-finite {} on sample {idx} (loss components {:?})",
                        if sg.total.is_finite() { "gradient" } else { "loss" },
                        sg.components
                    );
                    if let Some(dir) = &outputs.run_dir {
                        let dump = serde_json::json!({
                            "epoch": epoch,
                            "iteration": iteration,
                            "batch": batch,
                            "batch_samples": chunk,
                            "offending_sample": idx,
                            "components": sg.components,
                            "lr": lr,
                            "recent_losses": log.iterations.iter().rev().take(10).map(|r| r.total).collect::<Vec<_>>(),
                        });
                        write_json(&dir.join(DIVERGENCE_FILE), &dump)?;
                    }
                    return Err(Error::Diverged {
                        epoch,
                        iteration,
                        batch,
                        detail,
                    });
                }
                comps.photometric += sg.components.photometric;
                comps.consistency += sg.components.consistency;
                comps.penalty += sg.components.penalty;
                total += sg.total;
                for (name, g) in sg.grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.add_assign(&g),
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            let mut scale = inv;
            if cfg.grad_clip > 0.0 {
                let norm = global_norm(&acc) * inv;
                if norm > cfg.grad_clip {
                    scale *= cfg.grad_clip / norm;
                }
            }
            for g in acc.values_mut() {
                g.scale_assign(T::lit(scale));
            }
            adam.step(model.params_mut(), &acc, lr);
            iteration += 1;
            log.iterations.push(IterationRecord {
                epoch,
                iteration,
                lr,
                total: total * inv,
                photometric: comps.photometric * inv,
                consistency: comps.consistency * inv,
                penalty: comps.penalty * inv,
            });
            ::log::debug!("epoch {epoch} iter {iteration} loss {:.6}", total * inv);
        }
        if let (Some((set, opts)), true) = (eval_set, cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
            let (_, report) = evaluate(model, set, opts)?;
            log.evals.push((epoch, report));
        }
        if let Some(d) = &ckpt_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(
                    &d.join(format!("epoch_{epoch:04}.ckpt")),
                    model,
                    outputs.checkpoint_extra.clone(),
                )?;
            }
        }
    }
    if let Some(dir) = &outputs.run_dir {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), model, outputs.checkpoint_extra.clone())?;
        log.write(dir)?;
    }
    Ok(log)
}
