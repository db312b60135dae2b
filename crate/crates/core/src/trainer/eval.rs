//! Evaluation harness: order-invariant scoring, per-position aggregates and
//! PSNR-versus-rotation-magnitude curve data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prepare_sample;
use crate::blur_synth::dataset::{write_json, SampleSource};
use crate::blur_synth::BlurSample;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::objectives::protocol::{order_invariant_eval, Direction, MetricReport};
use crate::scalar::Scalar;
use crate::tensor::Image;

pub const SAMPLES_FILE: &str = "eval_samples.csv";
pub const SUMMARY_FILE: &str = "eval_summary.json";
pub const CURVE_FILE: &str = "rotation_curve.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Center-crop inputs to this square size; 0 keeps samples as stored.
    pub input_size: usize,
    /// Width of the rotation-magnitude bins in degrees.
    pub rotation_bin_deg: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            input_size: 0,
            rotation_bin_deg: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub rotation_magnitude: Option<f64>,
    pub report: MetricReport,
}

/// Samples whose rotation magnitude lies in `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_psnr_middle: f64,
    pub samples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Free-form labels such as the train and eval dataset identities.
    pub labels: BTreeMap<String, String>,
    pub frames: usize,
    pub samples: usize,
    /// Name of each ground-truth position (`F_i`, `F_m`, `F_f`, ...).
    pub positions: Vec<String>,
    pub mean_psnr: Vec<f64>,
    pub mean_ssim: Vec<f64>,
    pub mean_psnr_all: f64,
    pub mean_ssim_all: f64,
    pub forward_count: usize,
    pub reverse_count: usize,
    pub rotation_bins: Vec<RotationBin>,
    /// Samples without rotation metadata (not binned).
    pub unbinned: usize,
}

impl AggregateReport {
    fn position(&self, name: &str) -> Option<usize> {
        self.positions.iter().position(|p| p == name)
    }

    pub fn psnr_at(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.mean_psnr[i])
    }

    pub fn ssim_at(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.mean_ssim[i])
    }
}

/// `F_i`, `F_m`, `F_f` at the first, middle and last position; `F_<j>`
/// (1-based) elsewhere.
pub fn position_labels(n: usize) -> Vec<String> {
    (0..n)
        .map(|j| match j {
            0 => "F_i".to_string(),
            j if j == n / 2 => "F_m".to_string(),
            j if j + 1 == n => "F_f".to_string(),
            j => format!("F_{}", j + 1),
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

fn aggregate(evals: &[SampleEval], frames: usize, bin_width: f64) -> AggregateReport {
    let mean_psnr = (0..frames)
        .map(|i| mean(evals.iter().map(|e| e.report.psnr[i])))
        .collect();
    let mean_ssim = (0..frames)
        .map(|i| mean(evals.iter().map(|e| e.report.ssim[i])))
        .collect();
    let mut bins: BTreeMap<usize, Vec<&SampleEval>> = BTreeMap::new();
    let mut unbinned = 0;
    for e in evals {
        match e.rotation_magnitude {
            Some(m) => bins.entry((m / bin_width).floor() as usize).or_default().push(e),
            None => unbinned += 1,
        }
    }
    let m = frames / 2;
    let rotation_bins = bins
        .into_iter()
        .map(|(b, es)| RotationBin {
            lo: b as f64 * bin_width,
            hi: (b + 1) as f64 * bin_width,
            count: es.len(),
            mean_psnr: mean(es.iter().map(|e| e.report.mean_psnr())),
            mean_psnr_middle: mean(es.iter().map(|e| e.report.psnr[m])),
            samples: es.iter().map(|e| e.index).collect(),
        })
        .collect();
    AggregateReport {
        labels: BTreeMap::new(),
        frames,
        samples: evals.len(),
        positions: position_labels(frames),
        mean_psnr,
        mean_ssim,
        mean_psnr_all: mean(evals.iter().map(|e| e.report.mean_psnr())),
        mean_ssim_all: mean(evals.iter().map(|e| e.report.mean_ssim())),
        forward_count: evals
            .iter()
            .filter(|e| e.report.direction == Direction::Forward)
            .count(),
        reverse_count: evals
            .iter()
            .filter(|e| e.report.direction == Direction::Reverse)
            .count(),
        rotation_bins,
        unbinned,
    }
}

/// Scores `predict` on every sample of `data` against `frames` ground-truth frames.
pub fn evaluate_with<T, S, F>(
    data: &S,
    frames: usize,
    opts: &EvalOptions,
    mut predict: F,
) -> Result<(Vec<SampleEval>, AggregateReport)>
where
    T: Scalar,
    S: SampleSource<T> + ?Sized,
    F: FnMut(&BlurSample<T>) -> Result<Vec<Image<T>>>,
{
    if !(opts.rotation_bin_deg > 0.0) {
        return Err(Error::Config("rotation_bin_deg must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut evals = Vec::with_capacity(data.len());
    for index in 0..data.len() {
        let sample = prepare_sample(&data.sample(index)?, opts.input_size)?;
        if sample.n() < frames {
            return Err(Error::Input(format!(
                "sample {index} has {} frames but the model predicts {frames}",
                sample.n()
            )));
        }
        let gt = sample.gt_sequence(frames)?;
        let pred = predict(&sample)?;
        let pred_refs: Vec<&Image<T>> = pred.iter().collect();
        evals.push(SampleEval {
            index,
            rotation_magnitude: data.rotation_magnitude(index),
            report: order_invariant_eval(&pred_refs, &gt)?,
        });
    }
    let report = aggregate(&evals, frames, opts.rotation_bin_deg);
    Ok((evals, report))
}

/// Evaluates the refined frames of `model`.
pub fn evaluate<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &Model<T>,
    data: &S,
    opts: &EvalOptions,
) -> Result<(Vec<SampleEval>, AggregateReport)> {
    evaluate_with(data, model.config().frames, opts, |s| {
        model.forward(&s.blurred).map(|p| p.refined)
    })
}

/// [`evaluate`] with the train and eval dataset identities attached.
pub fn cross_evaluate<T: Scalar, S: SampleSource<T> + ?Sized>(
    model: &Model<T>,
    data: &S,
    opts: &EvalOptions,
    train_label: &str,
    eval_label: &str,
) -> Result<(Vec<SampleEval>, AggregateReport)> {
    let (evals, mut report) = evaluate(model, data, opts)?;
    report.labels.insert("train".into(), train_label.into());
    report.labels.insert("eval".into(), eval_label.into());
    Ok((evals, report))
}

/// Writes the per-sample CSV, the aggregate JSON and the rotation curve CSV.
pub fn write_reports(dir: &Path, evals: &[SampleEval], report: &AggregateReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Csv {
            path: path.clone(),
            source,
        }
    };

    let path = dir.join(SAMPLES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut header = vec!["index".to_string(), "direction".into(), "rotation_deg".into()];
    header.extend(report.positions.iter().map(|p| format!("psnr_{p}")));
    header.extend(report.positions.iter().map(|p| format!("ssim_{p}")));
    w.write_record(&header).map_err(csv_err(&path))?;
    for e in evals {
        let mut row = vec![
            e.index.to_string(),
            match e.report.direction {
                Direction::Forward => "forward".into(),
                Direction::Reverse => "reverse".into(),
            },
            e.rotation_magnitude.map(|m| m.to_string()).unwrap_or_default(),
        ];
        row.extend(e.report.psnr.iter().map(f64::to_string));
        row.extend(e.report.ssim.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join(SUMMARY_FILE), report)?;

    let path = dir.join(CURVE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["bin_lo_deg", "bin_hi_deg", "count", "mean_psnr", "mean_psnr_middle"])
        .map_err(csv_err(&path))?;
    for b in &report.rotation_bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.count.to_string(),
            b.mean_psnr.to_string(),
            b.mean_psnr_middle.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
