use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use blurvid::blur_synth::dataset::{
    frame_file_name, read_json, write_json, DatasetInfo, DatasetReader, DatasetWriter, Manifest, NPolicy, SampleMeta,
    BLUR_FILE, META_FILE,
};
use blurvid::blur_synth::{
    dynamic_windows, generate_dynamic_window, generate_rotational_sample, procedural, sequence_indices, SynthMode,
};
use blurvid::config::RunConfig;
use blurvid::geometry::EquirectPanorama;
use blurvid::gradcheck::{self, GradcheckOptions};
use blurvid::imageio::{hstack, load_rgb, save_rgb};
use blurvid::network::{load_checkpoint_expecting, Model};
use blurvid::objectives::order_invariant_eval;
use blurvid::trainer::{self, cross_evaluate, evaluate, write_reports, TrainOutputs, FINAL_CHECKPOINT};
use blurvid::{Error, Image};
use serde_json::json;

use crate::{EvalArgs, Failure, GenPanoArgs, GenVideoArgs, GradcheckArgs, InferArgs, TrainArgs};

pub const CONFIG_ECHO: &str = "config.toml";
pub const CONTACT_SHEET: &str = "contact_sheet.png";
pub const CONTACT_SHEET_META: &str = "contact_sheet.json";

type R = Result<(), Failure>;

fn mkdir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> R {
    mkdir(dir)?;
    cfg.save(&dir.join(CONFIG_ECHO))?;
    Ok(())
}

/// Seed of the `index`-th sample derived from the dataset seed.
fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn print_histogram(manifest: &Manifest) {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &manifest.samples {
        *hist.entry(s.n).or_default() += 1;
    }
    println!("samples: {}", manifest.samples.len());
    for (n, count) in hist {
        println!("  n = {n:>2}: {count}");
    }
}

pub fn gen_pano(cfg: &RunConfig, a: &GenPanoArgs) -> R {
    let mut synth = cfg.synth.clone();
    synth.mode = SynthMode::Rotational;
    synth.validate()?;
    let mut sources: Vec<(String, Result<EquirectPanorama<f32>, Error>)> = Vec::new();
    if let Some(count) = a.procedural {
        for i in 0..count {
            let seed = sample_seed(synth.seed, i);
            sources.push((
                format!("procedural_{i}"),
                Ok(procedural::panorama(a.procedural_height, seed)),
            ));
        }
    } else if let Some(dir) = &a.panoramas {
        for path in png_files(dir)? {
            let pano = load_rgb(&path).and_then(EquirectPanorama::new);
            sources.push((file_label(&path), pano));
        }
    }
    let info = DatasetInfo {
        mode: SynthMode::Rotational,
        n_policy: NPolicy::Rotational { c: synth.c },
        seed: synth.seed,
    };
    echo_config(cfg, &a.out)?;
    let mut writer = DatasetWriter::create(&a.out, &info)?;
    let mut index = 0;
    for (label, pano) in sources {
        let pano = match pano {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping panorama {label}: {e}");
                writer.note_skipped(label);
                continue;
            }
        };
        for _ in 0..synth.samples_per_panorama {
            let sample = generate_rotational_sample(&pano, &synth, sample_seed(synth.seed, index))?;
            writer.append(&sample, Some(&label))?;
            index += 1;
        }
    }
    if writer.is_empty() {
        return Err(Failure::Validation("no valid panoramas found".into()));
    }
    let manifest = writer.finish()?;
    println!("dataset: {}", a.out.display());
    print_histogram(&manifest);
    Ok(())
}

/// Scenes under `dir`: each subdirectory of PNG frames, or `dir` itself when
/// it holds frames directly.
fn scenes(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", dir.display())))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut out = Vec::new();
    for d in subdirs {
        let frames = png_files(&d)?;
        if !frames.is_empty() {
            out.push((file_label(&d), frames));
        }
    }
    if out.is_empty() {
        let frames = png_files(dir)?;
        if !frames.is_empty() {
            out.push((file_label(dir), frames));
        }
    }
    Ok(out)
}

pub fn gen_video(cfg: &RunConfig, a: &GenVideoArgs) -> R {
    let mut synth = cfg.synth.clone();
    synth.mode = SynthMode::Dynamic;
    synth.validate()?;
    let n = synth.n_dynamic;
    let mut clips: Vec<(String, Vec<Image<f32>>)> = Vec::new();
    if let Some(count) = a.procedural {
        let size = synth.crop_size + synth.crop_size / 4;
        for i in 0..count {
            let frames = procedural::video(size, size, a.procedural_length, sample_seed(synth.seed, i));
            clips.push((format!("procedural_{i}"), frames));
        }
    } else if let Some(dir) = &a.frames {
        let found = scenes(dir)?;
        if found.is_empty() {
            return Err(Failure::Validation(format!("no frames found under {}", dir.display())));
        }
        for (label, files) in found {
            if files.len() < n {
                clips.push((label, Vec::new()));
                continue;
            }
            let frames = files.iter().map(|f| load_rgb(f)).collect::<Result<Vec<_>, _>>()?;
            clips.push((label, frames));
        }
    }
    let info = DatasetInfo {
        mode: SynthMode::Dynamic,
        n_policy: NPolicy::Fixed { n },
        seed: synth.seed,
    };
    echo_config(cfg, &a.out)?;
    let mut writer = DatasetWriter::create(&a.out, &info)?;
    let mut index = 0;
    for (label, frames) in clips {
        if frames.len() < n {
            log::warn!("skipping scene {label}: fewer than {n} frames");
            writer.note_skipped(label);
            continue;
        }
        for start in dynamic_windows(frames.len(), n, synth.window_stride) {
            for _ in 0..synth.crops_per_window {
                let sample = generate_dynamic_window(&frames, &synth, start, sample_seed(synth.seed, index))?;
                writer.append(&sample, Some(&format!("{label}@{start}")))?;
                index += 1;
            }
        }
    }
    if writer.is_empty() {
        return Err(Failure::Validation(format!("no scene has at least {n} frames")));
    }
    let manifest = writer.finish()?;
    println!("dataset: {}", a.out.display());
    print_histogram(&manifest);
    Ok(())
}

fn checkpoint_extra(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "run_config_hash": cfg.hash(),
        "toggles": {
            "lw": cfg.model.use_lw,
            "itn": cfg.model.use_itn,
            "tcl": cfg.loss.use_tcl,
            "pt": cfg.loss.use_pt,
        },
    })
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> R {
    let data = DatasetReader::open(&a.data)?.load_all::<f32>()?;
    let eval_data = match &a.eval_data {
        Some(p) => Some(DatasetReader::open(p)?.load_all::<f32>()?),
        None => None,
    };
    let mut model = match &a.init {
        Some(p) => load_checkpoint_expecting::<f32>(p, &cfg.model)?.0,
        None => Model::new(cfg.model.clone(), cfg.train.seed)?,
    };
    echo_config(cfg, &a.run_dir)?;
    println!("run dir:    {}", a.run_dir.display());
    println!("config:     {}", a.run_dir.join(CONFIG_ECHO).display());
    println!("log:        {}", a.run_dir.join(trainer::LOG_FILE).display());
    println!("checkpoint: {}", a.run_dir.join(FINAL_CHECKPOINT).display());
    println!("parameters: {}", model.params().scalar_count());
    let outputs = TrainOutputs {
        run_dir: Some(a.run_dir.clone()),
        checkpoint_extra: checkpoint_extra(cfg),
    };
    let eval_set = eval_data
        .as_ref()
        .map(|d| (d as &dyn blurvid::blur_synth::dataset::SampleSource<f32>, &cfg.eval));
    let log = trainer::train(&mut model, &data, &cfg.train, &cfg.loss, eval_set, &outputs)?;
    if let (Some(first), Some(last)) = (log.iterations.first(), log.iterations.last()) {
        println!(
            "iterations: {}  total loss {:.5} -> {:.5}  L_mp {:.5} -> {:.5}",
            last.iteration, first.total, last.total, first.photometric, last.photometric
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs, labels: Option<(&String, &String)>) -> R {
    let (model, _) = load_checkpoint_expecting::<f32>(&a.checkpoint, &cfg.model)?;
    let data = DatasetReader::open(&a.data)?;
    let (evals, report) = match labels {
        Some((train, eval)) => cross_evaluate(&model, &data, &cfg.eval, train, eval)?,
        None => evaluate(&model, &data, &cfg.eval)?,
    };
    echo_config(cfg, &a.out)?;
    write_reports(&a.out, &evals, &report)?;
    for (k, v) in &report.labels {
        println!("{k}: {v}");
    }
    println!(
        "samples: {}  (forward {}, reverse {})",
        report.samples, report.forward_count, report.reverse_count
    );
    for (i, p) in report.positions.iter().enumerate() {
        println!(
            "  {p:<4} PSNR {:7.3}  SSIM {:.4}",
            report.mean_psnr[i], report.mean_ssim[i]
        );
    }
    println!(
        "  all  PSNR {:7.3}  SSIM {:.4}",
        report.mean_psnr_all, report.mean_ssim_all
    );
    println!("reports: {}", a.out.display());
    Ok(())
}

/// Center crop to the largest size the network accepts.
fn fit_to_network(img: Image<f32>, multiple: usize) -> Result<Image<f32>, Failure> {
    let (_, h, w) = img.chw();
    let (ch, cw) = (h / multiple * multiple, w / multiple * multiple);
    if ch == 0 || cw == 0 {
        return Err(Failure::Validation(format!(
            "image {w}x{h} is smaller than the network's minimum size {multiple}"
        )));
    }
    if (ch, cw) == (h, w) {
        return Ok(img);
    }
    log::warn!("center-cropping {w}x{h} input to {cw}x{ch}");
    Ok(img.crop((h - ch) / 2, (w - cw) / 2, ch, cw)?)
}

/// Blurred image and, for dataset sample directories, its sharp frames.
fn load_input(path: &Path) -> Result<(Image<f32>, Option<Vec<Image<f32>>>), Failure> {
    if path.is_dir() {
        let meta: SampleMeta = read_json(&path.join(META_FILE))?;
        let blurred = load_rgb(&path.join(BLUR_FILE))?;
        let frames = (0..meta.n)
            .map(|i| load_rgb(&path.join(frame_file_name(i))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((blurred, Some(frames)))
    } else {
        Ok((load_rgb(path)?, None))
    }
}

pub fn infer(cfg: &RunConfig, a: &InferArgs) -> R {
    let (model, _) = load_checkpoint_expecting::<f32>(&a.checkpoint, &cfg.model)?;
    let multiple = model.config().required_multiple();
    echo_config(cfg, &a.out)?;
    for input in &a.inputs {
        let (blurred, gt) = load_input(input)?;
        let (_, h0, w0) = blurred.chw();
        let blurred = fit_to_network(blurred, multiple)?;
        let (_, h, w) = blurred.chw();
        let pred = model.forward(&blurred)?.refined;
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        let dir = a.out.join(&stem);
        mkdir(&dir)?;
        for (i, f) in pred.iter().enumerate() {
            save_rgb(&dir.join(frame_file_name(i)), f)?;
        }
        let refs: Vec<&Image<f32>> = pred.iter().collect();
        save_rgb(&dir.join(CONTACT_SHEET), &hstack(&refs)?)?;
        let scored = match gt {
            Some(frames) => {
                let (y0, x0) = ((h0 - h) / 2, (w0 - w) / 2);
                let idx = sequence_indices(frames.len(), pred.len())?;
                let cropped = idx
                    .iter()
                    .map(|&i| frames[i].crop(y0, x0, h, w))
                    .collect::<Result<Vec<_>, _>>()?;
                let gt_refs: Vec<&Image<f32>> = cropped.iter().collect();
                Some(order_invariant_eval(&refs, &gt_refs)?)
            }
            None => None,
        };
        let meta = json!({
            "input": input.display().to_string(),
            "frames": (0..pred.len()).map(frame_file_name).collect::<Vec<_>>(),
            "layout": "left to right in predicted temporal order",
            "direction": scored.as_ref().map(|r| json!(r.direction)).unwrap_or(json!(null)),
            "note": if scored.is_some() {
                "direction is the order that best matches the ground truth"
            } else {
                "no ground truth; the true temporal direction cannot be recovered from a single blurred image"
            },
            "psnr": scored.as_ref().map(|r| json!(r.psnr)),
            "ssim": scored.as_ref().map(|r| json!(r.ssim)),
        });
        write_json(&dir.join(CONTACT_SHEET_META), &meta)?;
        match &scored {
            Some(r) => println!(
                "{}: {} frames, direction {:?}, mean PSNR {:.3}",
                dir.display(),
                pred.len(),
                r.direction,
                r.mean_psnr()
            ),
            None => println!("{}: {} frames", dir.display(), pred.len()),
        }
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> R {
    let names: Vec<String> = gradcheck::operators(!a.no_network)
        .iter()
        .map(|o| o.name().to_string())
        .collect();
    if let Some(f) = &a.flip_sign {
        if !names.contains(f) {
            return Err(Failure::Validation(format!(
                "unknown operator {f:?}; expected one of {}",
                names.join(", ")
            )));
        }
    }
    let opts = GradcheckOptions {
        instances: a.instances,
        seed: a.seed,
        flip: a.flip_sign.clone(),
        include_network: !a.no_network,
    };
    let report = gradcheck::run(&opts);
    println!(
        "{:<28} {:>9} {:>7} {:>12} {:>9}  result",
        "operator", "instances", "probes", "max rel err", "tol"
    );
    for r in &report.results {
        println!(
            "{:<28} {:>9} {:>7} {:>12.3e} {:>9.0e}  {}",
            r.name,
            r.instances,
            r.probes,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    println!("operators: {}", report.results.len());
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "gradient check failed: {}",
            report.failures().join(", ")
        )))
    }
}
