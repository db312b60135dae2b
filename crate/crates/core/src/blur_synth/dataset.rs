//! On-disk dataset layout.
//!
//! ```text
//! root/manifest.json
//! root/sample_000000/blur.png
//! root/sample_000000/frame_00.png ... frame_{n-1}.png
//! root/sample_000000/meta.json
//! ```
//!
//! Images are 8-bit RGB PNG; metadata is JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{key_indices, BlurSample, SynthMode};
use crate::error::{Error, Result};
use crate::geometry::EulerRotation;
use crate::imageio::{load_rgb, save_rgb};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";
pub const BLUR_FILE: &str = "blur.png";
pub const FORMAT_VERSION: u32 = 1;

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:06}")
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:02}.png")
}

/// How the number of frames per sample was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NPolicy {
    /// `n = round(c + |beta| / 3)`, at least 3.
    Rotational {
        c: f64,
    },
    Fixed {
        n: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dir: String,
    pub n: usize,
    /// Blur rotation `(bx, by, bz)` in degrees.
    pub rotation_deg: Option<[f64; 3]>,
    pub seed: u64,
    /// `(y, x)` of the crop's top-left corner.
    pub crop_origin: Option<[usize; 2]>,
    /// (initial, middle, final) frame indices.
    pub key_frames: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SampleMeta {
    pub fn rotation(&self) -> Option<EulerRotation> {
        self.rotation_deg.map(|[x, y, z]| EulerRotation::new(x, y, z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub mode: SynthMode,
    pub n_policy: NPolicy,
    pub seed: u64,
    pub samples: Vec<SampleMeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_sources: Vec<String>,
}

/// Dataset-wide header written into the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetInfo {
    pub mode: SynthMode,
    pub n_policy: NPolicy,
    pub seed: u64,
}

/// Streams samples to disk and writes the manifest on [`DatasetWriter::finish`].
pub struct DatasetWriter {
    root: PathBuf,
    manifest: Manifest,
}

impl DatasetWriter {
    pub fn create(root: &Path, info: &DatasetInfo) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                mode: info.mode,
                n_policy: info.n_policy.clone(),
                seed: info.seed,
                samples: Vec::new(),
                skipped_sources: Vec::new(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn append<T: Scalar>(&mut self, sample: &BlurSample<T>, source: Option<&str>) -> Result<&SampleMeta> {
        let index = self.manifest.samples.len();
        let dir_name = sample_dir_name(index);
        let dir = self.root.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_rgb(&dir.join(BLUR_FILE), &sample.blurred)?;
        for (i, f) in sample.frames.iter().enumerate() {
            save_rgb(&dir.join(frame_file_name(i)), f)?;
        }
        let meta = SampleMeta {
            dir: dir_name,
            n: sample.n(),
            rotation_deg: sample.rotation.map(|r| r.as_array()),
            seed: sample.seed,
            crop_origin: sample.crop_origin.map(|(y, x)| [y, x]),
            key_frames: key_indices(sample.n()),
            source: source.map(str::to_owned),
        };
        write_json(&dir.join(META_FILE), &meta)?;
        self.manifest.samples.push(meta);
        Ok(self.manifest.samples.last().unwrap())
    }

    pub fn note_skipped(&mut self, source: impl Into<String>) {
        self.manifest.skipped_sources.push(source.into());
    }

    pub fn finish(self) -> Result<Manifest> {
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes all samples and the manifest in one go.
pub fn write_dataset<T: Scalar>(root: &Path, info: &DatasetInfo, samples: &[BlurSample<T>]) -> Result<Manifest> {
    let mut w = DatasetWriter::create(root, info)?;
    for s in samples {
        w.append(s, None)?;
    }
    w.finish()
}

/// Random access to a dataset's samples.
pub trait SampleSource<T> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize) -> Result<BlurSample<T>>;

    /// Blur rotation magnitude in degrees, when known.
    fn rotation_magnitude(&self, index: usize) -> Option<f64>;
}

impl<T: Scalar> SampleSource<T> for Vec<BlurSample<T>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<BlurSample<T>> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Input(format!("sample index {index} out of range")))
    }

    fn rotation_magnitude(&self, index: usize) -> Option<f64> {
        self.get(index)?.rotation.map(|r| r.magnitude())
    }
}

/// Lazily loads samples from disk.
#[derive(Clone, Debug)]
pub struct DatasetReader {
    root: PathBuf,
    manifest: Manifest,
}

impl DatasetReader {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            let has_entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some();
            return Err(if has_entries {
                Error::Input(format!("{} is missing", manifest_path.display()))
            } else {
                Error::EmptyDataset(root.to_path_buf())
            });
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        if manifest.samples.is_empty() {
            return Err(Error::EmptyDataset(root.to_path_buf()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn load<T: Scalar>(&self, index: usize) -> Result<BlurSample<T>> {
        let meta = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| Error::Input(format!("sample index {index} out of range")))?;
        let dir = self.root.join(&meta.dir);
        let blurred = load_rgb(&dir.join(BLUR_FILE))?;
        let frames = (0..meta.n)
            .map(|i| load_rgb(&dir.join(frame_file_name(i))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlurSample {
            blurred,
            frames,
            rotation: meta.rotation(),
            seed: meta.seed,
            crop_origin: meta.crop_origin.map(|[y, x]| (y, x)),
        })
    }

    pub fn load_all<T: Scalar>(&self) -> Result<Vec<BlurSample<T>>> {
        (0..self.manifest.samples.len()).map(|i| self.load(i)).collect()
    }
}

impl<T: Scalar> SampleSource<T> for DatasetReader {
    fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    fn sample(&self, index: usize) -> Result<BlurSample<T>> {
        self.load(index)
    }

    fn rotation_magnitude(&self, index: usize) -> Option<f64> {
        self.manifest.samples.get(index)?.rotation().map(|r| r.magnitude())
    }
}

/// Reads the manifest and every sample into memory.
pub fn read_dataset<T: Scalar>(root: &Path) -> Result<(Manifest, Vec<BlurSample<T>>)> {
    let reader = DatasetReader::open(root)?;
    let samples = reader.load_all()?;
    Ok((reader.manifest, samples))
}
