//! Experiment configuration: a single JSON document with every default
//! materialized, plus dotted-key command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use steepsplat::primitives::CameraProjection;
use steepsplat::render::Image;
use steepsplat::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewConfig {
    /// Target image path (PPM), relative to the config file.
    pub target: PathBuf,
    /// Camera; omitted means the canonical plane camera matching the target
    /// dimensions with unit pixel pitch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraProjection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub views: Vec<ViewConfig>,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    pub train: TrainConfig,
    /// Default policy pair for `compare` when not given on the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<[String; 2]>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            views: Vec::new(),
            out_dir: PathBuf::from("out"),
            checkpoint_dir: None,
            train: TrainConfig::default(),
            compare: None,
        }
    }
}

/// Apply one `key=value` override onto the parsed JSON document. Dotted
/// segments traverse objects; numeric segments index arrays. The value is
/// parsed as JSON when possible, else taken as a string.
fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let value: serde_json::Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
    let mut cursor = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (pos, segment) in segments.iter().enumerate() {
        let last = pos + 1 == segments.len();
        if let Ok(index) = segment.parse::<usize>() {
            let arr = cursor
                .as_array_mut()
                .ok_or_else(|| anyhow!("`{key}`: segment `{segment}` indexes a non-array"))?;
            if index >= arr.len() {
                bail!("`{key}`: index {index} out of bounds");
            }
            if last {
                arr[index] = value;
                return Ok(());
            }
            cursor = &mut arr[index];
        } else {
            let obj = cursor
                .as_object_mut()
                .ok_or_else(|| anyhow!("`{key}`: segment `{segment}` enters a non-object"))?;
            if last {
                obj.insert(segment.to_string(), value);
                return Ok(());
            }
            cursor = obj
                .entry(segment.to_string())
                .or_insert(serde_json::Value::Object(Default::default()));
        }
    }
    Ok(())
}

pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    /// Camera/target pairs ready for the trainer.
    pub views: Vec<(CameraProjection, Image)>,
    /// Directory the config was loaded from; relative paths resolve here.
    pub base_dir: PathBuf,
}

/// Parse the config file, apply overrides, validate, and load every target.
pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<LoadedExperiment> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(doc).with_context(|| format!("interpreting {}", path.display()))?;
    if config.views.is_empty() {
        bail!("config has no views");
    }
    config
        .train
        .validate()
        .map_err(|e| anyhow!("invalid train config: {e}"))?;

    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut views = Vec::with_capacity(config.views.len());
    for view in &config.views {
        let target_path = base_dir.join(&view.target);
        let file = fs::File::open(&target_path)
            .with_context(|| format!("missing target {}", target_path.display()))?;
        let image = Image::read_ppm(std::io::BufReader::new(file))
            .map_err(|e| anyhow!("reading {}: {e}", target_path.display()))?;
        let camera = match &view.camera {
            Some(c) => {
                c.validate().map_err(|e| anyhow!("camera: {e}"))?;
                if c.width != image.width || c.height != image.height {
                    bail!(
                        "camera {}x{} does not match target {}x{}",
                        c.width,
                        c.height,
                        image.width,
                        image.height
                    );
                }
                c.clone()
            }
            None => CameraProjection::plane(image.width, image.height, 1.0),
        };
        views.push((camera, image));
    }
    Ok(LoadedExperiment {
        config,
        views,
        base_dir,
    })
}

/// Write via a temp file in the same directory plus rename, so interrupted
/// runs never leave truncated files.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Floats at 17 significant digits, locale-free, reproducible.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}
