//! Batch job files for `transfer`, `mix` and `interpolate`.
//!
//! ```toml
//! [[transfer]]
//! source = "images/a.png"
//! donors = { hue = "images/b.png" }
//!
//! [[mix]]
//! attribute = "hue"
//! components = [{ image = "images/a.png", weight = 0.5 }, { image = "images/b.png", weight = 0.5 }]
//!
//! [[interpolate]]
//! attribute = "shape"
//! image_i = "images/a.png"
//! image_j = "images/b.png"
//! steps = 8
//! ```
//!
//! Image paths are relative to the job file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use disentangle_core::data::image_io::{load_image, save_png};
use disentangle_core::data::tensor_image;
use disentangle_core::latent_ops::{alphas, interpolate, mix, swap, MixMode};
use disentangle_core::model::Networks;
use disentangle_tensor::{no_grad, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Transfer,
    Mix,
    Interpolate,
}

impl JobKind {
    pub fn name(self) -> &'static str {
        match self {
            JobKind::Transfer => "transfer",
            JobKind::Mix => "mix",
            JobKind::Interpolate => "interpolate",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    #[serde(default)]
    pub transfer: Vec<TransferJob>,
    #[serde(default)]
    pub mix: Vec<MixJob>,
    #[serde(default)]
    pub interpolate: Vec<InterpolateJob>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferJob {
    pub source: PathBuf,
    /// Attribute name to donor image.
    pub donors: BTreeMap<String, PathBuf>,
    pub output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub image: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixJob {
    pub attribute: String,
    pub components: Vec<Component>,
    /// Supplies every other code; defaults to the first component.
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub mode: MixMode,
    pub output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateJob {
    pub attribute: String,
    pub image_i: PathBuf,
    pub image_j: PathBuf,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Supplies every other code; defaults to `image_j`.
    pub base: Option<PathBuf>,
    /// File name prefix for the frames.
    pub output: Option<String>,
}

fn default_steps() -> usize {
    8
}

pub fn read(path: &Path) -> Result<JobFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
}

#[derive(Debug, Serialize)]
pub struct JobResult {
    pub kind: &'static str,
    pub index: usize,
    pub outputs: Vec<String>,
    #[serde(flatten)]
    pub details: Value,
}

struct Runner<'a> {
    nets: &'a Networks<f32>,
    class_names: &'a [Vec<String>],
    base: PathBuf,
    out: &'a Path,
}

impl Runner<'_> {
    fn attribute(&self, kind: JobKind, index: usize, name: &str) -> Result<usize, CliError> {
        self.nets.schema.index_of(name).map_err(|_| {
            let known: Vec<&str> = self.nets.schema.attributes().iter().map(|a| a.name.as_str()).collect();
            CliError::Config(format!(
                "{} job {index}: unknown attribute '{name}' (model has: {})",
                kind.name(),
                known.join(", ")
            ))
        })
    }

    fn image(&self, path: &Path) -> Result<Tensor<f32>, CliError> {
        let size = self.nets.config.image_size;
        let img = load_image(&self.base.join(path), size)?;
        Ok(Tensor::from_vec(img.chw(), &[1, 3, size, size]))
    }

    fn save(&self, images: &Tensor<f32>, i: usize, name: &str) -> Result<String, CliError> {
        let name = if name.ends_with(".png") { name.to_string() } else { format!("{name}.png") };
        let path = self.out.join(&name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        save_png(&path, &tensor_image(images, i, Vec::new()))?;
        Ok(name)
    }

    /// Argmax class name per attribute from the model's own classifiers.
    fn predicted(&self, image: &Tensor<f32>) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        for (i, a) in self.nets.schema.attributes().iter().enumerate() {
            let p = no_grad(|| self.nets.classify_image(image, i + 1))?;
            let best = p
                .data()
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                .0;
            let name = self
                .class_names
                .get(i)
                .and_then(|c| c.get(best))
                .cloned()
                .unwrap_or_else(|| best.to_string());
            out.insert(a.name.clone(), name);
        }
        Ok(out)
    }
}

/// Checks every attribute name of the selected kind, then runs the jobs and
/// writes PNGs under `out`. Name errors are reported before any work.
pub fn run(
    kind: JobKind,
    jobs: &JobFile,
    job_path: &Path,
    nets: &Networks<f32>,
    class_names: &[Vec<String>],
    out: &Path,
) -> Result<Vec<JobResult>, CliError> {
    let base = job_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let r = Runner {
        nets,
        class_names,
        base,
        out,
    };
    let count = match kind {
        JobKind::Transfer => jobs.transfer.len(),
        JobKind::Mix => jobs.mix.len(),
        JobKind::Interpolate => jobs.interpolate.len(),
    };
    if count == 0 {
        return Err(CliError::Config(format!(
            "{} has no [[{}]] entries",
            job_path.display(),
            kind.name()
        )));
    }
    match kind {
        JobKind::Transfer => {
            for (i, j) in jobs.transfer.iter().enumerate() {
                if j.donors.is_empty() {
                    return Err(CliError::Config(format!("transfer job {i}: donors is empty")));
                }
                for name in j.donors.keys() {
                    r.attribute(kind, i, name)?;
                }
            }
            jobs.transfer.iter().enumerate().map(|(i, j)| transfer_one(&r, i, j)).collect()
        }
        JobKind::Mix => {
            for (i, j) in jobs.mix.iter().enumerate() {
                r.attribute(kind, i, &j.attribute)?;
            }
            jobs.mix.iter().enumerate().map(|(i, j)| mix_one(&r, i, j)).collect()
        }
        JobKind::Interpolate => {
            for (i, j) in jobs.interpolate.iter().enumerate() {
                r.attribute(kind, i, &j.attribute)?;
            }
            jobs.interpolate
                .iter()
                .enumerate()
                .map(|(i, j)| interpolate_one(&r, i, j))
                .collect()
        }
    }
}

fn transfer_one(r: &Runner, i: usize, job: &TransferJob) -> Result<JobResult, CliError> {
    let source = r.image(&job.source)?;
    let mut donors = BTreeMap::new();
    for (name, path) in &job.donors {
        donors.insert(r.attribute(JobKind::Transfer, i, name)?, r.image(path)?);
    }
    let image = swap(r.nets, &source, &donors)?;
    let name = job.output.clone().unwrap_or_else(|| format!("transfer_{i:03}"));
    Ok(JobResult {
        kind: "transfer",
        index: i,
        outputs: vec![r.save(&image, 0, &name)?],
        details: json!({
            "source": job.source,
            "donors": job.donors,
            "predicted": r.predicted(&image)?,
        }),
    })
}

fn mix_one(r: &Runner, i: usize, job: &MixJob) -> Result<JobResult, CliError> {
    let m = r.attribute(JobKind::Mix, i, &job.attribute)?;
    let components = job
        .components
        .iter()
        .map(|c| Ok((r.image(&c.image)?, c.weight)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let base_path = match (&job.base, job.components.first()) {
        (Some(b), _) => b.clone(),
        (None, Some(c)) => c.image.clone(),
        (None, None) => return Err(CliError::Config(format!("mix job {i}: no components"))),
    };
    let image = mix(r.nets, m, &components, &r.image(&base_path)?, job.mode)?;
    let name = job.output.clone().unwrap_or_else(|| format!("mix_{i:03}"));
    Ok(JobResult {
        kind: "mix",
        index: i,
        outputs: vec![r.save(&image, 0, &name)?],
        details: json!({
            "attribute": job.attribute,
            "weights": job.components.iter().map(|c| c.weight).collect::<Vec<_>>(),
            "base": base_path,
            "mode": job.mode,
            "exploratory": job.mode == MixMode::Signed,
            "predicted": r.predicted(&image)?,
        }),
    })
}

fn interpolate_one(r: &Runner, i: usize, job: &InterpolateJob) -> Result<JobResult, CliError> {
    let m = r.attribute(JobKind::Interpolate, i, &job.attribute)?;
    let (xi, xj) = (r.image(&job.image_i)?, r.image(&job.image_j)?);
    let base = job.base.as_ref().map(|b| r.image(b)).transpose()?;
    let frames = interpolate(r.nets, m, &xi, &xj, job.steps, base.as_ref())?;
    let prefix = job.output.clone().unwrap_or_else(|| format!("interpolate_{i:03}"));
    let outputs = (0..job.steps)
        .map(|k| r.save(&frames, k, &format!("{prefix}_{k:02}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(JobResult {
        kind: "interpolate",
        index: i,
        outputs,
        details: json!({
            "attribute": job.attribute,
            "alphas": alphas(job.steps),
            "base": job.base.clone().unwrap_or_else(|| job.image_j.clone()),
        }),
    })
}
