use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mendkit::fracture::FractureConfig;
use mendkit::inference::InferConfig;
use mendkit::metrics::EvalConfig;
use mendkit::neural::ModelConfig;
use mendkit::sampling::SamplingConfig;
use mendkit::training::TrainConfig;

/// Where the input shapes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training meshes (`.obj`/`.ply`), flat or one subdirectory per
    /// class. When absent the built-in toy shapes are used.
    pub mesh_dir: Option<PathBuf>,
    /// Optional held-out meshes; inference runs on these when present.
    pub test_mesh_dir: Option<PathBuf>,
    pub toy_shapes: Vec<String>,
    pub toy_resolution: usize,
    /// Fractures per mesh, by class name.
    pub multiplicity: BTreeMap<String, usize>,
    pub default_multiplicity: usize,
    /// Voxel-remesh inputs that are not watertight.
    pub remesh: bool,
    pub remesh_resolution: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mesh_dir: None,
            test_mesh_dir: None,
            toy_shapes: mendkit::fixtures::ToyShape::ALL
                .iter()
                .map(|s| s.name().to_string())
                .collect(),
            toy_resolution: 48,
            multiplicity: BTreeMap::new(),
            default_multiplicity: 1,
            remesh: false,
            remesh_resolution: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub resolution: usize,
    /// Also write the predicted complete shape and break surface.
    pub extras: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            extras: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_root: Option<PathBuf>,
    pub data: DataConfig,
    pub fracture: FractureConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub reconstruct: ReconstructConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Artifact root: the config value, else `MENDKIT_CACHE`, else
    /// `mendkit-out` in the working directory.
    pub fn root(&self) -> PathBuf {
        self.output_root
            .clone()
            .or_else(|| std::env::var_os("MENDKIT_CACHE").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("mendkit-out"))
    }
}
