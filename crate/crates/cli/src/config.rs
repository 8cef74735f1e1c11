use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use somamba::ablation::AblationSetup;
use somamba::diagnostics::DEFAULT_CUTOFFS;
use somamba::phantom::PhantomKind;
use somamba::sampling::{MaskKind, MaskSpec};
use somamba::unroll::ModelConfig;
use somamba::{Error, Result};

/// Default output directory when neither a flag nor the config names one.
pub const OUT_DIR_ENV: &str = "SOMAMBA_OUT_DIR";

/// One JSON file describing a full run: ground truth, acquisition, model and
/// outputs. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub case: String,
    pub model: ModelConfig,
    pub phantom: PhantomKind,
    pub size: usize,
    pub phantom_seed: u64,
    pub mask: MaskKind,
    pub acceleration: usize,
    pub center_fraction: Option<f64>,
    pub spokes: Option<usize>,
    pub mask_seed: u64,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub cutoffs: Vec<f64>,
    /// Weight file to load instead of seeded initialization.
    pub weights: Option<PathBuf>,
    pub zero_decode: bool,
    pub random_modulation: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: "shepp_logan".into(),
            model: ModelConfig::default(),
            phantom: PhantomKind::SheppLogan,
            size: 128,
            phantom_seed: 0,
            mask: MaskKind::Equispaced,
            acceleration: 4,
            center_fraction: None,
            spokes: None,
            mask_seed: 0,
            noise_std: 0.0,
            noise_seed: 0,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            weights: None,
            zero_decode: false,
            random_modulation: false,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Strict parse; the error names the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Usage(format!("config key `{path}`: {}", e.into_inner()))
        })
    }

    /// Loads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.weights, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn mask_spec(&self) -> MaskSpec {
        let mut spec = MaskSpec::new(self.mask, self.size, self.size, self.acceleration).with_seed(self.mask_seed);
        spec.center_fraction = self.center_fraction;
        spec.spokes = self.spokes;
        spec
    }

    pub fn ablation_setup(&self) -> AblationSetup {
        AblationSetup {
            case: self.case.clone(),
            model: self.model.clone(),
            phantom: self.phantom,
            size: self.size,
            phantom_seed: self.phantom_seed,
            mask: self.mask,
            mask_seed: self.mask_seed,
            center_fraction: self.center_fraction,
            spokes: self.spokes,
            acceleration: self.acceleration,
            noise_std: self.noise_std,
            noise_seed: self.noise_seed,
            cutoffs: self.cutoffs.clone(),
            random_modulation: self.random_modulation,
        }
    }
}

/// Flag beats config beats environment beats the working directory.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_json(r#"{"model": {"switches": {"state_acess": false}}}"#).unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.category(), "usage");
        assert!(msg.contains("model.switches"), "{msg}");
        assert!(msg.contains("state_acess"), "{msg}");
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"out_dir": "out", "weights": "w.bin"}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.out_dir.unwrap(), dir.path().join("out"));
        assert_eq!(cfg.weights.unwrap(), dir.path().join("w.bin"));
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = RunConfig {
            out_dir: Some("from_cfg".into()),
            ..RunConfig::default()
        };
        assert_eq!(resolve_out_dir(Some(Path::new("flag")), Some(&cfg)), PathBuf::from("flag"));
        assert_eq!(resolve_out_dir(None, Some(&cfg)), PathBuf::from("from_cfg"));
    }
}
