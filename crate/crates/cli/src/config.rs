//! Run configuration: one TOML file with dotted sections, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spcrf::ccrf::SolverConfig;
use spcrf::evalio::Aggregation;
use spcrf::featnet::Architecture;
use spcrf::gradcheck::GradcheckConfig;
use spcrf::pipeline::{PipelineConfig, TrainConfig};
use spcrf::sppool::UnaryPoolGrad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub superpixels: SuperpixelConfig,
    pub model: ModelConfig,
    pub crf: CrfConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            superpixels: SuperpixelConfig::default(),
            model: ModelConfig::default(),
            crf: CrfConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperpixelConfig {
    pub regions: usize,
    pub compactness: f64,
}

impl Default for SuperpixelConfig {
    fn default() -> Self {
        Self {
            regions: 256,
            compactness: spcrf::spgraph::DEFAULT_COMPACTNESS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub classes: usize,
    pub shared_blocks: usize,
    pub pairwise_width: usize,
    pub pairwise_blocks: usize,
    /// When false the pairwise branch is skipped and `W ≡ 0`.
    pub pairwise: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::default();
        Self {
            in_channels: a.in_channels,
            widths: a.widths,
            classes: a.classes,
            shared_blocks: a.shared_blocks,
            pairwise_width: a.pairwise_width,
            pairwise_blocks: a.pairwise_blocks,
            pairwise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfConfig {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// `"adjoint"` or `"unscaled"`.
    pub unary_pool_grad: String,
}

impl Default for CrfConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            lambda: spcrf::ccrf::DEFAULT_LAMBDA,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            unary_pool_grad: "adjoint".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// `"micro"` or `"macro"`.
    pub aggregation: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            aggregation: "micro".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub pipeline_probes: usize,
    pub image_size: usize,
    pub target_regions: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let g = GradcheckConfig::default();
        Self {
            pipeline_probes: g.pipeline_probes,
            image_size: g.image_size,
            target_regions: g.target_regions,
        }
    }
}

fn check(cond: bool, key: &str, msg: impl std::fmt::Display) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(format!("config key {key}: {msg}"))
    }
}

impl RunConfig {
    /// Parses TOML; relative data paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        for p in [&mut cfg.data.train_manifest, &mut cfg.data.test_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() && base_dir != Path::new("") {
            cfg.out_dir = base_dir.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        check(self.superpixels.regions >= 2, "superpixels.regions", "must be at least 2")?;
        check(
            self.superpixels.compactness > 0.0 && self.superpixels.compactness.is_finite(),
            "superpixels.compactness",
            "must be positive",
        )?;
        self.architecture().validate().map_err(|e| format!("config section model: {e}"))?;
        check(self.crf.lambda > 0.0 && self.crf.lambda.is_finite(), "crf.lambda", "must be positive")?;
        check(self.crf.tolerance > 0.0, "crf.tolerance", "must be positive")?;
        check(self.crf.max_iterations >= 1, "crf.max_iterations", "must be at least 1")?;
        self.unary_pool_grad()?;
        self.aggregation()?;
        self.train_config().validate().map_err(|e| format!("config section train: {e}"))?;
        check(self.gradcheck.pipeline_probes >= 1, "gradcheck.pipeline_probes", "must be at least 1")?;
        check(self.gradcheck.image_size >= 8, "gradcheck.image_size", "must be at least 8")?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let m = &self.model;
        Architecture {
            in_channels: m.in_channels,
            widths: m.widths.clone(),
            classes: m.classes,
            shared_blocks: m.shared_blocks,
            pairwise_width: m.pairwise_width,
            pairwise_blocks: m.pairwise_blocks,
        }
    }

    fn unary_pool_grad(&self) -> Result<UnaryPoolGrad, String> {
        match self.crf.unary_pool_grad.as_str() {
            "adjoint" => Ok(UnaryPoolGrad::Adjoint),
            "unscaled" => Ok(UnaryPoolGrad::Unscaled),
            other => Err(format!(
                "config key crf.unary_pool_grad: {other:?} is not \"adjoint\" or \"unscaled\""
            )),
        }
    }

    pub fn aggregation(&self) -> Result<Aggregation, String> {
        Aggregation::parse(&self.eval.aggregation).map_err(|e| format!("config key eval.aggregation: {e}"))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            lambda: self.crf.lambda,
            solver: SolverConfig {
                tolerance: self.crf.tolerance,
                max_iterations: self.crf.max_iterations,
            },
            pairwise: self.model.pairwise,
            unary_pool_grad: self.unary_pool_grad().unwrap_or_default(),
            ..PipelineConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
            classes: self.model.classes,
            seed: self.seed,
            pipeline: self.pipeline_config(),
        }
    }

    pub fn gradcheck_config(&self) -> GradcheckConfig {
        GradcheckConfig {
            seed: self.seed,
            pipeline_probes: self.gradcheck.pipeline_probes,
            image_size: self.gradcheck.image_size,
            target_regions: self.gradcheck.target_regions,
            lambda: self.crf.lambda,
            ..GradcheckConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("", Path::new("")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.superpixels.regions, 256);
    }

    #[test]
    fn echo_parses_back() {
        let text = "seed = 7\n[data]\ntrain_manifest = \"/d/m.tsv\"\n[model]\nwidths = [4, 8]\nshared_blocks = 1\n";
        let c = RunConfig::parse(text, Path::new("")).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml(), Path::new("")).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = RunConfig::parse("seed = 1\n\n[train]\nepochz = 3\n", Path::new("")).unwrap_err();
        assert!(err.contains("epochz") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn out_of_range_values_name_the_key() {
        let err = RunConfig::parse("[crf]\nlambda = -1.0\n", Path::new("")).unwrap_err();
        assert!(err.contains("crf.lambda"), "{err}");
        let err = RunConfig::parse("[eval]\naggregation = \"mean\"\n", Path::new("")).unwrap_err();
        assert!(err.contains("eval.aggregation"), "{err}");
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let c = RunConfig::parse("[data]\ntrain_manifest = \"m.tsv\"\n", Path::new("/x/y")).unwrap();
        assert_eq!(c.data.train_manifest.unwrap(), Path::new("/x/y/m.tsv"));
        assert_eq!(c.out_dir, Path::new("/x/y/out"));
    }
}
