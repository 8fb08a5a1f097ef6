//! Experiment configuration: one JSON file per experiment.
//!
//! Every section is optional except `target`; unknown keys are rejected and
//! everything is validated before any training starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reparam_core::estimator::{Emitter, EmitterSpec, Strategy, ToyScene};
use reparam_core::nnet::Init;
use reparam_core::pdfnet::PdfArch;
use reparam_core::reparam::{SamplerArch, TrainConfig};
use reparam_core::targets::{Condition, Grid, Prior, PriorKind, TargetDensity};
use reparam_core::{Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// A grid given inline or as a path relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Inline { rows: usize, cols: usize, values: Vec<f64> },
    File { path: PathBuf },
}

impl GridSpec {
    pub fn build<R: Real>(&self, base: &Path) -> Result<Grid<R>> {
        match self {
            GridSpec::Inline { rows, cols, values } => Grid::new(*rows, *cols, values.iter().map(|&v| R::lit(v)).collect()),
            GridSpec::File { path } => Grid::load(base.join(path)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    GaussMix { weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
    Ggx { roughness: f64, f0: f64 },
    Grid { grid: GridSpec, floor: Option<f64> },
    Bimodal { gap: f64, width: f64 },
}

impl TargetSpec {
    pub fn build<R: Real>(&self, base: &Path) -> Result<TargetDensity<R>> {
        let lits = |v: &[f64]| v.iter().map(|&x| R::lit(x)).collect::<Vec<R>>();
        let t = match self {
            TargetSpec::GaussMix { weights, means, stds } => TargetDensity::gauss_mix(lits(weights), lits(means), lits(stds)),
            TargetSpec::Ggx { roughness, f0 } => TargetDensity::ggx(R::lit(*roughness), R::lit(*f0)),
            TargetSpec::Grid { grid, floor } => {
                let t = TargetDensity::grid(grid.build(base)?);
                Ok(match floor {
                    Some(f) => t.with_floor(R::lit(*f)),
                    None => t,
                })
            }
            TargetSpec::Bimodal { gap, width } => TargetDensity::bimodal(R::lit(*gap), R::lit(*width)),
        };
        t.map_err(|e| Error::config("target", e.to_string()))
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::GaussMix { .. } | TargetSpec::Bimodal { .. } => 1,
            TargetSpec::Ggx { .. } | TargetSpec::Grid { .. } => 2,
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, TargetSpec::Ggx { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    #[default]
    StdNormal,
    Uniform { lo: f64, hi: f64 },
}

impl PriorSpec {
    pub fn build<R: Real>(&self, dim: usize) -> Result<Prior<R>> {
        match self {
            PriorSpec::StdNormal => Ok(Prior::std_normal(dim)),
            PriorSpec::Uniform { lo, hi } => {
                Prior::uniform(dim, R::lit(*lo), R::lit(*hi)).map_err(|e| Error::config("prior", e.to_string()))
            }
        }
    }

    pub fn of<R: Real>(prior: &Prior<R>) -> Self {
        match prior.kind {
            PriorKind::StdNormal => PriorSpec::StdNormal,
            PriorKind::Uniform => PriorSpec::Uniform { lo: prior.lo.as_f64(), hi: prior.hi.as_f64() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdfSection {
    pub hidden: Vec<usize>,
    pub point_freqs: Option<usize>,
    pub point_scale: f64,
    pub init: Init,
    /// Keys left out take the pdf defaults (learning rate `1e-3`), not the
    /// sampler's.
    #[serde(deserialize_with = "pdf_train")]
    pub train: TrainConfig,
}

fn pdf_train<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(PdfSection::default().train).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("TrainConfig serializes to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

impl Default for PdfSection {
    fn default() -> Self {
        PdfSection { hidden: PdfArch::default().hidden, point_freqs: None, point_scale: 1.0, init: PdfArch::default().init, train: TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() } }
    }
}

impl PdfSection {
    pub fn arch(&self) -> PdfArch {
        PdfArch { hidden: self.hidden.clone(), point_freqs: self.point_freqs, point_scale: self.point_scale, init: self.init }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub emitter: EmitterSpec,
    #[serde(default)]
    pub background: Option<GridSpec>,
}

impl SceneSpec {
    pub fn build<R: Real>(&self, target: TargetDensity<R>, base: &Path) -> Result<ToyScene<R>> {
        let emitter = Emitter::new(self.emitter.clone()).map_err(|e| Error::config("scene.emitter", e.to_string()))?;
        let background = self.background.as_ref().map(|g| g.build(base)).transpose()?;
        ToyScene::new(target, emitter, background).map_err(|e| Error::config("scene", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Bins per axis; defaults to 200 on the line and 64 on the disk.
    pub bins: Option<usize>,
    pub samples: usize,
    /// Outgoing directions to evaluate conditional targets at.
    pub conditions: Vec<[f64; 2]>,
    pub quadrature_resolution: usize,
    pub coverage_threshold: f64,
    pub injectivity_resolution: usize,
    /// Sample count of each estimator-vs-oracle check.
    pub estimate_samples: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            bins: None,
            samples: 1_000_000,
            conditions: vec![[0.0, 0.0]],
            quadrature_resolution: 1024,
            coverage_threshold: 1e-4,
            injectivity_resolution: 101,
            estimate_samples: 100_000,
        }
    }
}

impl EvaluateSection {
    pub fn bins_for(&self, dim: usize) -> usize {
        self.bins.unwrap_or(if dim == 1 { 200 } else { 64 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub spps: Vec<usize>,
    pub trials: usize,
    pub strategies: Vec<Strategy>,
    pub condition: [f64; 2],
    pub reference_resolution: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            spps: (2..=11).map(|k| 1usize << k).collect(),
            trials: 64,
            strategies: vec![Strategy::Brdf, Strategy::Mis, Strategy::Emitter],
            condition: [0.3, 0.2],
            reference_resolution: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; overrides the `seed` of both training sections.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    pub target: TargetSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub sampler: SamplerArch,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pdf: PdfSection,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    /// Directory that relative paths inside the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{section}.{field}"), message),
        other => Error::config(section, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Ok(cfg)
    }

    /// Read, parse and validate a config file; `seed` overrides the file's.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.pdf.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.target.build::<f64>(&self.base_dir)?;
        self.prior.build::<f64>(self.target.dim())?;
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.pdf.train.validate().map_err(|e| prefixed("pdf.train", e))?;
        if self.sampler.hidden.is_empty() || self.sampler.hidden.contains(&0) {
            return Err(Error::config("sampler.hidden", "needs at least one non-empty hidden layer"));
        }
        if let Some(a) = self.sampler.alpha {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::config("sampler.alpha", "must lie in [0, 1)"));
            }
        }
        if self.pdf.hidden.is_empty() || self.pdf.hidden.contains(&0) {
            return Err(Error::config("pdf.hidden", "needs at least one non-empty hidden layer"));
        }
        if !(self.pdf.point_scale > 0.0 && self.pdf.point_scale.is_finite()) {
            return Err(Error::config("pdf.point_scale", "must be a positive finite number"));
        }
        if let Some(scene) = &self.scene {
            if self.target.dim() != 2 {
                return Err(Error::config("scene", "the toy scene needs a 2D target"));
            }
            scene.build(self.target.build::<f64>(&self.base_dir)?, &self.base_dir)?;
        }
        let ev = &self.evaluate;
        if ev.bins_for(self.target.dim()) < 2 {
            return Err(Error::config("evaluate.bins", "must be at least 2"));
        }
        if ev.samples == 0 || ev.estimate_samples == 0 {
            return Err(Error::config("evaluate.samples", "must be positive"));
        }
        if ev.quadrature_resolution < 64 {
            return Err(Error::config("evaluate.quadrature_resolution", "must be at least 64"));
        }
        if !(ev.coverage_threshold > 0.0 && ev.coverage_threshold <= 1.0) {
            return Err(Error::config("evaluate.coverage_threshold", "must lie in (0, 1]"));
        }
        if ev.injectivity_resolution < 2 {
            return Err(Error::config("evaluate.injectivity_resolution", "must be at least 2"));
        }
        if self.target.is_conditional() {
            if ev.conditions.is_empty() {
                return Err(Error::config("evaluate.conditions", "a conditional target needs at least one condition"));
            }
            for c in &ev.conditions {
                check_condition(c, "evaluate.conditions")?;
            }
            check_condition(&self.converge.condition, "converge.condition")?;
        }
        let cv = &self.converge;
        if cv.spps.is_empty() {
            return Err(Error::config("converge.spps", "must not be empty"));
        }
        if cv.spps[0] == 0 || cv.spps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("converge.spps", "must be positive and strictly increasing"));
        }
        if cv.trials == 0 {
            return Err(Error::config("converge.trials", "must be positive"));
        }
        if cv.reference_resolution < 64 {
            return Err(Error::config("converge.reference_resolution", "must be at least 64"));
        }
        Ok(())
    }

    /// The conditions to evaluate at (a single `none` for unconditional targets).
    pub fn eval_conditions<R: Real>(&self) -> Vec<Condition<R>> {
        if self.target.is_conditional() {
            self.evaluate.conditions.iter().map(|c| Condition { omega_o: Some([R::lit(c[0]), R::lit(c[1])]) }).collect()
        } else {
            vec![Condition::none()]
        }
    }

    pub fn converge_condition<R: Real>(&self) -> Condition<R> {
        if self.target.is_conditional() {
            let c = self.converge.condition;
            Condition { omega_o: Some([R::lit(c[0]), R::lit(c[1])]) }
        } else {
            Condition::none()
        }
    }
}

fn check_condition(c: &[f64; 2], field: &str) -> Result<()> {
    let r2 = c[0] * c[0] + c[1] * c[1];
    if r2.is_nan() || r2 >= 1.0 {
        return Err(Error::config(field, format!("({}, {}) is not inside the unit disk", c[0], c[1])));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIXTURE: &str = r#"{
        "target": {"kind": "gauss_mix", "weights": [0.3, 0.4, 0.3], "means": [-2.0, 0.3, 2.2], "stds": [0.45, 0.35, 0.6]},
        "train": {"steps": 10, "batch_conditions": 2, "batch_z": 8}
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let mut cfg = ExperimentConfig::parse(MIXTURE).unwrap();
        cfg.apply_seed();
        cfg.validate().unwrap();
        assert_eq!(cfg.prior, PriorSpec::StdNormal);
        assert_eq!(cfg.pdf.train.learning_rate, 1e-3);
        let partial = MIXTURE.replacen('{', r#"{"pdf": {"train": {"steps": 3}},"#, 1);
        let cfg = ExperimentConfig::parse(&partial).unwrap();
        assert_eq!((cfg.pdf.train.steps, cfg.pdf.train.learning_rate), (3, 1e-3));
        assert!(ExperimentConfig::parse(&MIXTURE.replacen('{', r#"{"pdf": {"train": {"stepz": 3}},"#, 1)).is_err());
        assert_eq!(cfg.evaluate.bins_for(1), 200);
        assert_eq!(cfg.converge.spps.first(), Some(&4));
        assert_eq!(cfg.converge.spps.last(), Some(&2048));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MIXTURE.replace("\"train\"", "\"trian\"");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = MIXTURE.replace("\"batch_z\"", "\"batchz\"");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_name_their_field() {
        let cfg = ExperimentConfig::parse(&MIXTURE.replace("\"steps\": 10", "\"learning_rate\": -1.0")).unwrap();
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("learning_rate"), "{e}");
        let mut cfg = ExperimentConfig::parse(MIXTURE).unwrap();
        cfg.converge.spps.clear();
        assert!(cfg.validate().unwrap_err().to_string().contains("converge.spps"));
    }

    #[test]
    fn scene_needs_a_disk_target() {
        let text = MIXTURE.replacen('{', r#"{"scene": {"emitter": {"kind": "uniform", "radiance": 1.0}},"#, 1);
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("scene"));
    }
}
