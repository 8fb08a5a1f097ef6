//! JSON model files.
//!
//! Weights are stored as `f64`, which holds every `f32` exactly, and
//! serde_json prints the shortest decimal that parses back to the same bits,
//! so a save/load cycle is bit-exact for both precisions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use reparam_core::nnet::{HiddenActivation, Init, MlpParams, MlpSpec, OutputActivation};
use reparam_core::pdfnet::PdfModel;
use reparam_core::reparam::{Domain, SamplerModel, TrainLog};
use reparam_core::{Error, Real, Result};

use crate::config::{Precision, PriorSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sampler,
    Pdf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// `silu`, `relu`, `none`, `exp` or `softplus_last`.
    pub activation: String,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub steps: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
}

impl TrainingMeta {
    pub fn from_log(log: &TrainLog, seed: u64) -> Self {
        TrainingMeta { steps: log.rows.len(), seed, final_loss: log.final_loss() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub precision: Precision,
    pub domain: Domain,
    pub cond_dim: usize,
    pub cond_encoding: Option<usize>,
    /// Pdf only: positional-encoding frequencies of the point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_encoding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_scale: Option<f64>,
    /// Sampler only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_identity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    pub init: Init,
    pub layers: Vec<LayerRecord>,
    pub training: TrainingMeta,
}

fn hidden_name(a: HiddenActivation) -> &'static str {
    match a {
        HiddenActivation::Silu => "silu",
        HiddenActivation::Relu => "relu",
    }
}

fn output_name(a: OutputActivation) -> &'static str {
    match a {
        OutputActivation::None => "none",
        OutputActivation::Exp => "exp",
        OutputActivation::SoftplusLast => "softplus_last",
    }
}

fn layers_of<R: Real>(net: &MlpParams<R>) -> Vec<LayerRecord> {
    let spec = net.spec();
    (0..spec.num_layers())
        .map(|l| {
            let (w, b) = net.layer(l);
            let last = l + 1 == spec.num_layers();
            LayerRecord {
                inputs: w.ncols(),
                outputs: w.nrows(),
                activation: if last { output_name(spec.output_activation) } else { hidden_name(spec.hidden_activation) }.into(),
                weights: w.iter().map(|v| v.as_f64()).collect(),
                biases: b.iter().map(|v| v.as_f64()).collect(),
            }
        })
        .collect()
}

fn precision_of<R: Real>() -> Precision {
    if std::mem::size_of::<R>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl ModelFile {
    pub fn from_sampler<R: Real>(m: &SamplerModel<R>, training: TrainingMeta) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            kind: ModelKind::Sampler,
            precision: precision_of::<R>(),
            domain: m.domain,
            cond_dim: m.cond_dim,
            cond_encoding: m.cond_encoding,
            point_encoding: None,
            point_scale: None,
            alpha: Some(m.alpha.as_f64()),
            skip_identity: Some(m.skip_identity),
            prior: Some(PriorSpec::of(&m.prior)),
            init: m.net.spec().init,
            layers: layers_of(&m.net),
            training,
        }
    }

    pub fn from_pdf<R: Real>(p: &PdfModel<R>, training: TrainingMeta) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            kind: ModelKind::Pdf,
            precision: precision_of::<R>(),
            domain: p.domain,
            cond_dim: p.cond_dim,
            cond_encoding: p.cond_encoding,
            point_encoding: p.point_encoding,
            point_scale: Some(p.point_scale.as_f64()),
            alpha: None,
            skip_identity: None,
            prior: None,
            init: p.net.spec().init,
            layers: layers_of(&p.net),
            training,
        }
    }

    /// Rebuild the network, checking layer shapes and activations.
    fn network<R: Real>(&self) -> Result<MlpParams<R>> {
        if self.layers.is_empty() {
            return Err(format_err("model has no layers"));
        }
        let mut sizes = vec![self.layers[0].inputs];
        let mut values = Vec::new();
        for (l, rec) in self.layers.iter().enumerate() {
            if rec.inputs != *sizes.last().unwrap() {
                return Err(format_err(format!("layer {l} expects {} inputs, previous layer has {}", rec.inputs, sizes.last().unwrap())));
            }
            if rec.weights.len() != rec.inputs * rec.outputs || rec.biases.len() != rec.outputs {
                return Err(format_err(format!("layer {l} has the wrong number of weights or biases")));
            }
            if rec.weights.iter().chain(&rec.biases).any(|v| !v.is_finite()) {
                return Err(format_err(format!("layer {l} holds non-finite values")));
            }
            sizes.push(rec.outputs);
            values.extend(rec.weights.iter().chain(&rec.biases).map(|&v| R::lit(v)));
        }
        let last = self.layers.len() - 1;
        let hidden = match self.layers[..last].first().map(|r| r.activation.as_str()) {
            None | Some("silu") => HiddenActivation::Silu,
            Some("relu") => HiddenActivation::Relu,
            Some(other) => return Err(format_err(format!("unknown hidden activation `{other}`"))),
        };
        if let Some(bad) = self.layers[..last].iter().find(|r| r.activation != hidden_name(hidden)) {
            return Err(format_err(format!("mixed hidden activations (`{}`)", bad.activation)));
        }
        let output = match self.layers[last].activation.as_str() {
            "none" => OutputActivation::None,
            "exp" => OutputActivation::Exp,
            "softplus_last" => OutputActivation::SoftplusLast,
            other => return Err(format_err(format!("unknown output activation `{other}`"))),
        };
        let spec = MlpSpec::new(sizes, hidden, output, self.init).map_err(|e| format_err(e.to_string()))?;
        MlpParams::from_values(spec, values)
    }

    fn check<R: Real>(&self, kind: ModelKind) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {}", self.format_version)));
        }
        if self.kind != kind {
            return Err(format_err(format!("expected a {kind:?} model, found {:?}", self.kind).to_lowercase()));
        }
        if self.precision != precision_of::<R>() {
            return Err(format_err(format!("model precision is {:?}", self.precision)));
        }
        Ok(())
    }

    pub fn to_sampler<R: Real>(&self) -> Result<SamplerModel<R>> {
        self.check::<R>(ModelKind::Sampler)?;
        let alpha = self.alpha.ok_or_else(|| format_err("sampler model is missing `alpha`"))?;
        let skip = self.skip_identity.ok_or_else(|| format_err("sampler model is missing `skip_identity`"))?;
        let prior = self.prior.ok_or_else(|| format_err("sampler model is missing `prior`"))?.build(self.domain.dim())?;
        SamplerModel::from_parts(self.network()?, self.domain, self.cond_dim, self.cond_encoding, R::lit(alpha), skip, prior)
            .map_err(|e| format_err(e.to_string()))
    }

    pub fn to_pdf<R: Real>(&self) -> Result<PdfModel<R>> {
        self.check::<R>(ModelKind::Pdf)?;
        PdfModel::from_parts(self.network()?, self.domain, self.cond_dim, self.cond_encoding, self.point_encoding, R::lit(self.point_scale.unwrap_or(1.0)))
            .map_err(|e| format_err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model files always serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("model", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
    }
}
