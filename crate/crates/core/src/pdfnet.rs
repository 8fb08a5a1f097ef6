//! The pdf-approximation network `p̂(u | cond)`.
//!
//! `p̂` is a small ReLU network with an exponential output, fitted to a frozen
//! sampler by minimizing `(p̂(T(z))·|det J_T(z)| − q(z))²`. It only ever feeds
//! MIS weights, so it does not need to be normalized.
//!
//! By default the network starts from `p̂ ≡ 1` (zero final layer). With an
//! exp output the loss gradient vanishes wherever `p̂` is tiny, so a random
//! start that puts almost no mass on a mode may never recover it.
//!
//! The point `u` is divided by `point_scale` (bringing line samples to
//! roughly unit range, where the hidden units' kinks start out) and can be
//! fed through the same positional encoding as the condition. A plain
//! ReLU/exp network makes `log p̂` piecewise linear in `u`, which decays too
//! fast in the heavy tails of peaked disk lobes; the encoded input lets it
//! follow them. The encoding is periodic, so it only suits inputs already
//! within `[−1, 1]`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nnet::{encoded_len, positional_encode, HiddenActivation, Init, MlpParams, MlpSpec, OutputActivation};
use crate::reparam::{run_training, Domain, LossEval, SamplerModel, TrainBatch, TrainConfig, TrainLog};
use crate::scalar::Real;
use crate::targets::Condition;

const CHUNK: usize = 4096;

/// Anything usable as the approximate sampling density inside MIS weights.
pub trait PdfApprox<R: Real>: Sync {
    /// Densities at `n` points (`n × dim`, row-major) under `cond`.
    fn pdf_batch(&self, u: &[R], cond: &Condition<R>) -> Result<Vec<R>>;
}

/// A deliberately uninformed `p̂`: the same positive value everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantPdf<R>(pub R);

impl<R: Real> PdfApprox<R> for ConstantPdf<R> {
    fn pdf_batch(&self, u: &[R], _cond: &Condition<R>) -> Result<Vec<R>> {
        if !(self.0 > R::zero()) {
            return Err(invalid("constant pdf must be positive"));
        }
        Ok(vec![self.0; u.len()])
    }
}

/// Architecture knobs for [`PdfModel::for_sampler`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdfArch {
    pub hidden: Vec<usize>,
    /// Positional-encoding frequencies for the point `u`; `None` feeds it raw.
    pub point_freqs: Option<usize>,
    /// The point is divided by this before encoding.
    pub point_scale: f64,
    /// `Identity` zeroes the final layer so training starts from `p̂ ≡ 1`.
    pub init: Init,
}

impl Default for PdfArch {
    fn default() -> Self {
        PdfArch { hidden: vec![16], point_freqs: None, point_scale: 1.0, init: Init::Identity }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdfModel<R> {
    pub net: MlpParams<R>,
    pub domain: Domain,
    pub cond_dim: usize,
    pub cond_encoding: Option<usize>,
    pub point_encoding: Option<usize>,
    pub point_scale: R,
}

impl<R: Real> PdfModel<R> {
    /// A fresh `p̂` whose domain and condition encoding mirror `sampler`.
    pub fn for_sampler(sampler: &SamplerModel<R>, arch: &PdfArch, seed: u64) -> Result<Self> {
        if arch.hidden.is_empty() {
            return Err(invalid("pdf network needs at least one hidden layer"));
        }
        let mut sizes = vec![input_width(sampler.domain, arch.point_freqs, sampler.cond_dim, sampler.cond_encoding)];
        sizes.extend(&arch.hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, HiddenActivation::Relu, OutputActivation::Exp, arch.init)?;
        let net = MlpParams::init(spec, seed)?;
        Self::from_parts(net, sampler.domain, sampler.cond_dim, sampler.cond_encoding, arch.point_freqs, R::lit(arch.point_scale))
    }

    pub fn from_parts(
        net: MlpParams<R>,
        domain: Domain,
        cond_dim: usize,
        cond_encoding: Option<usize>,
        point_encoding: Option<usize>,
        point_scale: R,
    ) -> Result<Self> {
        if !(point_scale > R::zero() && point_scale.is_finite()) {
            return Err(invalid("point scale must be positive and finite"));
        }
        if net.input_dim() != input_width(domain, point_encoding, cond_dim, cond_encoding) {
            return Err(invalid("pdf network input width does not match domain and condition encoding"));
        }
        if net.output_dim() != 1 {
            return Err(invalid("pdf network must have a single output"));
        }
        if net.spec().output_activation != OutputActivation::Exp {
            return Err(invalid("pdf network needs the exp output activation"));
        }
        Ok(PdfModel { net, domain, cond_dim, cond_encoding, point_encoding, point_scale })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn encode(&self, cond: &Condition<R>) -> Result<Vec<R>> {
        if self.cond_dim == 0 {
            return Ok(vec![]);
        }
        let c = cond.as_slice();
        if c.len() != self.cond_dim {
            return Err(invalid("this pdf model needs an outgoing-direction condition"));
        }
        Ok(match self.cond_encoding {
            Some(f) => positional_encode(c, f),
            None => c.to_vec(),
        })
    }

    fn check_point(&self, u: &[R]) -> Result<()> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite point".into()));
        }
        if self.domain == Domain::Disk2D && u[0] * u[0] + u[1] * u[1] >= R::one() {
            return Err(Error::Domain(format!("({}, {}) is not inside the open unit disk", u[0], u[1])));
        }
        Ok(())
    }

    /// `p̂(u | cond)`, strictly positive.
    pub fn pdf_eval(&self, u: &[R], cond: &Condition<R>) -> Result<R> {
        if u.len() != self.dim() {
            return Err(invalid(format!("point has {} coordinates, pdf model is {}D", u.len(), self.dim())));
        }
        self.check_point(u)?;
        let mut x = self.encode_point(u);
        x.extend(self.encode(cond)?);
        let out = self.net.forward(&x)?;
        if !(out[0] > R::zero() && out[0].is_finite()) {
            return Err(Error::Numeric(format!("pdf network produced {}", out[0])));
        }
        Ok(out[0])
    }

    fn encode_point(&self, u: &[R]) -> Vec<R> {
        let x: Vec<R> = u.iter().map(|&v| v / self.point_scale).collect();
        match self.point_encoding {
            Some(f) => positional_encode(&x, f),
            None => x,
        }
    }

    fn inputs(&self, u: &[R], enc: &[R]) -> Array2<R> {
        let d = self.dim();
        let n = u.len() / d;
        let w = encoded_len(d, self.point_encoding);
        let mut x = Array2::zeros((n, w + enc.len()));
        for (i, p) in u.chunks(d).enumerate() {
            let mut row = x.row_mut(i);
            for (j, v) in self.encode_point(p).into_iter().chain(enc.iter().copied()).enumerate() {
                row[j] = v;
            }
        }
        x
    }

    /// Loss `mean (p̂(T(z))·|det J_T| − q(z))²` and its gradient in the pdf
    /// network's parameters. The sampler is only read.
    pub fn loss_pdf(&self, sampler: &SamplerModel<R>, batch: &TrainBatch<R>) -> Result<LossEval<R>> {
        if sampler.domain != self.domain || sampler.cond_dim != self.cond_dim {
            return Err(invalid("pdf model and sampler disagree on domain or condition"));
        }
        let d = self.dim();
        if batch.is_empty() || batch.z.len() != batch.len() * d {
            return Err(invalid("training batch has inconsistent length"));
        }
        let gs = batch.group_size;
        let parts: Vec<Result<LossEval<R>>> = (0..batch.conds.len())
            .into_par_iter()
            .map(|g| {
                let cond = &batch.conds[g];
                let z = &batch.z[g * gs * d..(g + 1) * gs * d];
                let (u, det) = sampler.transform_rows(z, std::slice::from_ref(cond), gs)?;
                let enc = self.encode(cond)?;
                let x = self.inputs(&u, &enc);
                let tape = self.net.forward_tape(x.view(), &[])?;
                let p = tape.output();
                let mut upstream = vec![R::zero(); gs];
                let mut loss = R::zero();
                let two = R::lit(2.0);
                for i in 0..gs {
                    let ad = det[i].abs();
                    let r = p[[i, 0]] * ad - sampler.prior.pdf(&z[i * d..(i + 1) * d]);
                    loss += r * r;
                    upstream[i] = two * r * ad;
                }
                let mut grad = vec![R::zero(); self.net.len()];
                let up = ArrayView2::from_shape((gs, 1), &upstream).expect("column");
                self.net.backward_tape(&tape, up, &mut grad)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric("non-finite pdf loss".into()));
                }
                Ok(LossEval { loss, grad, clamped: 0 })
            })
            .collect();
        let mut total = LossEval { loss: R::zero(), grad: vec![R::zero(); self.net.len()], clamped: 0 };
        for p in parts {
            let p = p?;
            total.loss += p.loss;
            for (a, b) in total.grad.iter_mut().zip(p.grad) {
                *a += b;
            }
        }
        let inv_n = R::from_usize_lossy(batch.len()).recip();
        total.loss *= inv_n;
        for g in total.grad.iter_mut() {
            *g *= inv_n;
        }
        Ok(total)
    }
}

fn input_width(domain: Domain, point_encoding: Option<usize>, cond_dim: usize, cond_encoding: Option<usize>) -> usize {
    encoded_len(domain.dim(), point_encoding) + if cond_dim > 0 { encoded_len(cond_dim, cond_encoding) } else { 0 }
}

impl<R: Real> PdfApprox<R> for PdfModel<R> {
    fn pdf_batch(&self, u: &[R], cond: &Condition<R>) -> Result<Vec<R>> {
        let d = self.dim();
        if !u.len().is_multiple_of(d) {
            return Err(invalid("point batch length is not a multiple of the dimension"));
        }
        for p in u.chunks(d) {
            self.check_point(p)?;
        }
        let enc = self.encode(cond)?;
        let parts: Vec<Result<Vec<R>>> = u
            .par_chunks(CHUNK * d)
            .map(|uc| {
                let tape = self.net.forward_tape(self.inputs(uc, &enc).view(), &[])?;
                Ok(tape.output().column(0).to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(u.len() / d);
        for p in parts {
            out.extend(p?);
        }
        if let Some(v) = out.iter().find(|v| !(**v > R::zero() && v.is_finite())) {
            return Err(Error::Numeric(format!("pdf network produced {v}")));
        }
        Ok(out)
    }
}

/// Fit `pmodel` to the frozen `sampler`. Batches are drawn like the
/// sampler's own training batches, from `config.seed`.
pub fn train_pdf<R: Real>(pmodel: &mut PdfModel<R>, sampler: &SamplerModel<R>, config: &TrainConfig) -> Result<TrainLog> {
    let conditional = sampler.cond_dim > 0;
    let mut net = pmodel.net.clone();
    let log = run_training(&mut net, config, |params, step_seed| {
        let batch = TrainBatch::draw(conditional, &sampler.prior, config.batch_conditions, config.batch_z, step_seed);
        let view = PdfModel { net: params.clone(), ..pmodel.clone() };
        view.loss_pdf(sampler, &batch)
    })?;
    pmodel.net = net;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::SamplerArch;
    use crate::targets::{Prior, TargetDensity};

    fn sampler() -> SamplerModel<f64> {
        let t = TargetDensity::ggx(0.3, 0.04).unwrap();
        SamplerModel::build(&t, Prior::std_normal(2), &SamplerArch::default(), 3).unwrap()
    }

    fn mean_loss(p: &PdfModel<f64>, s: &SamplerModel<f64>, b: &TrainBatch<f64>) -> f64 {
        p.loss_pdf(s, b).unwrap().loss
    }

    #[test]
    fn pdf_loss_gradient_matches_finite_differences() {
        let s = sampler();
        let p = PdfModel::for_sampler(&s, &PdfArch { point_freqs: Some(2), ..PdfArch::default() }, 8).unwrap();
        let batch = TrainBatch::draw(true, &s.prior, 3, 16, 1);
        let eval = p.loss_pdf(&s, &batch).unwrap();
        let h = 1e-6;
        for idx in 0..p.net.len() {
            let mut a = p.clone();
            a.net.values_mut()[idx] += h;
            let mut b = p.clone();
            b.net.values_mut()[idx] -= h;
            let fd = (mean_loss(&a, &s, &batch) - mean_loss(&b, &s, &batch)) / (2.0 * h);
            let err = (fd - eval.grad[idx]).abs() / fd.abs().max(1e-5);
            assert!(err < 1e-4, "param {idx}: fd {fd} vs exact {}", eval.grad[idx]);
        }
    }

    #[test]
    fn batch_and_single_evaluations_agree() {
        let s = sampler();
        for point_freqs in [None, Some(3)] {
            let p = PdfModel::for_sampler(&s, &PdfArch { point_freqs, ..PdfArch::default() }, 2).unwrap();
            let cond = Condition::at(0.2, 0.4).unwrap();
            let u = [0.1, 0.2, -0.5, 0.3, 0.0, -0.9];
            let batch = p.pdf_batch(&u, &cond).unwrap();
            for i in 0..3 {
                assert!((p.pdf_eval(&u[2 * i..2 * i + 2], &cond).unwrap() - batch[i]).abs() < 1e-14);
                assert!(batch[i] > 0.0);
            }
            assert!(p.pdf_eval(&[0.8, 0.6], &cond).is_err());
            assert!(p.pdf_eval(&[0.1, 0.1], &Condition::none()).is_err());
        }
    }

    #[test]
    fn training_lowers_the_pdf_loss() {
        let s = sampler();
        let mut p = PdfModel::for_sampler(&s, &PdfArch::default(), 5).unwrap();
        let cfg = TrainConfig { steps: 80, batch_conditions: 4, batch_z: 64, learning_rate: 1e-2, ..TrainConfig::default() };
        let log = train_pdf(&mut p, &s, &cfg).unwrap();
        let first: f64 = log.rows[..10].iter().map(|r| r.loss).sum();
        let last: f64 = log.rows[70..].iter().map(|r| r.loss).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn constant_pdf_must_be_positive() {
        let c = Condition::none();
        assert_eq!(ConstantPdf(2.0f64).pdf_batch(&[0.1, 0.2], &c).unwrap(), vec![2.0, 2.0]);
        assert!(ConstantPdf(0.0f64).pdf_batch(&[0.1], &c).is_err());
    }
}
