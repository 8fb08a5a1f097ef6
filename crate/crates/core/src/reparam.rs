//! The reparameterization sampler `u = T(z | cond)`.
//!
//! The network sees `concat(z, enc(cond))` and produces a raw vector `h`.
//! On the line, `u = h` (plus `z` with the skip connection). On the disk the
//! net emits `h ∈ ℝ³` with a softplus on its last component, so `h` lives in
//! the upper half space and `u` is the `(x, y)` part of `h / |h|`.
//!
//! Training minimizes, per sample,
//!
//! ```text
//! −log((1 − α)·f(T(z))·g(det J_T) + α·f(I(z))·|det J_I|)
//! ```
//!
//! with `g = max(·, 0)` (the upper-bound loss) or `g = |·|`, and `I` the fixed
//! defensive map. Gradients are exact: the per-sample term is evaluated on
//! nested duals whose outer level carries the raw net outputs and their
//! `z`-tangents, and the result is pushed through [`MlpParams::backward_tape`].

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nnet::{encoded_len, positional_encode, AdamState, HiddenActivation, Init, MlpParams, MlpSpec, OutputActivation};
use crate::rng;
use crate::scalar::{Dual, Real, Scalar};
use crate::targets::{sample_condition_with, Condition, Prior, TargetDensity};

/// Floor applied to the argument of the log in every loss term.
pub const LOG_FLOOR: f64 = 1e-30;

/// Approximate number of samples evaluated per parallel work item.
const CHUNK: usize = 2048;

const TAG_TRAIN: u64 = 0x74_7261_696e;
const TAG_DRAW: u64 = 0x6472_6177;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Line1D,
    Disk2D,
}

impl Domain {
    pub fn dim(self) -> usize {
        match self {
            Domain::Line1D => 1,
            Domain::Disk2D => 2,
        }
    }

    /// Width of the raw network output.
    pub fn raw_dim(self) -> usize {
        match self {
            Domain::Line1D => 1,
            Domain::Disk2D => 3,
        }
    }
}

/// How the sampler's Jacobian determinant enters the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetMode {
    /// `max(det, 0)`: orientation flips are penalized.
    Clamp,
    /// `|det|`.
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Upper-bound loss with the model's `alpha` and `max(det, 0)`.
    RepPrime,
    /// Model's `alpha` with `|det|`.
    Rep,
    /// Plain negative log-likelihood: `alpha = 0`, `|det|`.
    Nll,
}

impl LossKind {
    fn resolve<R: Real>(self, model_alpha: R) -> (R, DetMode) {
        match self {
            LossKind::RepPrime => (model_alpha, DetMode::Clamp),
            LossKind::Rep => (model_alpha, DetMode::Abs),
            LossKind::Nll => (R::zero(), DetMode::Abs),
        }
    }
}

/// Architecture knobs for [`SamplerModel::build`]. `None` fields take the
/// domain-dependent default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerArch {
    pub hidden: Vec<usize>,
    pub init: Init,
    /// Defensive weight; defaults to `1e-3` on the disk and `0` on the line.
    pub alpha: Option<f64>,
    /// Defaults to on for the line, off for the disk.
    pub skip_identity: Option<bool>,
    /// Positional-encoding frequencies for the condition; `None` feeds it raw.
    pub cond_freqs: Option<usize>,
}

impl Default for SamplerArch {
    fn default() -> Self {
        SamplerArch { hidden: vec![16, 16], init: Init::Standard, alpha: None, skip_identity: None, cond_freqs: Some(4) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerModel<R> {
    pub net: MlpParams<R>,
    pub domain: Domain,
    /// Width of the raw condition (0 for unconditional targets, 2 for `ω_o`).
    pub cond_dim: usize,
    pub cond_encoding: Option<usize>,
    pub alpha: R,
    pub skip_identity: bool,
    pub prior: Prior<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformResult<R> {
    pub u: Vec<R>,
    /// Signed Jacobian determinant of `z ↦ u`.
    pub det_j: R,
}

/// The defensive map `I(z) = z / sqrt(z·z + 1)` with its (positive)
/// Jacobian determinant `(z·z + 1)^{-(d+2)/2}`.
pub fn defensive_map<R: Real>(z: &[R]) -> TransformResult<R> {
    let s = z.iter().fold(R::one(), |acc, &x| acc + x * x);
    let inv = s.sqrt().recip();
    let det_j = match z.len() {
        1 => inv * inv * inv,
        2 => (s * s).recip(),
        d => inv.powi(d as i32 + 2),
    };
    TransformResult { u: z.iter().map(|&x| x * inv).collect(), det_j }
}

/// Inverse of [`defensive_map`]: `z = u / sqrt(1 − u·u)`.
pub fn defensive_map_inverse<R: Real>(u: &[R]) -> Result<Vec<R>> {
    let s = u.iter().fold(R::zero(), |acc, &x| acc + x * x);
    if !(s < R::one()) {
        return Err(Error::Domain("defensive map inverse needs |u| < 1".into()));
    }
    let inv = (R::one() - s).sqrt().recip();
    Ok(u.iter().map(|&x| x * inv).collect())
}

/// Prior draws pushed through a sampler, ready for estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawBatch<R> {
    pub dim: usize,
    /// Prior points, `n × prior dim` row-major.
    pub z: Vec<R>,
    /// Domain points, `n × dim` row-major.
    pub u: Vec<R>,
    /// `|det J|` per sample.
    pub det_j: Vec<R>,
    /// Prior density of each `z`.
    pub q: Vec<R>,
    /// Samples whose signed determinant was negative.
    pub negative_det: usize,
}

impl<R: Real> DrawBatch<R> {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn point(&self, i: usize) -> &[R] {
        &self.u[i * self.dim..(i + 1) * self.dim]
    }

    /// Sampling density `q(z) / |det J|` at sample `i`.
    pub fn pdf(&self, i: usize) -> R {
        self.q[i] / self.det_j[i]
    }
}

/// Anything that maps prior draws onto the domain with a known Jacobian.
pub trait Sampler<R: Real>: Sync {
    fn dim(&self) -> usize;
    fn prior(&self) -> &Prior<R>;
    fn draw(&self, cond: &Condition<R>, n: usize, seed: u64) -> Result<DrawBatch<R>>;
}

/// The analytic defensive map used as a sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct DefensiveSampler<R> {
    pub prior: Prior<R>,
}

impl<R: Real> Sampler<R> for DefensiveSampler<R> {
    fn dim(&self) -> usize {
        self.prior.dim
    }

    fn prior(&self) -> &Prior<R> {
        &self.prior
    }

    fn draw(&self, _cond: &Condition<R>, n: usize, seed: u64) -> Result<DrawBatch<R>> {
        let d = self.prior.dim;
        let parts: Vec<DrawBatch<R>> = chunk_ranges(n)
            .into_par_iter()
            .map(|(c, len)| {
                let mut g = rng::stream(seed, &[TAG_DRAW, c as u64]);
                let mut z = vec![R::zero(); len * d];
                self.prior.fill(&mut g, &mut z);
                let mut u = Vec::with_capacity(len * d);
                let mut det_j = Vec::with_capacity(len);
                let mut q = Vec::with_capacity(len);
                for p in z.chunks(d) {
                    let t = defensive_map(p);
                    u.extend(t.u);
                    det_j.push(t.det_j);
                    q.push(self.prior.pdf(p));
                }
                DrawBatch { dim: d, z, u, det_j, q, negative_det: 0 }
            })
            .collect();
        Ok(concat_batches(d, parts))
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c, CHUNK.min(n - c * CHUNK))).collect()
}

fn concat_batches<R: Real>(dim: usize, parts: Vec<DrawBatch<R>>) -> DrawBatch<R> {
    let mut out = DrawBatch { dim, z: vec![], u: vec![], det_j: vec![], q: vec![], negative_det: 0 };
    for p in parts {
        out.z.extend(p.z);
        out.u.extend(p.u);
        out.det_j.extend(p.det_j);
        out.q.extend(p.q);
        out.negative_det += p.negative_det;
    }
    out
}

/// A training batch: `conds.len()` groups of `group_size` prior points each.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch<R> {
    pub conds: Vec<Condition<R>>,
    pub group_size: usize,
    /// `conds.len() · group_size` points, row-major.
    pub z: Vec<R>,
}

impl<R: Real> TrainBatch<R> {
    pub fn len(&self) -> usize {
        self.conds.len() * self.group_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draw one group: a condition (if the target needs one) and its points.
    fn draw_group(conditional: bool, prior: &Prior<R>, group_size: usize, seed: u64, ids: &[u64]) -> Self {
        let mut g = rng::stream(seed, ids);
        let cond = if conditional { sample_condition_with(&mut g) } else { Condition::none() };
        let mut z = vec![R::zero(); group_size * prior.dim];
        prior.fill(&mut g, &mut z);
        TrainBatch { conds: vec![cond], group_size, z }
    }

    /// Draw a full batch deterministically from `seed`. Conditional batches
    /// draw one outgoing direction per group.
    pub fn draw(
        conditional: bool,
        prior: &Prior<R>,
        conditions: usize,
        group_size: usize,
        seed: u64,
    ) -> Self {
        let mut out = TrainBatch { conds: vec![], group_size, z: vec![] };
        for g in 0..conditions {
            let b = Self::draw_group(conditional, prior, group_size, seed, &[TAG_TRAIN, g as u64]);
            out.conds.extend(b.conds);
            out.z.extend(b.z);
        }
        out
    }
}

/// Loss value, gradient and health counters for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval<R> {
    pub loss: R,
    pub grad: Vec<R>,
    /// Samples whose log argument hit [`LOG_FLOOR`].
    pub clamped: usize,
}

impl<R: Real> SamplerModel<R> {
    /// Build a fresh model for `target`, initialized from `seed`.
    pub fn build(target: &TargetDensity<R>, prior: Prior<R>, arch: &SamplerArch, seed: u64) -> Result<Self> {
        let domain = match target.dim() {
            1 => Domain::Line1D,
            _ => Domain::Disk2D,
        };
        if prior.dim != domain.dim() {
            return Err(invalid(format!("prior is {}D but the target is {}D", prior.dim, domain.dim())));
        }
        if arch.hidden.is_empty() {
            return Err(invalid("sampler needs at least one hidden layer"));
        }
        let cond_dim = if target.is_conditional() { 2 } else { 0 };
        let alpha = arch.alpha.unwrap_or(match domain {
            Domain::Line1D => 0.0,
            Domain::Disk2D => 1e-3,
        });
        if !(0.0..1.0).contains(&alpha) {
            return Err(invalid("alpha must lie in [0, 1)"));
        }
        let skip_identity = arch.skip_identity.unwrap_or(domain == Domain::Line1D);
        let cond_encoding = if cond_dim > 0 { arch.cond_freqs } else { None };
        let mut sizes = vec![domain.dim() + if cond_dim > 0 { encoded_len(cond_dim, cond_encoding) } else { 0 }];
        sizes.extend(&arch.hidden);
        sizes.push(domain.raw_dim());
        let output = match domain {
            Domain::Line1D => OutputActivation::None,
            Domain::Disk2D => OutputActivation::SoftplusLast,
        };
        let spec = MlpSpec::new(sizes, HiddenActivation::Silu, output, arch.init)?;
        let net = MlpParams::init(spec, seed)?;
        Self::from_parts(net, domain, cond_dim, cond_encoding, R::lit(alpha), skip_identity, prior)
    }

    /// Assemble and validate a model from its components.
    pub fn from_parts(
        net: MlpParams<R>,
        domain: Domain,
        cond_dim: usize,
        cond_encoding: Option<usize>,
        alpha: R,
        skip_identity: bool,
        prior: Prior<R>,
    ) -> Result<Self> {
        let cond_width = if cond_dim > 0 { encoded_len(cond_dim, cond_encoding) } else { 0 };
        if net.input_dim() != domain.dim() + cond_width {
            return Err(invalid(format!(
                "network input width {} does not match domain + encoded condition ({})",
                net.input_dim(),
                domain.dim() + cond_width
            )));
        }
        if net.output_dim() != domain.raw_dim() {
            return Err(invalid(format!("{domain:?} needs {} raw outputs, network has {}", domain.raw_dim(), net.output_dim())));
        }
        if net.spec().hidden_activation != HiddenActivation::Silu {
            return Err(invalid("sampler networks must use SiLU hidden activations"));
        }
        if !(alpha >= R::zero() && alpha < R::one()) {
            return Err(invalid("alpha must lie in [0, 1)"));
        }
        if prior.dim != domain.dim() {
            return Err(invalid("prior dimension does not match the domain"));
        }
        Ok(SamplerModel { net, domain, cond_dim, cond_encoding, alpha, skip_identity, prior })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub(crate) fn encode_condition(&self, cond: &Condition<R>) -> Result<Vec<R>> {
        if self.cond_dim == 0 {
            return Ok(vec![]);
        }
        let c = cond.as_slice();
        if c.len() != self.cond_dim {
            return Err(invalid("this sampler needs an outgoing-direction condition"));
        }
        Ok(match self.cond_encoding {
            Some(f) => positional_encode(c, f),
            None => c.to_vec(),
        })
    }

    /// Raw output `h` → domain point. `h` already includes the skip term.
    fn output_map<S: Scalar<Real = R>>(&self, h: &[S]) -> [S; 2] {
        match self.domain {
            Domain::Line1D => [h[0], S::zero()],
            Domain::Disk2D => {
                let inv = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt().recip();
                [h[0] * inv, h[1] * inv]
            }
        }
    }

    /// Single-sample transform with its signed Jacobian determinant, computed
    /// by forward-mode duals through the whole composition.
    pub fn transform(&self, z: &[R], cond: &Condition<R>) -> Result<TransformResult<R>> {
        if z.len() != self.dim() {
            return Err(invalid(format!("prior point has {} coordinates, sampler is {}D", z.len(), self.dim())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite prior point"));
        }
        let enc = self.encode_condition(cond)?;
        let res = match self.domain {
            Domain::Line1D => {
                let zs = [Dual::<R, 1>::var(z[0], 0)];
                let u = self.dual_forward(&zs, &enc)?;
                TransformResult { u: vec![u[0].re], det_j: u[0].du[0] }
            }
            Domain::Disk2D => {
                let zs = [Dual::<R, 2>::var(z[0], 0), Dual::var(z[1], 1)];
                let u = self.dual_forward(&zs, &enc)?;
                let det = u[0].du[0] * u[1].du[1] - u[0].du[1] * u[1].du[0];
                TransformResult { u: vec![u[0].re, u[1].re], det_j: det }
            }
        };
        if res.u.iter().any(|v| !v.is_finite()) || !res.det_j.is_finite() {
            return Err(Error::Numeric("non-finite sampler output".into()));
        }
        Ok(res)
    }

    fn dual_forward<const D: usize>(&self, z: &[Dual<R, D>], enc: &[R]) -> Result<[Dual<R, D>; 2]> {
        let mut input: Vec<Dual<R, D>> = z.to_vec();
        input.extend(enc.iter().map(|&c| Dual::cst(c)));
        let mut h = self.net.forward(&input)?;
        if self.skip_identity {
            for (hk, &zk) in h.iter_mut().zip(z) {
                *hk = *hk + zk;
            }
        }
        Ok(self.output_map(&h))
    }

    /// Network input rows: `z` then the encoded condition of its group.
    fn input_matrix(&self, z: &[R], conds: &[Condition<R>], group_size: usize) -> Result<Array2<R>> {
        let d = self.dim();
        let n = z.len() / d;
        let width = self.net.input_dim();
        let mut x = Array2::zeros((n, width));
        for (g, cond) in conds.iter().enumerate() {
            let enc = self.encode_condition(cond)?;
            for i in g * group_size..((g + 1) * group_size).min(n) {
                let mut row = x.row_mut(i);
                for k in 0..d {
                    row[k] = z[i * d + k];
                }
                for (k, &e) in enc.iter().enumerate() {
                    row[d + k] = e;
                }
            }
        }
        Ok(x)
    }

    /// Batched transform for one condition: `(u, signed det)` per row.
    pub fn transform_batch(&self, z: &[R], cond: &Condition<R>) -> Result<(Vec<R>, Vec<R>)> {
        let d = self.dim();
        if !z.len().is_multiple_of(d) {
            return Err(invalid("prior batch length is not a multiple of the dimension"));
        }
        let n = z.len() / d;
        let parts: Vec<Result<(Vec<R>, Vec<R>)>> = chunk_ranges(n)
            .into_par_iter()
            .map(|(c, len)| {
                let zc = &z[c * CHUNK * d..(c * CHUNK + len) * d];
                self.transform_rows(zc, std::slice::from_ref(cond), len)
            })
            .collect();
        let mut u = Vec::with_capacity(n * d);
        let mut det = Vec::with_capacity(n);
        for p in parts {
            let (pu, pd) = p?;
            u.extend(pu);
            det.extend(pd);
        }
        Ok((u, det))
    }

    pub(crate) fn transform_rows(&self, z: &[R], conds: &[Condition<R>], group_size: usize) -> Result<(Vec<R>, Vec<R>)> {
        let d = self.dim();
        let n = z.len() / d;
        let x = self.input_matrix(z, conds, group_size)?;
        let wrt: Vec<usize> = (0..d).collect();
        let tape = self.net.forward_tape(x.view(), &wrt)?;
        let h = tape.output();
        let tangents: Vec<ArrayView2<'_, R>> = (0..d).map(|t| tape.output_tangent(t)).collect();
        let mut u = Vec::with_capacity(n * d);
        let mut det = Vec::with_capacity(n);
        for i in 0..n {
            let (ui, di) = match self.domain {
                Domain::Line1D => {
                    let mut hs = Dual::<R, 1> { re: h[[i, 0]], du: [tangents[0][[i, 0]]] };
                    if self.skip_identity {
                        hs = hs + Dual::var(z[i], 0);
                    }
                    ([hs.re, R::zero()], hs.du[0])
                }
                Domain::Disk2D => {
                    let mut hs = [Dual::<R, 2>::constant(R::zero()); 3];
                    for (k, hk) in hs.iter_mut().enumerate() {
                        *hk = Dual { re: h[[i, k]], du: [tangents[0][[i, k]], tangents[1][[i, k]]] };
                    }
                    if self.skip_identity {
                        hs[0] = hs[0] + Dual::var(z[2 * i], 0);
                        hs[1] = hs[1] + Dual::var(z[2 * i + 1], 1);
                    }
                    let m = self.output_map(&hs);
                    ([m[0].re, m[1].re], m[0].du[0] * m[1].du[1] - m[0].du[1] * m[1].du[0])
                }
            };
            if !ui[0].is_finite() || !ui[1].is_finite() || !di.is_finite() {
                return Err(Error::Numeric(format!("non-finite sampler output at row {i}")));
            }
            u.extend_from_slice(&ui[..d]);
            det.push(di);
        }
        Ok((u, det))
    }

    /// Draw `n` samples for `cond`. The defensive map is never mixed in here.
    pub fn draw_samples(&self, cond: &Condition<R>, n: usize, seed: u64) -> Result<DrawBatch<R>> {
        let d = self.dim();
        let parts: Vec<Result<DrawBatch<R>>> = chunk_ranges(n)
            .into_par_iter()
            .map(|(c, len)| {
                let mut g = rng::stream(seed, &[TAG_DRAW, c as u64]);
                let mut z = vec![R::zero(); len * d];
                self.prior.fill(&mut g, &mut z);
                let (u, signed) = self.transform_rows(&z, std::slice::from_ref(cond), len)?;
                let negative_det = signed.iter().filter(|&&v| v < R::zero()).count();
                let q = z.chunks(d).map(|p| self.prior.pdf(p)).collect();
                Ok(DrawBatch { dim: d, z, u, det_j: signed.into_iter().map(|v| v.abs()).collect(), q, negative_det })
            })
            .collect();
        Ok(concat_batches(d, parts.into_iter().collect::<Result<Vec<_>>>()?))
    }

    /// `α·f(I(z))·|det J_I(z)|` for one prior point.
    fn defensive_term(&self, target: &TargetDensity<R>, z: &[R], cond: &Condition<R>, alpha: R) -> R {
        if alpha == R::zero() {
            return R::zero();
        }
        let t = defensive_map(z);
        alpha * target.density(&t.u, cond) * t.det_j
    }

    /// Per-sample loss terms without gradients, one per batch point.
    pub fn loss_terms(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>, alpha: R, mode: DetMode) -> Result<Vec<R>> {
        self.check_batch(target, batch)?;
        let d = self.dim();
        let floor = R::lit(LOG_FLOOR);
        let mut out = Vec::with_capacity(batch.len());
        for (g, cond) in batch.conds.iter().enumerate() {
            let zg = &batch.z[g * batch.group_size * d..(g + 1) * batch.group_size * d];
            let (u, det) = self.transform_rows(zg, std::slice::from_ref(cond), batch.group_size)?;
            for i in 0..batch.group_size {
                let f = target.density(&u[i * d..(i + 1) * d], cond);
                let gd = match mode {
                    DetMode::Clamp => det[i].max(R::zero()),
                    DetMode::Abs => det[i].abs(),
                };
                let a = (R::one() - alpha) * f * gd + self.defensive_term(target, &zg[i * d..(i + 1) * d], cond, alpha);
                out.push(-a.max(floor).ln());
            }
        }
        Ok(out)
    }

    fn check_batch(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>) -> Result<()> {
        if target.dim() != self.dim() {
            return Err(invalid("target and sampler dimensions differ"));
        }
        if batch.z.len() != batch.len() * self.dim() {
            return Err(invalid("training batch has inconsistent length"));
        }
        if batch.is_empty() {
            return Err(invalid("empty training batch"));
        }
        Ok(())
    }

    /// Mean loss and its exact parameter gradient.
    pub fn loss_and_grad(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>, kind: LossKind) -> Result<LossEval<R>> {
        self.check_batch(target, batch)?;
        let (alpha, mode) = kind.resolve(self.alpha);
        let d = self.dim();
        let groups_per_chunk = (CHUNK / batch.group_size).max(1);
        let chunks: Vec<(usize, usize)> = (0..batch.conds.len())
            .step_by(groups_per_chunk)
            .map(|g0| (g0, (g0 + groups_per_chunk).min(batch.conds.len())))
            .collect();
        let parts: Vec<Result<LossEval<R>>> = chunks
            .into_par_iter()
            .map(|(g0, g1)| {
                let gs = batch.group_size;
                let zc = &batch.z[g0 * gs * d..g1 * gs * d];
                self.chunk_loss_grad(target, zc, &batch.conds[g0..g1], gs, alpha, mode)
            })
            .collect();
        let mut total = LossEval { loss: R::zero(), grad: vec![R::zero(); self.net.len()], clamped: 0 };
        for p in parts {
            let p = p?;
            total.loss += p.loss;
            total.clamped += p.clamped;
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

    /// Summed (not averaged) loss and gradient over a run of groups.
    fn chunk_loss_grad(
        &self,
        target: &TargetDensity<R>,
        z: &[R],
        conds: &[Condition<R>],
        group_size: usize,
        alpha: R,
        mode: DetMode,
    ) -> Result<LossEval<R>> {
        let d = self.dim();
        let o = self.domain.raw_dim();
        let n = z.len() / d;
        let x = self.input_matrix(z, conds, group_size)?;
        let wrt: Vec<usize> = (0..d).collect();
        let tape = self.net.forward_tape(x.view(), &wrt)?;
        let h = tape.output();
        let tangents: Vec<ArrayView2<'_, R>> = (0..d).map(|t| tape.output_tangent(t)).collect();
        let mut upstream = Array2::<R>::zeros(((d + 1) * n, o));
        let mut loss = R::zero();
        let mut clamped = 0;
        for i in 0..n {
            let cond = &conds[i / group_size];
            let zi = &z[i * d..(i + 1) * d];
            let defensive = self.defensive_term(target, zi, cond, alpha);
            let mut grad = [R::zero(); 9];
            let (l, hit) = match self.domain {
                Domain::Line1D => {
                    let hv = [h[[i, 0]], R::zero(), R::zero()];
                    let tv = [[tangents[0][[i, 0]]], [R::zero()], [R::zero()]];
                    let (l, hit, g) = self.sample_term::<1, 2>(target, cond, zi, &hv, &tv, alpha, defensive, mode);
                    grad[..2].copy_from_slice(&g);
                    (l, hit)
                }
                Domain::Disk2D => {
                    let hv = [h[[i, 0]], h[[i, 1]], h[[i, 2]]];
                    let mut tv = [[R::zero(); 2]; 3];
                    for (k, row) in tv.iter_mut().enumerate() {
                        *row = [tangents[0][[i, k]], tangents[1][[i, k]]];
                    }
                    let (l, hit, g) = self.sample_term::<2, 9>(target, cond, zi, &hv, &tv, alpha, defensive, mode);
                    grad.copy_from_slice(&g);
                    (l, hit)
                }
            };
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss term at sample {i}")));
            }
            loss += l;
            clamped += hit as usize;
            for k in 0..o {
                upstream[[i, k]] = grad[k];
                for t in 0..d {
                    upstream[[(t + 1) * n + i, k]] = grad[o + k * d + t];
                }
            }
        }
        let mut grad = vec![R::zero(); self.net.len()];
        self.net.backward_tape(&tape, upstream.view(), &mut grad)?;
        Ok(LossEval { loss, grad, clamped })
    }

    /// One loss term and its derivatives with respect to the raw outputs
    /// `h_k` (slots `0..o`) and their tangents `∂h_k/∂z_t` (slot `o + k·D + t`).
    #[allow(clippy::too_many_arguments)]
    fn sample_term<const D: usize, const M: usize>(
        &self,
        target: &TargetDensity<R>,
        cond: &Condition<R>,
        z: &[R],
        h: &[R; 3],
        tangents: &[[R; D]; 3],
        alpha: R,
        defensive: R,
        mode: DetMode,
    ) -> (R, bool, [R; M]) {
        type Outer<R, const M: usize> = Dual<R, M>;
        let o = self.domain.raw_dim();
        let mut hs = [Dual::<Outer<R, M>, D>::constant(Outer::constant(R::zero())); 3];
        for k in 0..o {
            let mut du = [Outer::<R, M>::constant(R::zero()); D];
            for (t, slot) in du.iter_mut().enumerate() {
                *slot = Outer::var(tangents[k][t], o + k * D + t);
            }
            hs[k] = Dual { re: Outer::var(h[k], k), du };
        }
        if self.skip_identity {
            for (k, hk) in hs.iter_mut().enumerate().take(D) {
                hk.re = hk.re + Outer::constant(z[k]);
                hk.du[k] = hk.du[k] + Outer::constant(R::one());
            }
        }
        let u = self.output_map(&hs[..o]);
        let det = if D == 1 { u[0].du[0] } else { u[0].du[0] * u[1].du[1] - u[0].du[1] * u[1].du[0] };
        let point = [u[0].re, u[1].re];
        let f = target.density(&point[..D], cond);
        let g = match mode {
            DetMode::Clamp if det.re < R::zero() => Outer::constant(R::zero()),
            DetMode::Clamp => det,
            DetMode::Abs if det.re < R::zero() => -det,
            DetMode::Abs => det,
        };
        let a = Outer::<R, M>::cst(R::one() - alpha) * f * g + Outer::cst(defensive);
        let floor = R::lit(LOG_FLOOR);
        if !(a.re >= floor) {
            return (-floor.ln(), true, [R::zero(); M]);
        }
        let l = -a.ln();
        (l.re, false, l.du)
    }

    pub fn loss_rep_prime(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>) -> Result<LossEval<R>> {
        self.loss_and_grad(target, batch, LossKind::RepPrime)
    }

    pub fn loss_rep(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>) -> Result<LossEval<R>> {
        self.loss_and_grad(target, batch, LossKind::Rep)
    }

    pub fn loss_nll(&self, target: &TargetDensity<R>, batch: &TrainBatch<R>) -> Result<LossEval<R>> {
        self.loss_and_grad(target, batch, LossKind::Nll)
    }
}

impl<R: Real> Sampler<R> for SamplerModel<R> {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn prior(&self) -> &Prior<R> {
        &self.prior
    }

    fn draw(&self, cond: &Condition<R>, n: usize, seed: u64) -> Result<DrawBatch<R>> {
        self.draw_samples(cond, n, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_conditions: usize,
    /// Prior points per condition.
    pub batch_z: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
    pub loss: LossKind,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch_conditions: 1024,
            batch_z: 1024,
            learning_rate: 5e-4,
            seed: 0,
            max_grad_norm: None,
            loss: LossKind::RepPrime,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    /// The CPU-sized preset: 5000 steps of 256 × 256.
    pub fn desk() -> Self {
        TrainConfig { steps: 5000, batch_conditions: 256, batch_z: 256, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.batch_conditions == 0 {
            return Err(Error::config("batch_conditions", "must be positive"));
        }
        if self.batch_z == 0 {
            return Err(Error::config("batch_z", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a positive finite number"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("max_grad_norm", "must be a positive finite number"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clamped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn total_clamped(&self) -> usize {
        self.rows.iter().map(|r| r.clamped).sum()
    }
}

/// Shared optimizer loop: draws a fresh batch per step from
/// `(seed, step)`, evaluates `loss`, and takes an Adam step.
pub(crate) fn run_training<R: Real>(
    params: &mut MlpParams<R>,
    config: &TrainConfig,
    mut loss: impl FnMut(&MlpParams<R>, u64) -> Result<LossEval<R>>,
) -> Result<TrainLog> {
    config.validate()?;
    let mut adam = AdamState::new(params.len(), R::lit(config.learning_rate), config.max_grad_norm.map(R::lit))?;
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let step_seed = rng::derive_seed(config.seed, &[step as u64]);
        let mut eval = loss(params, step_seed).map_err(|e| match e {
            Error::Numeric(reason) => Error::Diverged { step, reason },
            other => other,
        })?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged { step, reason: "non-finite loss".into() });
        }
        let grad_norm = eval.grad.iter().map(|&g| g * g).sum::<R>().sqrt();
        adam.learning_rate = R::lit(config.learning_rate * config.schedule.factor(step, config.steps));
        adam.step(params.values_mut(), &mut eval.grad).map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged { step, reason },
            other => other,
        })?;
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, reason: "non-finite parameters".into() });
        }
        log.rows.push(LogRow { step, loss: eval.loss.as_f64(), grad_norm: grad_norm.as_f64(), clamped: eval.clamped });
    }
    Ok(log)
}

/// Train `model` in place on `target`. Deterministic in `config.seed`.
pub fn train_sampler<R: Real>(
    model: &mut SamplerModel<R>,
    target: &TargetDensity<R>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    if target.dim() != model.dim() {
        return Err(invalid("target and sampler dimensions differ"));
    }
    let mut net = model.net.clone();
    let log = run_training(&mut net, config, |params, step_seed| {
        let batch = TrainBatch::draw(target.is_conditional(), &model.prior, config.batch_conditions, config.batch_z, step_seed);
        let view = SamplerModel { net: params.clone(), ..model.clone() };
        view.loss_and_grad(target, &batch, config.loss)
    })?;
    model.net = net;
    Ok(log)
}
