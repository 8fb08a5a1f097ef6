//! Unbiased Monte Carlo estimation on a one-bounce toy scene.
//!
//! The scene integrates `∫ L_i(u)·f(u | cond) du` over the domain, where `f`
//! is the target density and `L_i` the incident radiance. Radiance comes from
//! an emitter that can be sampled directly, plus an optional background
//! field that only the BRDF strategy can find.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pdfnet::PdfApprox;
use crate::reparam::{DrawBatch, Sampler};
use crate::rng;
use crate::scalar::Real;
use crate::targets::{disk_quadrature, Condition, Grid, TargetDensity};

const TAG_EMITTER: u64 = 0x656d_6974;
const TAG_UNIFORM: u64 = 0x756e_6966;
const TAG_TRIAL: u64 = 0x74_7269_616c;

/// Grid resolution used to normalize the spot emitter.
const SPOT_NORMALIZATION_RES: usize = 2048;

/// Light source on the disk with a directly-samplable density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmitterSpec {
    /// Constant radiance over the whole disk, sampled uniformly.
    Uniform { radiance: f64 },
    /// Gaussian spot `radiance·exp(−|u − center|²/(2σ²))` truncated to the
    /// disk, sampled proportionally to its radiance.
    Spot { center: [f64; 2], sigma: f64, radiance: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emitter<R> {
    pub spec: EmitterSpec,
    /// `∫_disk exp(−|u − c|²/(2σ²)) du` for the spot; `π` for uniform.
    norm: R,
}

impl<R: Real> Emitter<R> {
    pub fn new(spec: EmitterSpec) -> Result<Self> {
        let norm = match &spec {
            EmitterSpec::Uniform { radiance } => {
                if !(*radiance >= 0.0 && radiance.is_finite()) {
                    return Err(invalid("emitter radiance must be finite and non-negative"));
                }
                R::PI()
            }
            EmitterSpec::Spot { center, sigma, radiance } => {
                if !(*radiance >= 0.0 && radiance.is_finite()) {
                    return Err(invalid("emitter radiance must be finite and non-negative"));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid("spot sigma must be positive"));
                }
                if center[0] * center[0] + center[1] * center[1] >= 1.0 {
                    return Err(invalid("spot center must lie inside the unit disk"));
                }
                let (c, s) = (*center, *sigma);
                let shape = |u: [f64; 2]| (-((u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2)) / (2.0 * s * s)).exp();
                R::lit(disk_quadrature(shape, SPOT_NORMALIZATION_RES))
            }
        };
        Ok(Emitter { spec, norm })
    }

    /// Emitted radiance `L_e(u)`.
    pub fn radiance(&self, u: &[R]) -> R {
        match &self.spec {
            EmitterSpec::Uniform { radiance } => R::lit(*radiance),
            EmitterSpec::Spot { center, sigma, radiance } => R::lit(*radiance) * self.shape(u, *center, *sigma),
        }
    }

    fn shape(&self, u: &[R], center: [f64; 2], sigma: f64) -> R {
        let dx = u[0] - R::lit(center[0]);
        let dy = u[1] - R::lit(center[1]);
        (-(dx * dx + dy * dy) / R::lit(2.0 * sigma * sigma)).exp()
    }

    /// Emitter sampling density `p_e(u)`; zero outside the disk.
    pub fn pdf(&self, u: &[R]) -> R {
        if u[0] * u[0] + u[1] * u[1] >= R::one() {
            return R::zero();
        }
        match &self.spec {
            EmitterSpec::Uniform { .. } => R::FRAC_1_PI(),
            EmitterSpec::Spot { center, sigma, .. } => self.shape(u, *center, *sigma) / self.norm,
        }
    }

    /// One draw from `p_e`: uniform on the disk, or the spot's Gaussian
    /// restricted to the disk by rejection.
    pub fn sample<G: Rng>(&self, rng: &mut G) -> [R; 2] {
        match &self.spec {
            EmitterSpec::Uniform { .. } => uniform_disk(rng),
            EmitterSpec::Spot { center, sigma, .. } => loop {
                let x: f64 = rng.sample(rand_distr::StandardNormal);
                let y: f64 = rng.sample(rand_distr::StandardNormal);
                let (ux, uy) = (center[0] + sigma * x, center[1] + sigma * y);
                if ux * ux + uy * uy < 1.0 {
                    return [R::lit(ux), R::lit(uy)];
                }
            },
        }
    }
}

fn uniform_disk<R: Real, G: Rng>(rng: &mut G) -> [R; 2] {
    let r = rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    [R::lit(r * phi.cos()), R::lit(r * phi.sin())]
}

/// One-bounce scene: `f` from the target, `L_i = L_e + background`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyScene<R> {
    pub target: TargetDensity<R>,
    pub emitter: Emitter<R>,
    /// Radiance not reachable by emitter sampling.
    pub background: Option<Grid<R>>,
}

impl<R: Real> ToyScene<R> {
    pub fn new(target: TargetDensity<R>, emitter: Emitter<R>, background: Option<Grid<R>>) -> Result<Self> {
        if target.dim() != 2 {
            return Err(invalid("the toy scene lives on the disk; use a 2D target"));
        }
        Ok(ToyScene { target, emitter, background })
    }

    fn background(&self, u: &[R]) -> R {
        self.background.as_ref().map_or(R::zero(), |g| g.interpolate(u[0], u[1]))
    }

    /// Total incident radiance `L_i(u)`.
    pub fn incident(&self, u: &[R]) -> R {
        self.emitter.radiance(u) + self.background(u)
    }

    /// Quadrature reference for `∫ L_i·f du`.
    pub fn reference(&self, cond: &Condition<R>, resolution: usize) -> Result<R> {
        let li = |u: &[R]| self.incident(u);
        Ok(self.target.quadrature_integral(cond, Some(&li), resolution)?.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<R> {
    pub mean: R,
    /// Unbiased sample variance of the per-sample contributions.
    pub sample_variance: R,
    pub n: usize,
}

impl<R: Real> Estimate<R> {
    /// Mean and variance of per-sample contributions; rejects non-finite values.
    pub fn from_contributions(c: &[R]) -> Result<Self> {
        if c.is_empty() {
            return Err(invalid("an estimate needs at least one sample"));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite contribution at sample {i}")));
        }
        let n = c.len();
        let nr = R::from_usize_lossy(n);
        let mean = c.iter().copied().sum::<R>() / nr;
        let sample_variance = if n > 1 {
            c.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / R::from_usize_lossy(n - 1)
        } else {
            R::zero()
        };
        Ok(Estimate { mean, sample_variance, n })
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> R {
        (self.sample_variance / R::from_usize_lossy(self.n)).sqrt()
    }
}

/// Power-heuristic MIS weights `(w, w_e)` for densities `p` and `p_e`.
///
/// `w_e` is computed as `1 − w`, so `w + w_e == 1` holds exactly in floating
/// point. The ratio form avoids overflow when either density is huge.
pub fn power_heuristic<R: Real>(p: R, p_e: R) -> Result<(R, R)> {
    if !(p >= R::zero() && p_e >= R::zero()) || !(p + p_e > R::zero()) {
        return Err(invalid("power heuristic needs non-negative densities, not both zero"));
    }
    let one = R::one();
    let w = if p >= p_e {
        let r = p_e / p;
        one / (one + r * r)
    } else {
        let r = p / p_e;
        r * r / (one + r * r)
    };
    Ok((w, one - w))
}

/// Which estimator to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Reparameterized BRDF sampling only.
    Brdf,
    /// BRDF sampling combined with emitter sampling.
    Mis,
    /// Emitter sampling only.
    Emitter,
    /// Uniform disk sampling (the cosine-weighted baseline).
    Uniform,
    /// BRDF sampling with the `|det J|` factor dropped. Biased on purpose.
    BiasedNoJacobian,
}

/// Per-sample `L_i·f·|det J|/q` for a draw batch.
fn brdf_contributions<R: Real>(scene: &ToyScene<R>, batch: &DrawBatch<R>, cond: &Condition<R>, jacobian: bool) -> Result<Vec<R>> {
    (0..batch.len())
        .map(|i| {
            let q = batch.q[i];
            if !(q > R::zero()) {
                return Err(Error::Numeric(format!("prior density is zero at sample {i}")));
            }
            let u = batch.point(i);
            let li = scene.incident(u);
            if li == R::zero() {
                return Ok(R::zero());
            }
            let jac = if jacobian { batch.det_j[i] } else { R::one() };
            Ok(li * scene.target.density(u, cond) * jac / q)
        })
        .collect()
}

/// Reparameterized estimate of `∫ L_i·f du` from `n` prior draws.
pub fn estimate_reparam<R: Real>(
    sampler: &dyn Sampler<R>,
    scene: &ToyScene<R>,
    cond: &Condition<R>,
    n: usize,
    seed: u64,
) -> Result<Estimate<R>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let batch = sampler.draw(cond, n, seed)?;
    Estimate::from_contributions(&brdf_contributions(scene, &batch, cond, true)?)
}

fn estimate_biased<R: Real>(
    sampler: &dyn Sampler<R>,
    scene: &ToyScene<R>,
    cond: &Condition<R>,
    n: usize,
    seed: u64,
) -> Result<Estimate<R>> {
    let batch = sampler.draw(cond, n, seed)?;
    Estimate::from_contributions(&brdf_contributions(scene, &batch, cond, false)?)
}

fn emitter_draws<R: Real>(scene: &ToyScene<R>, n: usize, seed: u64) -> Vec<[R; 2]> {
    let mut g = rng::stream(seed, &[TAG_EMITTER]);
    (0..n).map(|_| scene.emitter.sample(&mut g)).collect()
}

/// Emitter-sampling-only estimate of the emitter part `∫ L_e·f du`.
/// Background radiance is invisible to this strategy.
pub fn estimate_emitter<R: Real>(scene: &ToyScene<R>, cond: &Condition<R>, n: usize, seed: u64) -> Result<Estimate<R>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let c: Vec<R> = emitter_draws(scene, n, seed)
        .into_iter()
        .map(|u| scene.emitter.radiance(&u) * scene.target.density(&u, cond) / scene.emitter.pdf(&u))
        .collect();
    Estimate::from_contributions(&c)
}

/// Per-sample MIS contributions and the weights used, `(c, w, w_e)`.
pub struct MisSamples<R> {
    pub contributions: Vec<R>,
    /// BRDF-branch weight at each BRDF sample, and `1 − w` at the same point.
    pub brdf_weights: Vec<(R, R)>,
    /// Emitter-branch weight pair at each emitter sample.
    pub emitter_weights: Vec<(R, R)>,
}

/// MIS combination of reparameterized BRDF sampling and emitter sampling.
///
/// Each of the `n` terms pairs one emitter draw `u'` with one BRDF draw
/// `u = T(z)`:
/// `w_e(u')·L_e(u')·f(u')/p_e(u') + w(u)·L_e(u)·f(u)·|det J|/q(z) + B(u)·f(u)·|det J|/q(z)`
/// where `(w, w_e)` is the power heuristic on `(p̂, p_e)`. `p̂` enters the
/// weights only; the BRDF quotient always uses the exact `|det J|/q`.
pub fn mis_samples<R: Real>(
    sampler: &dyn Sampler<R>,
    pdf: &dyn PdfApprox<R>,
    scene: &ToyScene<R>,
    cond: &Condition<R>,
    n: usize,
    seed: u64,
) -> Result<MisSamples<R>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let batch = sampler.draw(cond, n, seed)?;
    let p_hat = pdf.pdf_batch(&batch.u, cond)?;
    let lights = emitter_draws(scene, n, rng::derive_seed(seed, &[TAG_EMITTER]));
    let flat: Vec<R> = lights.iter().flatten().copied().collect();
    let p_hat_e = pdf.pdf_batch(&flat, cond)?;

    let mut out = MisSamples { contributions: Vec::with_capacity(n), brdf_weights: vec![], emitter_weights: vec![] };
    out.brdf_weights.reserve(n);
    out.emitter_weights.reserve(n);
    for i in 0..n {
        let ue = &lights[i];
        let pe = scene.emitter.pdf(ue);
        let we = power_heuristic(p_hat_e[i], pe)?;
        let emit = we.1 * scene.emitter.radiance(ue) * scene.target.density(ue, cond) / pe;

        let u = batch.point(i);
        let q = batch.q[i];
        if !(q > R::zero()) {
            return Err(Error::Numeric(format!("prior density is zero at sample {i}")));
        }
        let wb = power_heuristic(p_hat[i], scene.emitter.pdf(u))?;
        let throughput = scene.target.density(u, cond) * batch.det_j[i] / q;
        let brdf = (wb.0 * scene.emitter.radiance(u) + scene.background(u)) * throughput;

        out.contributions.push(emit + brdf);
        out.brdf_weights.push(wb);
        out.emitter_weights.push(we);
    }
    Ok(out)
}

pub fn estimate_mis<R: Real>(
    sampler: &dyn Sampler<R>,
    pdf: &dyn PdfApprox<R>,
    scene: &ToyScene<R>,
    cond: &Condition<R>,
    n: usize,
    seed: u64,
) -> Result<Estimate<R>> {
    Estimate::from_contributions(&mis_samples(sampler, pdf, scene, cond, n, seed)?.contributions)
}

/// Uniform samples on the disk with their constant density `1/π`.
pub fn baseline_uniform_sample<R: Real>(n: usize, seed: u64) -> DrawBatch<R> {
    let mut g = rng::stream(seed, &[TAG_UNIFORM]);
    let mut u = Vec::with_capacity(2 * n);
    for _ in 0..n {
        u.extend(uniform_disk::<R, _>(&mut g));
    }
    DrawBatch { dim: 2, z: u.clone(), u, det_j: vec![R::one(); n], q: vec![R::FRAC_1_PI(); n], negative_det: 0 }
}

pub fn estimate_uniform<R: Real>(scene: &ToyScene<R>, cond: &Condition<R>, n: usize, seed: u64) -> Result<Estimate<R>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let batch = baseline_uniform_sample(n, seed);
    Estimate::from_contributions(&brdf_contributions(scene, &batch, cond, true)?)
}

/// Everything [`convergence_curve`] needs to run one estimator repeatedly.
pub struct EstimatorSetup<'a, R: Real> {
    pub strategy: Strategy,
    pub sampler: Option<&'a dyn Sampler<R>>,
    pub pdf: Option<&'a dyn PdfApprox<R>>,
    pub scene: &'a ToyScene<R>,
    pub cond: Condition<R>,
}

impl<R: Real> EstimatorSetup<'_, R> {
    pub fn run(&self, n: usize, seed: u64) -> Result<Estimate<R>> {
        let sampler = || self.sampler.ok_or_else(|| invalid(format!("{:?} needs a sampler", self.strategy)));
        match self.strategy {
            Strategy::Brdf => estimate_reparam(sampler()?, self.scene, &self.cond, n, seed),
            Strategy::BiasedNoJacobian => estimate_biased(sampler()?, self.scene, &self.cond, n, seed),
            Strategy::Mis => {
                let pdf = self.pdf.ok_or_else(|| invalid("MIS needs a pdf model"))?;
                estimate_mis(sampler()?, pdf, self.scene, &self.cond, n, seed)
            }
            Strategy::Emitter => estimate_emitter(self.scene, &self.cond, n, seed),
            Strategy::Uniform => estimate_uniform(self.scene, &self.cond, n, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub spp: usize,
    pub mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceRecord {
    /// Least-squares slope of `log mse` against `log spp`.
    pub fn slope(&self) -> Result<f64> {
        if self.rows.len() < 2 {
            return Err(invalid("a slope needs at least two rows"));
        }
        if self.rows.iter().any(|r| !(r.mse > 0.0)) {
            return Err(Error::Numeric("zero or negative MSE has no logarithm".into()));
        }
        let xs: Vec<f64> = self.rows.iter().map(|r| (r.spp as f64).ln()).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.mse.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Ok(sxy / sxx)
    }

    /// CSV with header `spp,mse,seconds`; floats with 17 significant digits.
    /// Wall times are not reproducible, so with `timings == false` the
    /// `seconds` field is left empty and the file is a pure function of the
    /// inputs.
    pub fn write_csv(&self, mut w: impl Write, timings: bool) -> Result<()> {
        writeln!(w, "spp,mse,seconds")?;
        for r in &self.rows {
            if timings {
                writeln!(w, "{},{:.16e},{:.16e}", r.spp, r.mse, r.seconds)?;
            } else {
                writeln!(w, "{},{:.16e},", r.spp, r.mse)?;
            }
        }
        Ok(())
    }
}

/// MSE against `reference` for each sample count, over `trials` independent
/// runs with seeds derived from `(seed, spp, trial)`.
pub fn convergence_curve<R: Real>(
    setup: &EstimatorSetup<'_, R>,
    reference: f64,
    spps: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConvergenceRecord> {
    if spps.is_empty() {
        return Err(invalid("spp list is empty"));
    }
    if spps.windows(2).any(|w| w[1] <= w[0]) || spps[0] == 0 {
        return Err(invalid("spp values must be positive and strictly increasing"));
    }
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let mut rec = ConvergenceRecord::default();
    for &spp in spps {
        let start = Instant::now();
        let errs: Vec<Result<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let e = setup.run(spp, rng::derive_seed(seed, &[TAG_TRIAL, spp as u64, t as u64]))?;
                let d = e.mean.as_f64() - reference;
                Ok(d * d)
            })
            .collect();
        let mut sum = 0.0;
        for e in errs {
            sum += e?;
        }
        rec.rows.push(ConvergenceRow { spp, mse: sum / trials as f64, seconds: start.elapsed().as_secs_f64() });
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdfnet::ConstantPdf;
    use crate::reparam::DefensiveSampler;
    use crate::targets::Prior;

    fn scene() -> ToyScene<f64> {
        let emitter = Emitter::new(EmitterSpec::Spot { center: [0.2, -0.1], sigma: 0.25, radiance: 3.0 }).unwrap();
        let background = Grid::new(2, 2, vec![0.5, 0.2, 0.1, 0.4]).unwrap();
        ToyScene::new(TargetDensity::ggx(0.5, 0.04).unwrap(), emitter, Some(background)).unwrap()
    }

    fn cond() -> Condition<f64> {
        Condition::at(0.3, 0.1).unwrap()
    }

    #[test]
    fn power_heuristic_examples() {
        let (w, we) = power_heuristic(1.0f64, 2.0).unwrap();
        assert!((w - 0.2).abs() < 1e-15 && (we - 0.8).abs() < 1e-15);
        assert_eq!(power_heuristic(3.0f64, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(power_heuristic(0.0f64, 1e300).unwrap(), (0.0, 1.0));
        assert_eq!(power_heuristic(1e300f64, 1e300).unwrap().0, 0.5);
        assert!(power_heuristic(0.0f64, 0.0).is_err());
        assert!(power_heuristic(-1.0f64, 1.0).is_err());
        for (p, q) in [(0.3f64, 0.7), (1e-20, 5.0), (12.0, 1e-9)] {
            let (a, b) = power_heuristic(p, q).unwrap();
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn spot_pdf_integrates_to_one() {
        let e = Emitter::<f64>::new(EmitterSpec::Spot { center: [0.6, 0.5], sigma: 0.3, radiance: 1.0 }).unwrap();
        let total = disk_quadrature(|u| e.pdf(&u), 1024);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert!(Emitter::<f64>::new(EmitterSpec::Spot { center: [1.0, 0.0], sigma: 0.3, radiance: 1.0 }).is_err());
    }

    fn within(e: Estimate<f64>, reference: f64, k: f64) {
        assert!((e.mean - reference).abs() < k * e.std_error(), "{} vs {reference} (se {})", e.mean, e.std_error());
    }

    #[test]
    fn estimators_are_unbiased() {
        let s = scene();
        let c = cond();
        let reference = s.reference(&c, 1024).unwrap();
        let defensive = DefensiveSampler { prior: Prior::std_normal(2) };
        within(estimate_reparam(&defensive, &s, &c, 200_000, 1).unwrap(), reference, 4.0);
        within(estimate_uniform(&s, &c, 200_000, 2).unwrap(), reference, 4.0);
        for k in [0.1, 1.0, 10.0] {
            within(estimate_mis(&defensive, &ConstantPdf(k), &s, &c, 200_000, 3).unwrap(), reference, 4.0);
        }
    }

    #[test]
    fn emitter_sampling_sees_only_the_emitter() {
        let s = scene();
        let c = cond();
        let li = |u: &[f64]| s.emitter.radiance(u);
        let emit_only = s.target.quadrature_integral(&c, Some(&li), 1024).unwrap().value;
        within(estimate_emitter(&s, &c, 200_000, 4).unwrap(), emit_only, 4.0);
    }

    #[test]
    fn mis_weights_partition_unity() {
        let s = scene();
        let defensive = DefensiveSampler { prior: Prior::std_normal(2) };
        let m = mis_samples(&defensive, &ConstantPdf(0.7), &s, &cond(), 1000, 5).unwrap();
        assert!(m.brdf_weights.iter().chain(&m.emitter_weights).all(|(w, we)| w + we == 1.0));
    }

    #[test]
    fn uniform_convergence_has_unit_slope() {
        let s = scene();
        let c = cond();
        let reference = s.reference(&c, 1024).unwrap();
        let setup = EstimatorSetup { strategy: Strategy::Uniform, sampler: None, pdf: None, scene: &s, cond: c };
        let spps: Vec<usize> = (2..10).map(|k| 1 << k).collect();
        let rec = convergence_curve(&setup, reference, &spps, 256, 0).unwrap();
        let slope = rec.slope().unwrap();
        assert!((-1.15..=-0.85).contains(&slope), "{slope}");
        let again = convergence_curve(&setup, reference, &spps, 256, 0).unwrap();
        assert_eq!(rec.rows.iter().map(|r| r.mse).collect::<Vec<_>>(), again.rows.iter().map(|r| r.mse).collect::<Vec<_>>());
        let mut csv = vec![];
        rec.write_csv(&mut csv, false).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("spp,mse,seconds\n4,"));
    }

    #[test]
    fn convergence_rejects_bad_spp_lists() {
        let s = scene();
        let setup = EstimatorSetup { strategy: Strategy::Uniform, sampler: None, pdf: None, scene: &s, cond: cond() };
        assert!(convergence_curve(&setup, 0.0, &[], 4, 0).is_err());
        assert!(convergence_curve(&setup, 0.0, &[8, 4], 4, 0).is_err());
        assert!(convergence_curve(&setup, 0.0, &[4, 8], 0, 0).is_err());
        let brdf = EstimatorSetup { strategy: Strategy::Brdf, ..setup };
        assert!(brdf.run(4, 0).is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rec = ConvergenceRecord {
            rows: [4usize, 8, 16].iter().map(|&spp| ConvergenceRow { spp, mse: 3.0 / spp as f64, seconds: 0.0 }).collect(),
        };
        assert!((rec.slope().unwrap() + 1.0).abs() < 1e-12);
    }
}
