//! Histograms, KL divergence, coverage and injectivity checks.
//!
//! Everything here works in `f64` regardless of the model's scalar type.
//! References are plain closures `u ↦ density`, normalized over the binned
//! domain before comparison.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::reparam::SamplerModel;
use crate::scalar::Real;
use crate::targets::Condition;

/// Floor applied to reference bin densities inside the KL sum.
pub const KL_REF_FLOOR: f64 = 1e-12;

/// Default relative mass threshold for [`coverage_check`].
pub const DEFAULT_MASS_THRESHOLD: f64 = 1e-4;

/// Bins a perfect sampler would expect fewer samples than this in are not
/// significant for [`coverage_check`]: an empty bin there says nothing about
/// the sampler (`P(miss) = e^{-10}` at the cut).
pub const MIN_EXPECTED_COUNT: f64 = 10.0;

/// Column subdivisions used to integrate bin ∩ disk areas.
const AREA_SUBDIV: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistDomain {
    /// `bins` equal cells over `[lo, hi]`.
    Line { lo: f64, hi: f64 },
    /// `bins × bins` square cells over `[−1, 1]²`; cells outside the disk
    /// are masked.
    Disk,
}

impl HistDomain {
    pub fn dim(&self) -> usize {
        match self {
            HistDomain::Line { .. } => 1,
            HistDomain::Disk => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityHistogram {
    pub domain: HistDomain,
    /// Bins per axis.
    pub bins: usize,
    pub counts: Vec<u64>,
    /// In-domain area of each bin (`0` marks a masked bin).
    pub area: Vec<f64>,
    /// `count / (n · area)`, zero for masked bins.
    pub density: Vec<f64>,
    /// Total number of samples offered, including outside ones.
    pub n: usize,
    /// Samples that fell outside the binned domain.
    pub outside: usize,
}

/// Area of `[x0, x1] × [y0, y1]` inside the unit disk. The vertical extent
/// of each column is exact; columns are placed uniformly in `θ = asin x`,
/// which removes the square-root singularity at the rim.
fn disk_cell_area(x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let far = |a: f64, b: f64| a.abs().max(b.abs());
    if far(x0, x1).powi(2) + far(y0, y1).powi(2) <= 1.0 {
        return (x1 - x0) * (y1 - y0);
    }
    let (t0, t1) = (x0.clamp(-1.0, 1.0).asin(), x1.clamp(-1.0, 1.0).asin());
    let h = (t1 - t0) / AREA_SUBDIV as f64;
    (0..AREA_SUBDIV)
        .map(|i| {
            let t = t0 + (i as f64 + 0.5) * h;
            let s = t.cos();
            (y1.min(s) - y0.max(-s)).max(0.0) * s
        })
        .sum::<f64>()
        * h
}

impl DensityHistogram {
    /// An empty histogram with its bin geometry.
    pub fn new(domain: HistDomain, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("a histogram needs at least two bins per axis"));
        }
        let area = match domain {
            HistDomain::Line { lo, hi } => {
                if !(hi > lo) {
                    return Err(invalid("histogram range needs lo < hi"));
                }
                vec![(hi - lo) / bins as f64; bins]
            }
            HistDomain::Disk => {
                let w = 2.0 / bins as f64;
                let mut a = Vec::with_capacity(bins * bins);
                for r in 0..bins {
                    for c in 0..bins {
                        let (x0, y0) = (-1.0 + c as f64 * w, -1.0 + r as f64 * w);
                        a.push(disk_cell_area(x0, x0 + w, y0, y0 + w));
                    }
                }
                a
            }
        };
        let len = area.len();
        Ok(DensityHistogram { domain, bins, counts: vec![0; len], area, density: vec![0.0; len], n: 0, outside: 0 })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn is_masked(&self, k: usize) -> bool {
        self.area[k] <= 0.0
    }

    fn width(&self) -> f64 {
        match self.domain {
            HistDomain::Line { lo, hi } => (hi - lo) / self.bins as f64,
            HistDomain::Disk => 2.0 / self.bins as f64,
        }
    }

    /// Lower corner of bin `k`.
    fn corner(&self, k: usize) -> [f64; 2] {
        let w = self.width();
        match self.domain {
            HistDomain::Line { lo, .. } => [lo + k as f64 * w, 0.0],
            HistDomain::Disk => [-1.0 + (k % self.bins) as f64 * w, -1.0 + (k / self.bins) as f64 * w],
        }
    }

    /// Bin center (second coordinate unused on the line).
    pub fn center(&self, k: usize) -> [f64; 2] {
        let [x, y] = self.corner(k);
        let h = self.width() / 2.0;
        match self.domain {
            HistDomain::Line { .. } => [x + h, 0.0],
            HistDomain::Disk => [x + h, y + h],
        }
    }

    /// Bin index of a point, or `None` outside the domain.
    pub fn locate(&self, u: &[f64]) -> Option<usize> {
        let w = self.width();
        match self.domain {
            HistDomain::Line { lo, hi } => {
                let x = u[0];
                if !(x >= lo && x < hi) {
                    return None;
                }
                Some((((x - lo) / w) as usize).min(self.bins - 1))
            }
            HistDomain::Disk => {
                let (x, y) = (u[0], u[1]);
                if !(x * x + y * y < 1.0) {
                    return None;
                }
                let c = (((x + 1.0) / w) as usize).min(self.bins - 1);
                let r = (((y + 1.0) / w) as usize).min(self.bins - 1);
                Some(r * self.bins + c)
            }
        }
    }

    fn finish(&mut self) {
        let n = self.n as f64;
        for k in 0..self.len() {
            self.density[k] = if self.n == 0 || self.is_masked(k) { 0.0 } else { self.counts[k] as f64 / (n * self.area[k]) };
        }
    }

    /// `Σ density·area`: the fraction of samples inside the domain.
    pub fn total_mass(&self) -> f64 {
        self.density.iter().zip(&self.area).map(|(d, a)| d * a).sum()
    }

    /// Mean of `f` over each bin's in-domain part, on a `sub`-point (line)
    /// or `sub × sub` (disk) midpoint grid. Masked bins get 0.
    pub fn bin_means(&self, f: &dyn Fn(&[f64]) -> f64, sub: usize) -> Vec<f64> {
        let w = self.width();
        let h = w / sub as f64;
        (0..self.len())
            .map(|k| {
                if self.is_masked(k) {
                    return 0.0;
                }
                let [x0, y0] = self.corner(k);
                match self.domain {
                    HistDomain::Line { .. } => {
                        (0..sub).map(|i| f(&[x0 + (i as f64 + 0.5) * h])).sum::<f64>() / sub as f64
                    }
                    HistDomain::Disk => {
                        let mut acc = 0.0;
                        let mut cnt = 0usize;
                        for i in 0..sub {
                            for j in 0..sub {
                                let p = [x0 + (j as f64 + 0.5) * h, y0 + (i as f64 + 0.5) * h];
                                if p[0] * p[0] + p[1] * p[1] < 1.0 {
                                    acc += f(&p);
                                    cnt += 1;
                                }
                            }
                        }
                        if cnt == 0 {
                            // a sliver of the rim: evaluate just inside it
                            let c = self.center(k);
                            let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                            let s = (1.0 - 1e-6) / r;
                            f(&[c[0] * s, c[1] * s])
                        } else {
                            acc / cnt as f64
                        }
                    }
                }
            })
            .collect()
    }

    /// Reference bin densities, normalized so that `Σ area·q = 1`.
    pub fn reference_densities(&self, reference: &dyn Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let sub = match self.domain {
            HistDomain::Line { .. } => 16,
            HistDomain::Disk => 8,
        };
        let mut q = self.bin_means(reference, sub);
        if let Some(v) = q.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("reference density must be finite and non-negative, got {v}")));
        }
        let z: f64 = q.iter().zip(&self.area).map(|(v, a)| v * a).sum();
        if !(z > 0.0) {
            return Err(invalid("reference density integrates to zero over the histogram"));
        }
        for v in q.iter_mut() {
            *v /= z;
        }
        Ok(q)
    }

    /// CSV: bin center coordinates and density, masked bins omitted.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        match self.domain {
            HistDomain::Line { .. } => writeln!(w, "x,density")?,
            HistDomain::Disk => writeln!(w, "x,y,density")?,
        }
        for k in 0..self.len() {
            if self.is_masked(k) {
                continue;
            }
            let c = self.center(k);
            match self.domain {
                HistDomain::Line { .. } => writeln!(w, "{:?},{:?}", c[0], self.density[k])?,
                HistDomain::Disk => writeln!(w, "{:?},{:?},{:?}", c[0], c[1], self.density[k])?,
            }
        }
        Ok(())
    }
}

/// Bin `samples` (`n × dim`, row-major). An empty sample set yields an
/// all-zero histogram with `n == 0`.
pub fn histogram_samples<R: Real>(samples: &[R], bins: usize, domain: HistDomain) -> Result<DensityHistogram> {
    let d = domain.dim();
    if !samples.len().is_multiple_of(d) {
        return Err(invalid("sample buffer length is not a multiple of the dimension"));
    }
    let mut h = DensityHistogram::new(domain, bins)?;
    for p in samples.chunks(d) {
        let u = [p[0].as_f64(), if d == 2 { p[1].as_f64() } else { 0.0 }];
        h.n += 1;
        match h.locate(&u[..d]) {
            Some(k) => h.counts[k] += 1,
            None => h.outside += 1,
        }
    }
    h.finish();
    Ok(h)
}

/// `Σ area·p·ln(p/q)` over bins with samples, `q` the reference normalized
/// over the histogram and floored at [`KL_REF_FLOOR`].
pub fn kl_divergence(hist: &DensityHistogram, reference: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    let q = hist.reference_densities(reference)?;
    Ok(kl_against(hist, &q))
}

/// KL of the histogram against precomputed normalized bin densities.
pub fn kl_against(hist: &DensityHistogram, q: &[f64]) -> f64 {
    hist.density
        .iter()
        .zip(q)
        .zip(&hist.area)
        .filter(|((p, _), _)| **p > 0.0)
        .map(|((&p, &q), &a)| a * p * (p / q.max(KL_REF_FLOOR)).ln())
        .sum()
}

/// Fraction of significant bins that received no samples. A bin is
/// significant when its reference mass is at least `threshold ×` the largest
/// bin mass and a perfect sampler would expect at least
/// [`MIN_EXPECTED_COUNT`] of the histogram's samples in it. No samples at all
/// gives `1`.
pub fn coverage_check(hist: &DensityHistogram, reference: &dyn Fn(&[f64]) -> f64, threshold: f64) -> Result<f64> {
    let all = [(f64::NEG_INFINITY, f64::INFINITY)];
    Ok(coverage_in_regions(hist, reference, threshold, &all)?[0])
}

/// [`coverage_check`] restricted to bins whose center's first coordinate
/// lies in each `[lo, hi]` region — one miss fraction per region.
pub fn coverage_in_regions(
    hist: &DensityHistogram,
    reference: &dyn Fn(&[f64]) -> f64,
    threshold: f64,
    regions: &[(f64, f64)],
) -> Result<Vec<f64>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid("mass threshold must lie in (0, 1]"));
    }
    let q = hist.reference_densities(reference)?;
    let mass: Vec<f64> = q.iter().zip(&hist.area).map(|(v, a)| v * a).collect();
    let max = mass.iter().copied().fold(0.0, f64::max);
    let cut = (threshold * max).max(MIN_EXPECTED_COUNT / hist.n.max(1) as f64);
    Ok(regions
        .iter()
        .map(|&(lo, hi)| {
            let mut significant = 0usize;
            let mut missed = 0usize;
            for (k, &m) in mass.iter().enumerate() {
                let x = hist.center(k)[0];
                if x < lo || x > hi || m < cut {
                    continue;
                }
                significant += 1;
                if hist.counts[k] == 0 {
                    missed += 1;
                }
            }
            if hist.n == 0 || significant == 0 {
                1.0
            } else {
                missed as f64 / significant as f64
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Injectivity {
    pub min_det: f64,
    pub negative_fraction: f64,
}

/// Signed Jacobian determinant of `model` over a regular grid covering
/// `[−4, 4]^d` in prior space.
pub fn injectivity_check<R: Real>(model: &SamplerModel<R>, cond: &Condition<R>, resolution: usize) -> Result<Injectivity> {
    if resolution < 2 {
        return Err(invalid("grid resolution must be at least 2"));
    }
    let d = model.dim();
    let step = 8.0 / (resolution - 1) as f64;
    let axis: Vec<f64> = (0..resolution).map(|i| -4.0 + i as f64 * step).collect();
    let mut z = Vec::with_capacity(resolution.pow(d as u32) * d);
    if d == 1 {
        z.extend(axis.iter().map(|&v| R::lit(v)));
    } else {
        for &y in &axis {
            for &x in &axis {
                z.push(R::lit(x));
                z.push(R::lit(y));
            }
        }
    }
    let (_, det) = model.transform_batch(&z, cond)?;
    let min_det = det.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min);
    let negative = det.iter().filter(|v| v.as_f64() < 0.0).count();
    Ok(Injectivity { min_det, negative_fraction: negative as f64 / det.len() as f64 })
}
