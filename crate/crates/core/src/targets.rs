//! Priors, conditions and unnormalized target densities.
//!
//! 2D targets live on the open unit disk of projected-hemisphere coordinates:
//! a point `u` stands for the direction `(u_x, u_y, sqrt(1 - |u|²))`, and
//! area on the disk equals projected solid angle, so densities here already
//! include the cosine factor.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng;
use num_traits::{Float, FloatConst, One};

use crate::scalar::{Dual, Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    StdNormal,
    Uniform,
}

/// The easy-to-sample base distribution `q(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior<R> {
    pub kind: PriorKind,
    pub dim: usize,
    /// Box bounds, used by [`PriorKind::Uniform`] only.
    pub lo: R,
    pub hi: R,
}

/// Samples `z` (row-major, `n × dim`) with their prior densities.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBatch<R> {
    pub dim: usize,
    pub z: Vec<R>,
    pub q: Vec<R>,
}

impl<R: Real> PriorBatch<R> {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn point(&self, i: usize) -> &[R] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }
}

impl<R: Real> Prior<R> {
    pub fn std_normal(dim: usize) -> Self {
        Prior { kind: PriorKind::StdNormal, dim, lo: -R::one(), hi: R::one() }
    }

    pub fn uniform(dim: usize, lo: R, hi: R) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid("uniform prior needs lo < hi"));
        }
        Ok(Prior { kind: PriorKind::Uniform, dim, lo, hi })
    }

    pub fn pdf(&self, z: &[R]) -> R {
        match self.kind {
            PriorKind::StdNormal => {
                let norm = (R::TAU()).sqrt().recip();
                z.iter().fold(R::one(), |acc, &x| acc * norm * (-x * x / R::lit(2.0)).exp())
            }
            PriorKind::Uniform => {
                if z.iter().all(|&x| x >= self.lo && x <= self.hi) {
                    (self.hi - self.lo).powi(self.dim as i32).recip()
                } else {
                    R::zero()
                }
            }
        }
    }

    /// Fill `out` (length a multiple of `dim`) with prior draws.
    pub fn fill<G: Rng>(&self, rng: &mut G, out: &mut [R]) {
        match self.kind {
            PriorKind::StdNormal => {
                for v in out.iter_mut() {
                    let x: f64 = rng.sample(StandardNormal);
                    *v = R::lit(x);
                }
            }
            PriorKind::Uniform => {
                let (lo, hi) = (self.lo.as_f64(), self.hi.as_f64());
                for v in out.iter_mut() {
                    *v = R::lit(rng.random_range(lo..hi));
                }
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> PriorBatch<R> {
        let mut g = rng::stream(seed, &[0x70_7269_6f72]);
        let mut z = vec![R::zero(); n * self.dim];
        self.fill(&mut g, &mut z);
        let q = z.chunks(self.dim).map(|p| self.pdf(p)).collect();
        PriorBatch { dim: self.dim, z, q }
    }
}

/// Conditioning input: the outgoing direction on the unit disk, or nothing.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Condition<R> {
    pub omega_o: Option<[R; 2]>,
}

impl<R: Real> Condition<R> {
    pub fn none() -> Self {
        Condition { omega_o: None }
    }

    pub fn at(x: R, y: R) -> Result<Self> {
        if x * x + y * y > R::one() {
            return Err(Error::Domain(format!("condition ({x}, {y}) outside the unit disk")));
        }
        Ok(Condition { omega_o: Some([x, y]) })
    }

    pub fn as_slice(&self) -> &[R] {
        match &self.omega_o {
            Some(v) => v,
            None => &[],
        }
    }
}

/// Uniform draw on the unit disk (area measure).
pub fn sample_condition_with<R: Real, G: Rng>(rng: &mut G) -> Condition<R> {
    let r = rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    Condition { omega_o: Some([R::lit(r * phi.cos()), R::lit(r * phi.sin())]) }
}

pub fn sample_condition<R: Real>(seed: u64) -> Condition<R> {
    sample_condition_with(&mut rng::stream(seed, &[0x636f_6e64]))
}

/// Tabulated non-negative values over `[-1, 1]²`, sampled at cell centers.
/// Row `r` sits at `y = -1 + (r + 0.5)·2/rows`, column `c` at the matching `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<R> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<R>,
}

impl<R: Real> Grid<R> {
    pub fn new(rows: usize, cols: usize, values: Vec<R>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(invalid("grid needs at least 2 rows and 2 columns"));
        }
        if values.len() != rows * cols {
            return Err(Error::Format(format!("grid expects {} values, found {}", rows * cols, values.len())));
        }
        if values.iter().any(|v| !(*v >= R::zero()) || !v.is_finite()) {
            return Err(Error::Format("grid values must be finite and non-negative".into()));
        }
        Ok(Grid { rows, cols, values })
    }

    /// Parse `"rows cols"` followed by row-major whitespace-separated values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tok = text.split_whitespace();
        let mut dim = |what: &str| -> Result<usize> {
            tok.next()
                .ok_or_else(|| Error::Format(format!("grid header missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("grid {what}: {e}")))
        };
        let rows = dim("rows")?;
        let cols = dim("cols")?;
        let values = tok
            .map(|t| t.parse::<f64>().map(R::lit).map_err(|e| Error::Format(format!("grid value `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn at(&self, r: usize, c: usize) -> R {
        self.values[r * self.cols + c]
    }

    fn axis<S: Scalar<Real = R>>(x: S, n: usize) -> (usize, S) {
        let half = R::lit(0.5);
        let f = (x + S::one()) * S::cst(half * R::from_usize_lossy(n)) - S::cst(half);
        let max = R::from_usize_lossy(n - 1);
        if f.re() <= R::zero() {
            (0, S::zero())
        } else if f.re() >= max {
            (n - 2, S::one())
        } else {
            let i = f.re().floor().to_usize().unwrap().min(n - 2);
            (i, f - S::cst(R::from_usize_lossy(i)))
        }
    }

    /// Bilinear interpolation between cell centers, clamped at the border.
    pub fn interpolate<S: Scalar<Real = R>>(&self, x: S, y: S) -> S {
        let (c, tx) = Self::axis(x, self.cols);
        let (r, ty) = Self::axis(y, self.rows);
        let one = S::one();
        let v00 = S::cst(self.at(r, c));
        let v01 = S::cst(self.at(r, c + 1));
        let v10 = S::cst(self.at(r + 1, c));
        let v11 = S::cst(self.at(r + 1, c + 1));
        (v00 * (one - tx) + v01 * tx) * (one - ty) + (v10 * (one - tx) + v11 * tx) * ty
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind<R> {
    /// Mixture of normals on the real line.
    GaussMix1D { weights: Vec<R>, means: Vec<R>, stds: Vec<R> },
    /// Isotropic GGX microfacet reflectance on the projected hemisphere,
    /// conditioned on the outgoing direction.
    GgxDisk2D { roughness: R, f0: R },
    /// Bilinearly interpolated table on the disk.
    Grid2D { grid: Grid<R> },
    /// Two compact C¹ bumps `(1 - t²)²` of half-width `width`, separated by
    /// an exactly-zero gap of length `gap` centred on the origin.
    DisconnectedBimodal1D { gap: R, width: R },
}

/// An unnormalized density `f(u | cond)` plus a floor `floor_eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDensity<R> {
    pub kind: TargetKind<R>,
    pub floor_eps: R,
}

/// Result of [`TargetDensity::quadrature_integral`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature<R> {
    pub value: R,
    /// Relative change against the same rule at half the resolution.
    pub rel_change: R,
}

pub const DEFAULT_FLOOR: f64 = 1e-7;

impl<R: Real> TargetDensity<R> {
    pub fn gauss_mix(weights: Vec<R>, means: Vec<R>, stds: Vec<R>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
            return Err(invalid("mixture weights, means and stds must have equal non-zero length"));
        }
        if weights.iter().any(|w| *w < R::zero()) || stds.iter().any(|s| !(*s > R::zero())) {
            return Err(invalid("mixture weights must be non-negative and stds positive"));
        }
        Ok(TargetDensity { kind: TargetKind::GaussMix1D { weights, means, stds }, floor_eps: R::lit(DEFAULT_FLOOR) })
    }

    pub fn ggx(roughness: R, f0: R) -> Result<Self> {
        if !(roughness > R::zero() && roughness <= R::one()) {
            return Err(invalid("GGX roughness must lie in (0, 1]"));
        }
        if !(f0 >= R::zero() && f0 <= R::one()) {
            return Err(invalid("Fresnel F0 must lie in [0, 1]"));
        }
        Ok(TargetDensity { kind: TargetKind::GgxDisk2D { roughness, f0 }, floor_eps: R::lit(DEFAULT_FLOOR) })
    }

    pub fn grid(grid: Grid<R>) -> Self {
        TargetDensity { kind: TargetKind::Grid2D { grid }, floor_eps: R::lit(DEFAULT_FLOOR) }
    }

    pub fn bimodal(gap: R, width: R) -> Result<Self> {
        if !(gap > R::zero() && width > R::zero()) {
            return Err(invalid("bimodal gap and width must be positive"));
        }
        Ok(TargetDensity { kind: TargetKind::DisconnectedBimodal1D { gap, width }, floor_eps: R::zero() })
    }

    pub fn with_floor(mut self, floor_eps: R) -> Self {
        self.floor_eps = floor_eps;
        self
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            TargetKind::GaussMix1D { .. } | TargetKind::DisconnectedBimodal1D { .. } => 1,
            TargetKind::GgxDisk2D { .. } | TargetKind::Grid2D { .. } => 2,
        }
    }

    /// Whether the density depends on the outgoing direction.
    pub fn is_conditional(&self) -> bool {
        matches!(self.kind, TargetKind::GgxDisk2D { .. })
    }

    /// Centres of the two bimodal supports, if this is the bimodal target.
    pub fn mode_centers(&self) -> Option<[R; 2]> {
        match self.kind {
            TargetKind::DisconnectedBimodal1D { gap, width } => {
                let c = gap / R::lit(2.0) + width;
                Some([-c, c])
            }
            _ => None,
        }
    }

    /// Integration interval for 1D targets covering all but a negligible tail.
    pub fn line_bounds(&self) -> (R, R) {
        match &self.kind {
            TargetKind::GaussMix1D { means, stds, .. } => {
                let m = means.iter().fold(R::zero(), |a, &b| a.max(b.abs()));
                let s = stds.iter().fold(R::zero(), |a, &b| a.max(b));
                let b = m + R::lit(8.0) * s;
                (-b, b)
            }
            TargetKind::DisconnectedBimodal1D { gap, width } => {
                let b = *gap / R::lit(2.0) + R::lit(2.0) * *width;
                (-b, b)
            }
            _ => (-R::one(), R::one()),
        }
    }

    fn check_domain(&self, u: &[R]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(invalid(format!("point has {} coordinates, target is {}D", u.len(), self.dim())));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite point".into()));
        }
        if self.dim() == 2 && u[0] * u[0] + u[1] * u[1] >= R::one() {
            return Err(Error::Domain(format!("({}, {}) is not inside the open unit disk", u[0], u[1])));
        }
        Ok(())
    }

    fn check_condition(&self, cond: &Condition<R>) -> Result<()> {
        if self.is_conditional() && cond.omega_o.is_none() {
            return Err(invalid("conditional target evaluated without an outgoing direction"));
        }
        Ok(())
    }

    /// Density including the floor, without domain checks. Points on or past
    /// the disk rim are evaluated at the rim.
    pub fn density<S: Scalar<Real = R>>(&self, u: &[S], cond: &Condition<R>) -> S {
        let raw = match &self.kind {
            TargetKind::GaussMix1D { weights, means, stds } => {
                let norm = R::TAU().sqrt().recip();
                let mut acc = S::zero();
                for ((&w, &m), &s) in weights.iter().zip(means).zip(stds) {
                    let t = (u[0] - S::cst(m)) * S::cst(s.recip());
                    acc = acc + S::cst(w * norm / s) * (-(t * t) * S::lit(0.5)).exp();
                }
                acc
            }
            TargetKind::DisconnectedBimodal1D { gap, width } => {
                let c = *gap / R::lit(2.0) + *width;
                let mut acc = S::zero();
                for centre in [-c, c] {
                    let t = (u[0] - S::cst(centre)) * S::cst(width.recip());
                    if t.re().abs() < R::one() {
                        let b = S::one() - t * t;
                        acc = acc + b * b;
                    }
                }
                acc
            }
            TargetKind::GgxDisk2D { roughness, f0 } => {
                let o = cond.omega_o.unwrap_or([R::zero(), R::zero()]);
                ggx_reflectance(u[0], u[1], o, *roughness, *f0)
            }
            TargetKind::Grid2D { grid } => grid.interpolate(u[0], u[1]),
        };
        raw + S::cst(self.floor_eps)
    }

    /// Checked density value.
    pub fn eval(&self, u: &[R], cond: &Condition<R>) -> Result<R> {
        self.check_domain(u)?;
        self.check_condition(cond)?;
        Ok(self.density(u, cond))
    }

    /// Density and its gradient in `u` (second entry unused in 1D), exact via
    /// forward-mode duals.
    pub fn eval_density_with_grad(&self, u: &[R], cond: &Condition<R>) -> Result<(R, [R; 2])> {
        self.check_domain(u)?;
        self.check_condition(cond)?;
        Ok(self.value_grad_unchecked(u, cond))
    }

    pub(crate) fn value_grad_unchecked(&self, u: &[R], cond: &Condition<R>) -> (R, [R; 2]) {
        if self.dim() == 1 {
            let f = self.density(&[Dual::<R, 1>::var(u[0], 0)], cond);
            (f.re, [f.du[0], R::zero()])
        } else {
            let f = self.density(&[Dual::<R, 2>::var(u[0], 0), Dual::var(u[1], 1)], cond);
            (f.re, f.du)
        }
    }

    /// Midpoint-rule integral of `weight(u)·f(u)` over the domain.
    ///
    /// 1D integrates over [`line_bounds`](Self::line_bounds) with `resolution`
    /// cells. 2D uses a polar grid on the disk with the radial coordinate
    /// written as `r = sin ψ`, which absorbs the `sqrt(1 - r²)` behaviour of
    /// hemisphere densities at the rim.
    pub fn quadrature_integral(
        &self,
        cond: &Condition<R>,
        weight: Option<&dyn Fn(&[R]) -> R>,
        resolution: usize,
    ) -> Result<Quadrature<R>> {
        if resolution < 64 {
            return Err(invalid("quadrature resolution must be at least 64"));
        }
        self.check_condition(cond)?;
        let integrand = |u: &[R]| {
            let f = self.density(u, cond);
            match weight {
                Some(w) => w(u) * f,
                None => f,
            }
        };
        let run = |res: usize| {
            if self.dim() == 1 {
                let (lo, hi) = self.line_bounds();
                line_quadrature(|x| integrand(&[x]), lo, hi, res)
            } else {
                disk_quadrature(|p| integrand(&p), res)
            }
        };
        let value = run(resolution);
        let coarse = run(resolution / 2);
        let rel_change = if value != R::zero() { ((value - coarse) / value).abs() } else { (value - coarse).abs() };
        Ok(Quadrature { value, rel_change })
    }
}

fn ggx_lambda_over_cos<S: Scalar>(c: S, a2: S::Real) -> S {
    // Smith G1(ω)/cos θ for GGX, finite at grazing angles
    S::lit(2.0) / (c + (S::cst(a2) + S::cst(<S::Real as One>::one() - a2) * c * c).sqrt())
}

/// GGX reflectance `D·F·G1(i)·G1(o) / (4 cos_i cos_o)` at disk point `(ux, uy)`.
fn ggx_reflectance<S: Scalar>(ux: S, uy: S, o: [S::Real; 2], alpha: S::Real, f0: S::Real) -> S {
    let one = S::one();
    let tiny = <S::Real as Real>::lit(1e-14);
    let r2 = ux * ux + uy * uy;
    let mut c2 = one - r2;
    if c2.re() < tiny {
        c2 = S::cst(tiny);
    }
    let cos_i = c2.sqrt();
    let (ox, oy) = (S::cst(o[0]), S::cst(o[1]));
    let cos_o = S::cst(Float::sqrt(Float::max(<S::Real as One>::one() - o[0] * o[0] - o[1] * o[1], tiny)));

    let hx = ux + ox;
    let hy = uy + oy;
    let hz = cos_i + cos_o;
    let h2 = hx * hx + hy * hy + hz * hz;
    let cos_h2 = hz * hz / h2;
    let a2 = alpha * alpha;
    let denom = S::cst(a2 - <S::Real as One>::one()) * cos_h2 + one;
    let d = S::cst(a2 / <S::Real as FloatConst>::PI()) / (denom * denom);

    let i_dot_o = ux * ox + uy * oy + cos_i * cos_o;
    let i_dot_h = (one + i_dot_o) / h2.sqrt();
    let fres = S::cst(f0) + S::cst(<S::Real as One>::one() - f0) * (one - i_dot_h).powi(5);

    d * fres * ggx_lambda_over_cos(cos_i, a2) * ggx_lambda_over_cos(cos_o, a2) * S::lit(0.25)
}

/// Midpoint rule on `[lo, hi]` with `n` cells.
pub fn line_quadrature<R: Real>(f: impl Fn(R) -> R, lo: R, hi: R, n: usize) -> R {
    let h = (hi - lo) / R::from_usize_lossy(n);
    let half = R::lit(0.5);
    (0..n).map(|i| f(lo + (R::from_usize_lossy(i) + half) * h)).sum::<R>() * h
}

/// Polar midpoint rule on the unit disk with `n` cells in `ψ` (`r = sin ψ`)
/// and `n` in angle.
pub fn disk_quadrature<R: Real>(f: impl Fn([R; 2]) -> R, n: usize) -> R {
    let half = R::lit(0.5);
    let dpsi = R::FRAC_PI_2() / R::from_usize_lossy(n);
    let dphi = R::TAU() / R::from_usize_lossy(n);
    let angles: Vec<(R, R)> = (0..n)
        .map(|j| {
            let phi = (R::from_usize_lossy(j) + half) * dphi;
            (phi.cos(), phi.sin())
        })
        .collect();
    let mut total = R::zero();
    for i in 0..n {
        let psi = (R::from_usize_lossy(i) + half) * dpsi;
        let (r, jac) = (psi.sin(), psi.sin() * psi.cos());
        let ring: R = angles.iter().map(|&(c, s)| f([r * c, r * s])).sum();
        total += ring * jac;
    }
    total * dpsi * dphi
}
