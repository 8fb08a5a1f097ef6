//! Scalar abstractions.
//!
//! [`Real`] is the storage type for parameters and samples (`f32` or `f64`).
//! [`Scalar`] is anything the density and output-map code can be evaluated
//! over: a plain [`Real`] or a forward-mode [`Dual`] number built on top of
//! one. Duals nest, so `Dual<Dual<f64, 9>, 2>` carries second-order mixed
//! derivatives.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, One, ToPrimitive, Zero};

/// Floating-point storage type.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A differentiable scalar.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    type Real: Real;

    /// Lift a constant (zero derivative).
    fn cst(x: Self::Real) -> Self;
    /// The value part, stripped of all derivative information.
    fn re(&self) -> Self::Real;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::cst(<Self::Real as Real>::lit(x))
    }

    #[inline]
    fn zero() -> Self {
        Self::cst(<Self::Real as Zero>::zero())
    }

    #[inline]
    fn one() -> Self {
        Self::cst(<Self::Real as One>::one())
    }

    #[inline]
    fn recip(self) -> Self {
        Self::one() / self
    }

    #[inline]
    fn sq(self) -> Self {
        self * self
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl<R: Real> Scalar for R {
    type Real = R;
    #[inline]
    fn cst(x: R) -> R {
        x
    }
    #[inline]
    fn re(&self) -> R {
        *self
    }
    #[inline]
    fn exp(self) -> R {
        Float::exp(self)
    }
    #[inline]
    fn ln(self) -> R {
        Float::ln(self)
    }
    #[inline]
    fn sqrt(self) -> R {
        Float::sqrt(self)
    }
    #[inline]
    fn sin(self) -> R {
        Float::sin(self)
    }
    #[inline]
    fn cos(self) -> R {
        Float::cos(self)
    }
}

/// Forward-mode dual number with `N` tangent directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S, const N: usize> {
    pub re: S,
    pub du: [S; N],
}

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn constant(re: S) -> Self {
        Dual { re, du: [S::zero(); N] }
    }

    /// A variable seeded along tangent direction `k`.
    pub fn var(re: S, k: usize) -> Self {
        let mut du = [S::zero(); N];
        du[k] = S::one();
        Dual { re, du }
    }

    #[inline]
    fn chain(self, value: S, deriv: S) -> Self {
        Dual { re: value, du: self.du.map(|d| d * deriv) }
    }
}

impl<S: Scalar, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du) {
            *a = *a + b;
        }
        Dual { re: self.re + rhs.re, du }
    }
}

impl<S: Scalar, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du) {
            *a = *a - b;
        }
        Dual { re: self.re - rhs.re, du }
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du) {
            *a = *a * rhs.re + self.re * b;
        }
        Dual { re: self.re * rhs.re, du }
    }
}

impl<S: Scalar, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.re.recip();
        let q = self.re * inv;
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du) {
            *a = (*a - q * b) * inv;
        }
        Dual { re: q, du }
    }
}

impl<S: Scalar, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual { re: -self.re, du: self.du.map(|d| -d) }
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    type Real = S::Real;

    #[inline]
    fn cst(x: S::Real) -> Self {
        Dual::constant(S::cst(x))
    }

    #[inline]
    fn re(&self) -> S::Real {
        self.re.re()
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    #[inline]
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, (s + s).recip())
    }

    #[inline]
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }

    #[inline]
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
}

/// Logistic sigmoid via `e^{-|x|}`, which never overflows.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    let neg = x.re() < <S::Real as Zero>::zero();
    let e = if neg { x.exp() } else { (-x).exp() };
    let r = (S::one() + e).recip();
    if neg {
        e * r
    } else {
        r
    }
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x.re() > <S::Real as Zero>::zero() {
        x + (S::one() + (-x).exp()).ln()
    } else {
        (S::one() + x.exp()).ln()
    }
}

#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    if x.re() > <S::Real as Zero>::zero() {
        x
    } else {
        S::zero()
    }
}
