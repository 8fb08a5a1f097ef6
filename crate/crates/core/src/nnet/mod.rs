//! A deliberately small dense-MLP engine.
//!
//! Two evaluation paths exist. [`MlpParams::forward`] is generic over
//! [`Scalar`] and runs one sample at a time, so feeding it [`Dual`](crate::Dual)
//! inputs yields exact input derivatives. [`MlpParams::forward_tape`] runs a
//! batch and carries `k` input tangents alongside the primal rows; its
//! companion [`MlpParams::backward_tape`] reverse-differentiates through both,
//! which is what the Jacobian-determinant losses need.

mod adam;
mod tape;

pub use adam::{clip_global_norm, AdamState};
pub use tape::Tape;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use num_traits::FloatConst;

use crate::scalar::{relu, sigmoid, silu, softplus, Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Silu,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Exp,
    /// Softplus on the final output component only.
    SoftplusLast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Standard,
    /// Zero final layer: the network outputs exactly zero, so a model that
    /// adds its input back (skip connection) starts as the identity map.
    Identity,
}

/// Elementwise nonlinearity applied to one pre-activation column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
    Relu,
    Exp,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => x,
            Activation::Silu => silu(x),
            Activation::Relu => relu(x),
            Activation::Exp => x.exp(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Value, first and second derivative. ReLU uses derivative 0 at 0.
    #[inline]
    pub fn eval3<R: Real>(self, x: R) -> (R, R, R) {
        let one = R::one();
        match self {
            Activation::Identity => (x, one, R::zero()),
            Activation::Silu => {
                // e^{-x} may overflow to +inf, which cleanly yields s = 0
                let s = (one + (-x).exp()).recip();
                let t = one - s;
                (x * s, s * (one + x * t), s * t * (one + one + x * (t - s)))
            }
            Activation::Relu => {
                if x > R::zero() {
                    (x, one, R::zero())
                } else {
                    (R::zero(), R::zero(), R::zero())
                }
            }
            Activation::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                (softplus(x), s, s * (one - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, output width last.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub init: Init,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        init: Init,
    ) -> Result<Self> {
        let spec = MlpSpec { layer_sizes, hidden_activation, output_activation, init };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(invalid("an MLP needs at least one hidden layer"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Activation of `col` in layer `layer`.
    pub fn activation(&self, layer: usize, col: usize) -> Activation {
        if layer + 1 < self.num_layers() {
            return match self.hidden_activation {
                HiddenActivation::Silu => Activation::Silu,
                HiddenActivation::Relu => Activation::Relu,
            };
        }
        match self.output_activation {
            OutputActivation::None => Activation::Identity,
            OutputActivation::Exp => Activation::Exp,
            OutputActivation::SoftplusLast if col + 1 == self.output_dim() => Activation::Softplus,
            OutputActivation::SoftplusLast => Activation::Identity,
        }
    }
}

/// Flat parameter vector plus its architecture.
///
/// Layout per layer, layers in order: weights of shape `(out, in)` row-major,
/// then `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<R> {
    spec: MlpSpec,
    values: Vec<R>,
    offsets: Vec<usize>,
}

impl<R: Real> MlpParams<R> {
    pub fn from_values(spec: MlpSpec, values: Vec<R>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.num_params() {
            return Err(invalid(format!(
                "parameter vector has {} entries, architecture needs {}",
                values.len(),
                spec.num_params()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        let mut offsets = Vec::with_capacity(spec.num_layers());
        let mut off = 0;
        for w in spec.layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Ok(MlpParams { spec, values, offsets })
    }

    /// Initialize according to `spec.init`. Deterministic in `seed`.
    ///
    /// Weights are uniform in `±gain·sqrt(3/fan_in)` (gain 1 for SiLU,
    /// sqrt 2 for ReLU); biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = match spec.hidden_activation {
            HiddenActivation::Silu => 1.0,
            HiddenActivation::Relu => std::f64::consts::SQRT_2,
        };
        let last = spec.num_layers() - 1;
        let mut values = Vec::with_capacity(spec.num_params());
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let zero_layer = l == last && spec.init == Init::Identity;
            let wb = gain * (3.0 / fan_in as f64).sqrt();
            let bb = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let v: f64 = rng.random_range(-wb..wb);
                values.push(if zero_layer { R::zero() } else { R::lit(v) });
            }
            for _ in 0..fan_out {
                let v: f64 = rng.random_range(-bb..bb);
                values.push(if zero_layer { R::zero() } else { R::lit(v) });
            }
        }
        Self::from_values(spec, values)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    /// Mutable access for optimizers. Length is fixed by the architecture.
    pub fn values_mut(&mut self) -> &mut [R] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Offset of layer `l`'s weight block.
    pub(crate) fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// `(weights (out, in), biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, R>, &[R]) {
        let (fan_in, fan_out) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
        let off = self.offsets[l];
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.values[off..off + fan_in * fan_out])
            .expect("layer shape");
        let b = &self.values[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    /// Single-sample evaluation over any scalar type.
    pub fn forward<S: Scalar<Real = R>>(&self, input: &[S]) -> Result<Vec<S>> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut x: Vec<S> = input.to_vec();
        for l in 0..self.spec.num_layers() {
            let (w, b) = self.layer(l);
            let mut y = Vec::with_capacity(b.len());
            for (j, row) in w.outer_iter().enumerate() {
                let mut acc = S::cst(b[j]);
                for (&wji, &xi) in row.iter().zip(&x) {
                    acc = acc + xi * S::cst(wji);
                }
                y.push(self.spec.activation(l, j).apply(acc));
            }
            x = y;
        }
        Ok(x)
    }

    /// Output plus the Jacobian `d out / d input[wrt]`, shape `out × wrt.len()`
    /// stored row-major.
    pub fn forward_with_input_jacobian(&self, input: &[R], wrt: &[usize]) -> Result<(Vec<R>, Vec<R>)> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        let tape = self.forward_tape(x, wrt)?;
        let out = tape.output().row(0).to_vec();
        let d_out = self.output_dim();
        let mut jac = vec![R::zero(); d_out * wrt.len()];
        for k in 0..wrt.len() {
            let t = tape.output_tangent(k);
            for j in 0..d_out {
                jac[j * wrt.len() + k] = t[[0, j]];
            }
        }
        Ok((out, jac))
    }

    /// Parameter gradient of `upstream · forward(input)`.
    pub fn backward(&self, input: &[R], upstream: &[R]) -> Result<Vec<R>> {
        if input.len() != self.input_dim() {
            return Err(invalid("input length does not match network"));
        }
        if upstream.len() != self.output_dim() {
            return Err(invalid("upstream length does not match network output"));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        let tape = self.forward_tape(x, &[])?;
        let g = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row");
        let mut grad = vec![R::zero(); self.len()];
        self.backward_tape(&tape, g, &mut grad)?;
        Ok(grad)
    }
}

/// NeRF-style encoding: the raw vector followed by, for each frequency
/// `k = 0..num_freqs` and each component `j`, `sin(2^k π v_j), cos(2^k π v_j)`.
pub fn positional_encode<S: Scalar>(v: &[S], num_freqs: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(encoded_len(v.len(), Some(num_freqs)));
    out.extend_from_slice(v);
    let pi = <S::Real as FloatConst>::PI();
    for k in 0..num_freqs {
        let freq = S::cst(pi * <S::Real as Real>::lit((1u64 << k) as f64));
        for &x in v {
            let a = x * freq;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

pub fn encoded_len(dim: usize, num_freqs: Option<usize>) -> usize {
    match num_freqs {
        Some(f) => dim * (1 + 2 * f),
        None => dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    fn linear_identity() -> MlpParams<f64> {
        // 2 -> 2 -> 2, both layers identity weights; hidden SiLU is replaced by
        // checking only the final linear layer in the tests that need it.
        let spec = MlpSpec::new(vec![2, 2, 2], HiddenActivation::Silu, OutputActivation::None, Init::Standard)
            .unwrap();
        MlpParams::from_values(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn param_count_and_layout() {
        let spec = MlpSpec::new(vec![3, 16, 16, 2], HiddenActivation::Silu, OutputActivation::None, Init::Standard)
            .unwrap();
        assert_eq!(spec.num_params(), 3 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2);
        let p = MlpParams::<f64>::init(spec, 1).unwrap();
        let (w, b) = p.layer(1);
        assert_eq!(w.dim(), (16, 16));
        assert_eq!(b.len(), 16);
        assert_eq!(w[[0, 0]], p.values()[3 * 16 + 16]);
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        assert!(MlpSpec::new(vec![2, 2], HiddenActivation::Silu, OutputActivation::None, Init::Standard).is_err());
        assert!(MlpSpec::new(vec![2, 0, 2], HiddenActivation::Silu, OutputActivation::None, Init::Standard).is_err());
        let p = linear_identity();
        assert!(p.forward(&[1.0]).is_err());
        assert!(p.backward(&[1.0, 2.0], &[1.0]).is_err());
        assert!(p.forward_with_input_jacobian(&[1.0, 2.0, 3.0], &[0]).is_err());
    }

    #[test]
    fn silu_unit_values() {
        let spec = MlpSpec::new(vec![1, 1, 1], HiddenActivation::Silu, OutputActivation::None, Init::Standard)
            .unwrap();
        let p = MlpParams::from_values(spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[0.0]).unwrap(), vec![0.0]);
        let y = p.forward(&[1.0]).unwrap()[0];
        assert!((y - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((y - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn linear_output_layer_jacobian_is_weights() {
        // hidden ReLU with positive inputs is linear, so the whole net is W2·W1
        let spec = MlpSpec::new(vec![2, 2, 2], HiddenActivation::Relu, OutputActivation::None, Init::Standard)
            .unwrap();
        let vals = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, -1.0, 0.5, 3.0, 0.0, 0.0];
        let p = MlpParams::from_values(spec, vals).unwrap();
        let (out, jac) = p.forward_with_input_jacobian(&[1.0, 2.0], &[0, 1]).unwrap();
        assert_eq!(out, vec![0.0, 6.5]);
        assert_eq!(jac, vec![2.0, -1.0, 0.5, 3.0]);
        let (_, jac0) = p.forward_with_input_jacobian(&[1.0, 2.0], &[1]).unwrap();
        assert_eq!(jac0, vec![-1.0, 3.0]);
    }

    #[test]
    fn dual_forward_matches_tape_jacobian() {
        let spec = MlpSpec::new(vec![3, 16, 16, 3], HiddenActivation::Silu, OutputActivation::SoftplusLast, Init::Standard)
            .unwrap();
        let p = MlpParams::<f64>::init(spec, 9).unwrap();
        let x = [0.3, -0.7, 0.2];
        let xd = [Dual::<f64, 2>::var(x[0], 0), Dual::var(x[1], 1), Dual::constant(x[2])];
        let yd = p.forward(&xd).unwrap();
        let (y, jac) = p.forward_with_input_jacobian(&x, &[0, 1]).unwrap();
        for j in 0..3 {
            assert!((yd[j].re - y[j]).abs() < 1e-14);
            for k in 0..2 {
                assert!((yd[j].du[k] - jac[j * 2 + k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn scalar_linear_backward() {
        // y = w2 * silu(w1 x) with w1 = 1 — use ReLU and x > 0 to make it linear: y = w x
        let spec = MlpSpec::new(vec![1, 1, 1], HiddenActivation::Relu, OutputActivation::None, Init::Standard)
            .unwrap();
        let p = MlpParams::from_values(spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let g = p.backward(&[3.0], &[1.0]).unwrap();
        // dL/dw1 = w2 * x = 3, dL/db1 = w2 = 1, dL/dw2 = h = 3, dL/db2 = 1
        assert_eq!(g, vec![3.0, 1.0, 3.0, 1.0]);
        let z = p.backward(&[3.0], &[0.0]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positional_encoding_examples() {
        let e = positional_encode(&[0.0f64], 4);
        assert_eq!(e, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e = positional_encode(&[0.5f64], 1);
        assert_eq!(e.len(), 3);
        assert!((e[1] - 1.0).abs() < 1e-15 && e[2].abs() < 1e-15);
        assert_eq!(positional_encode(&[0.25f64, -0.5], 0), vec![0.25, -0.5]);
        assert_eq!(positional_encode(&[0.1f64, 0.2], 4).len(), encoded_len(2, Some(4)));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::new(vec![2, 16, 16, 2], HiddenActivation::Silu, OutputActivation::None, Init::Standard)
            .unwrap();
        let a = MlpParams::<f64>::init(spec.clone(), 42).unwrap();
        let b = MlpParams::<f64>::init(spec.clone(), 42).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| v.abs() < 2.0));
        let one_d = MlpSpec::new(vec![1, 16, 16, 1], HiddenActivation::Silu, OutputActivation::None, Init::Standard)
            .unwrap();
        assert!(MlpParams::<f64>::init(one_d, 3).unwrap().values().iter().all(|v| v.abs() < 2.0));
    }

    #[test]
    fn identity_init_zeroes_last_layer() {
        let spec = MlpSpec::new(vec![1, 16, 16, 1], HiddenActivation::Silu, OutputActivation::None, Init::Identity)
            .unwrap();
        let p = MlpParams::<f64>::init(spec, 5).unwrap();
        for z in [-3.0, -0.5, 0.0, 0.37, 2.0] {
            assert_eq!(p.forward(&[z]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let spec = MlpSpec::new(vec![2, 8, 1], HiddenActivation::Silu, OutputActivation::Exp, Init::Standard).unwrap();
        let p64 = MlpParams::<f64>::init(spec.clone(), 2).unwrap();
        let p32 = MlpParams::<f32>::from_values(spec, p64.values().iter().map(|&v| v as f32).collect()).unwrap();
        let a = p64.forward(&[0.1, 0.2]).unwrap()[0];
        let b = p32.forward(&[0.1f32, 0.2]).unwrap()[0];
        assert!((a - b as f64).abs() < 1e-5);
    }
}
