use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use super::{Activation, MlpParams};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Recorded batch evaluation with forward-mode input tangents.
///
/// Every per-layer matrix stacks `k + 1` row blocks of height `n`: block 0
/// holds primal values, block `t + 1` the tangent along input `wrt[t]`.
/// Tangent rows share the weights but not the bias, so each layer is a
/// single matrix product over the stacked rows.
#[derive(Clone, Debug)]
pub struct Tape<R> {
    n: usize,
    k: usize,
    input: Array2<R>,
    pre: Vec<Array2<R>>,
    post: Vec<Array2<R>>,
    d1: Vec<Array2<R>>,
    d2: Vec<Array2<R>>,
}

impl<R: Real> Tape<R> {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn num_tangents(&self) -> usize {
        self.k
    }

    /// Primal outputs, `n × out`.
    pub fn output(&self) -> ArrayView2<'_, R> {
        self.post.last().unwrap().slice(s![0..self.n, ..])
    }

    /// Output tangent block `t`, `n × out`.
    pub fn output_tangent(&self, t: usize) -> ArrayView2<'_, R> {
        let start = (t + 1) * self.n;
        self.post.last().unwrap().slice(s![start..start + self.n, ..])
    }
}

impl<R: Real> MlpParams<R> {
    /// Evaluate a batch (`n × in`) and propagate unit tangents for each input
    /// column listed in `wrt`.
    pub fn forward_tape(&self, inputs: ArrayView2<'_, R>, wrt: &[usize]) -> Result<Tape<R>> {
        let (n, d_in) = inputs.dim();
        if d_in != self.input_dim() {
            return Err(invalid(format!("batch has {d_in} columns, network expects {}", self.input_dim())));
        }
        if let Some(&bad) = wrt.iter().find(|&&i| i >= d_in) {
            return Err(invalid(format!("tangent index {bad} out of range for input width {d_in}")));
        }
        let k = wrt.len();
        let rows = (k + 1) * n;
        let mut input = Array2::zeros((rows, d_in));
        input.slice_mut(s![0..n, ..]).assign(&inputs);
        for (t, &col) in wrt.iter().enumerate() {
            input.slice_mut(s![(t + 1) * n..(t + 2) * n, col]).fill(R::one());
        }

        let spec = self.spec();
        let layers = spec.num_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Array2<R>> = Vec::with_capacity(layers);
        let mut d1 = Vec::with_capacity(layers);
        let mut d2 = Vec::with_capacity(layers);

        for l in 0..layers {
            let (w, b) = self.layer(l);
            let d_out = b.len();
            let prev = if l == 0 { &input } else { &post[l - 1] };
            let mut p = Array2::zeros((rows, d_out));
            general_mat_mul(R::one(), prev, &w.t(), R::zero(), &mut p);
            for mut row in p.slice_mut(s![0..n, ..]).outer_iter_mut() {
                for (v, &bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }

            let acts: Vec<Activation> = (0..d_out).map(|j| spec.activation(l, j)).collect();
            let primal = n * d_out;
            let ps = p.as_slice().expect("standard layout");
            let mut av = vec![R::zero(); rows * d_out];
            let mut g1v = vec![R::zero(); primal];
            let mut g2v = vec![R::zero(); primal];
            if acts.iter().all(|&a| a == acts[0]) {
                eval_uniform(acts[0], &ps[..primal], &mut av[..primal], &mut g1v, &mut g2v);
            } else {
                let outs = av[..primal].chunks_exact_mut(d_out).zip(g1v.chunks_exact_mut(d_out)).zip(g2v.chunks_exact_mut(d_out));
                for (pr, ((v, dv), ddv)) in ps[..primal].chunks_exact(d_out).zip(outs) {
                    for j in 0..d_out {
                        (v[j], dv[j], ddv[j]) = acts[j].eval3(pr[j]);
                    }
                }
            }
            for t in 1..=k {
                let block = &mut av[t * primal..(t + 1) * primal];
                for ((out, &pv), &dv) in block.iter_mut().zip(&ps[t * primal..(t + 1) * primal]).zip(&g1v) {
                    *out = dv * pv;
                }
            }
            let a = Array2::from_shape_vec((rows, d_out), av).expect("activation shape");
            let g1 = Array2::from_shape_vec((n, d_out), g1v).expect("activation shape");
            let g2 = Array2::from_shape_vec((n, d_out), g2v).expect("activation shape");
            pre.push(p);
            post.push(a);
            d1.push(g1);
            d2.push(g2);
        }
        Ok(Tape { n, k, input, pre, post, d1, d2 })
    }

    /// Accumulate into `grad` the parameter gradient of `Σ upstream ⊙ outputs`,
    /// where `upstream` has the tape's stacked layout (adjoints of primal and
    /// tangent outputs).
    pub fn backward_tape(&self, tape: &Tape<R>, upstream: ArrayView2<'_, R>, grad: &mut [R]) -> Result<()> {
        let (n, k) = (tape.n, tape.k);
        let rows = (k + 1) * n;
        if upstream.dim() != (rows, self.output_dim()) {
            return Err(invalid(format!(
                "upstream shape {:?} does not match tape ({rows}, {})",
                upstream.dim(),
                self.output_dim()
            )));
        }
        if grad.len() != self.len() {
            return Err(invalid("gradient buffer length does not match parameters"));
        }
        let spec = self.spec();
        let mut g = upstream.to_owned();
        for l in (0..spec.num_layers()).rev() {
            let (w, b) = self.layer(l);
            let d_out = b.len();
            let p = &tape.pre[l];
            let (g1, g2) = (&tape.d1[l], &tape.d2[l]);
            let all_identity = (0..d_out).all(|j| spec.activation(l, j) == Activation::Identity);
            if !all_identity {
                let primal = n * d_out;
                let gs = g.as_slice_mut().expect("standard layout");
                let ps = p.as_slice().expect("standard layout");
                let (g1s, g2s) = (g1.as_slice().expect("standard layout"), g2.as_slice().expect("standard layout"));
                let (head, tail) = gs.split_at_mut(primal);
                for (gv, &dv) in head.iter_mut().zip(g1s) {
                    *gv *= dv;
                }
                for t in 0..k {
                    let block = &mut tail[t * primal..(t + 1) * primal];
                    let pb = &ps[(t + 1) * primal..(t + 2) * primal];
                    for ((((gt, &pt), gp), &dv), &ddv) in block.iter_mut().zip(pb).zip(head.iter_mut()).zip(g1s).zip(g2s) {
                        *gp += *gt * ddv * pt;
                        *gt *= dv;
                    }
                }
            }

            let prev = if l == 0 { &tape.input } else { &tape.post[l - 1] };
            let d_in = prev.ncols();
            let off = self.offset(l);
            {
                let mut gw = ArrayViewMut2::from_shape((d_out, d_in), &mut grad[off..off + d_out * d_in])
                    .expect("weight block");
                general_mat_mul(R::one(), &g.t(), prev, R::one(), &mut gw);
            }
            let gb = &mut grad[off + d_out * d_in..off + d_out * d_in + d_out];
            for row in g.as_slice().expect("standard layout")[..n * d_out].chunks_exact(d_out) {
                for (dst, &v) in gb.iter_mut().zip(row) {
                    *dst += v;
                }
            }
            if l > 0 {
                let mut next = Array2::zeros((rows, d_in));
                general_mat_mul(R::one(), &g, &w, R::zero(), &mut next);
                g = next;
            }
        }
        Ok(())
    }
}

/// Apply one activation to every entry, with the variant dispatched once.
fn eval_uniform<R: Real>(act: Activation, x: &[R], v: &mut [R], d1: &mut [R], d2: &mut [R]) {
    #[inline(always)]
    fn run<R: Real>(x: &[R], v: &mut [R], d1: &mut [R], d2: &mut [R], f: impl Fn(R) -> (R, R, R)) {
        for (((&xi, a), b), c) in x.iter().zip(v.iter_mut()).zip(d1.iter_mut()).zip(d2.iter_mut()) {
            (*a, *b, *c) = f(xi);
        }
    }
    match act {
        Activation::Identity => run(x, v, d1, d2, |t| Activation::Identity.eval3(t)),
        Activation::Silu => run(x, v, d1, d2, |t| Activation::Silu.eval3(t)),
        Activation::Relu => run(x, v, d1, d2, |t| Activation::Relu.eval3(t)),
        Activation::Exp => run(x, v, d1, d2, |t| Activation::Exp.eval3(t)),
        Activation::Softplus => run(x, v, d1, d2, |t| Activation::Softplus.eval3(t)),
    }
}
