use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Adam moments plus the hyper-parameters used for every step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub t: u64,
    pub learning_rate: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
    /// Global L2 norm bound applied to the raw gradient before the update.
    pub max_grad_norm: Option<R>,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize, learning_rate: R, max_grad_norm: Option<R>) -> Result<Self> {
        if !(learning_rate > R::zero()) {
            return Err(invalid("learning rate must be positive"));
        }
        if let Some(c) = max_grad_norm {
            if !(c > R::zero()) {
                return Err(invalid("max_grad_norm must be positive"));
            }
        }
        Ok(AdamState {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            t: 0,
            learning_rate,
            beta1: R::lit(0.9),
            beta2: R::lit(0.999),
            eps: R::lit(1e-8),
            max_grad_norm,
        })
    }

    /// One bias-corrected Adam update. `grads` is consumed as scratch (it is
    /// rescaled in place when clipping is active).
    pub fn step(&mut self, params: &mut [R], grads: &mut [R]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid("optimizer, parameter and gradient lengths differ"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.t as usize,
                reason: format!("non-finite gradient entry {i}"),
            });
        }
        if let Some(c) = self.max_grad_norm {
            clip_global_norm(grads, c);
        }
        self.t += 1;
        let t = self.t as i32;
        let one = R::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescale `grads` so its L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm<R: Real>(grads: &mut [R], max_norm: R) -> R {
    let norm = grads.iter().map(|&g| g * g).sum::<R>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::<f64>::new(3, 1e-3, None).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &mut [0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut s = AdamState::<f64>::new(1, 1e-3, None).unwrap();
        let mut p = vec![0.0];
        s.step(&mut p, &mut [0.2]).unwrap();
        // m_hat = g, v_hat = g², update = lr·g/(|g|+eps)
        let expected = 1e-3 * 0.2 / (0.2 + 1e-8);
        assert!((p[0] + expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_gradient_at_twice_the_bound() {
        let mut g = vec![3.0f64, 4.0];
        let before = clip_global_norm(&mut g, 2.5);
        assert_eq!(before, 5.0);
        assert!((g[0] - 1.5).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn clipped_step_sees_scaled_gradient() {
        // m after one step is (1-β1)·g_eff; inspect it to confirm the scale
        let mut s = AdamState::<f64>::new(2, 1e-3, Some(2.5)).unwrap();
        let mut p = vec![0.0, 0.0];
        s.step(&mut p, &mut [3.0, 4.0]).unwrap();
        assert!((s.m[0] - 0.1 * 1.5).abs() < 1e-15);
        assert!((s.m[1] - 0.1 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut s = AdamState::<f64>::new(2, 1e-3, None).unwrap();
        let err = s.step(&mut [0.0, 0.0], &mut [f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert!(AdamState::<f64>::new(2, -1.0, None).is_err());
    }
}
