use crate::error::{Error, Result};
use crate::tensor::Element;

/// Adam optimizer with bias correction. Moments are kept per parameter
/// slot in the order of the first `step` call.
pub struct Adam<E: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(Vec<E>, Vec<E>)>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Defaults used throughout training: lr 1e-3, betas 0.9/0.999, eps 1e-8.
    pub fn default_hparams(lr: f64) -> Self {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one bias-corrected update to every parameter slot.
    /// `params[i]` and `grads[i]` must stay aligned across calls.
    pub fn step(&mut self, params: &mut [&mut [E]], grads: &[&[E]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adam_step: {} parameter slots but {} gradient slots",
                params.len(),
                grads.len()
            )));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![E::zero(); p.len()], vec![E::zero(); p.len()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Contract(
                "adam_step: parameter slot count changed between steps".into(),
            ));
        }
        self.t += 1;
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one = E::one();
        let bc1 = E::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = E::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.moments.iter_mut())
        {
            if p.len() != g.len() {
                return Err(Error::Dim(format!(
                    "adam_step: parameter len {} vs gradient len {}",
                    p.len(),
                    g.len()
                )));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut opt: Adam<f64> = Adam::default_hparams(0.1);
        let mut p = vec![1.5, -0.5];
        let g = vec![0.0, 0.0];
        opt.step(&mut [p.as_mut_slice()], &[g.as_slice()]).unwrap();
        assert_eq!(p, [1.5, -0.5]);
    }

    #[test]
    fn steps_approach_quadratic_minimum() {
        // f(x) = (x-3)^2, grad = 2(x-3), start at 0. The bias-corrected
        // update moves roughly lr per step on a constant-sign gradient, so
        // 29 steps suffice to land within 0.5 of the minimum (recurrence
        // reaches x = 2.52 there); assert strict progress at 20 too.
        let mut opt: Adam<f64> = Adam::default_hparams(0.1);
        let mut x = 0.0f64;
        for t in 0..29 {
            let g = 2.0 * (x - 3.0);
            let mut p = [x];
            opt.step(&mut [&mut p], &[&[g]]).unwrap();
            x = p[0];
            if t == 19 {
                assert!(x > 1.8, "after 20 steps x = {x}");
            }
        }
        assert!((x - 3.0).abs() < 0.5, "x = {x}");
    }

    #[test]
    fn matches_scalar_recurrence() {
        // Independent re-derivation of the update rule as a plain scalar
        // recurrence, compared bitwise against the vectorized path.
        let (lr, b1, b2, eps) = (0.05f64, 0.9, 0.999, 1e-8);
        let grads = [0.4, -1.2, 0.7, 0.0, 2.5];
        let mut opt: Adam<f64> = Adam::new(lr, b1, b2, eps);
        let mut p = [1.0f64];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, &g) in grads.iter().enumerate() {
            opt.step(&mut [&mut p], &[&[g]]).unwrap();
            let tt = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(tt));
            let v_hat = v / (1.0 - b2.powi(tt));
            x -= lr * m_hat / (v_hat.sqrt() + eps);
            assert_eq!(p[0].to_bits(), x.to_bits(), "step {t}");
        }
    }

    #[test]
    fn slot_count_change_is_rejected() {
        let mut opt: Adam<f64> = Adam::default_hparams(0.1);
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let g = vec![1.0];
        opt.step(&mut [a.as_mut_slice()], &[g.as_slice()]).unwrap();
        assert!(opt
            .step(
                &mut [a.as_mut_slice(), b.as_mut_slice()],
                &[g.as_slice(), g.as_slice()]
            )
            .is_err());
    }
}
