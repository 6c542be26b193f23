//! Loss combination: the adaptive inverse-mean weight and the fixed-weight
//! baseline.
//!
//! The adaptive weight is the ratio of running mean loss magnitudes,
//! alpha = mean(|L_BCE|) / mean(|L_MSE|), re-read once per batch after the
//! running means have been updated with that batch's loss values. Alpha is
//! consumed as a constant: no gradient flows into it.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Running magnitudes of the two task losses.
///
/// The first update seeds the means with the observed values; later updates
/// apply mean <- gamma*mean + (1-gamma)*loss. Before any update, alpha is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveState {
    mean_bce: f64,
    mean_mse: f64,
    count: u64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for AdaptiveState {
    fn default() -> Self {
        Self::new(DEFAULT_GAMMA, DEFAULT_EPSILON)
    }
}

impl AdaptiveState {
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        AdaptiveState {
            mean_bce: 0.0,
            mean_mse: 0.0,
            count: 0,
            gamma,
            epsilon,
        }
    }

    pub fn mean_bce(&self) -> f64 {
        self.mean_bce
    }

    pub fn mean_mse(&self) -> f64 {
        self.mean_mse
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Fold one batch's loss values into the running means. Must happen
    /// before alpha is read for that batch's total loss.
    pub fn update(&mut self, l_bce: f64, l_mse: f64) -> Result<()> {
        if !l_bce.is_finite() || !l_mse.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss fed to combiner: bce={l_bce}, mse={l_mse}"
            )));
        }
        // BCE and MSE are nonnegative by construction; the magnitude in the
        // weight definition is therefore the identity. abs() keeps the
        // contract explicit.
        let (l_bce, l_mse) = (l_bce.abs(), l_mse.abs());
        if self.count == 0 {
            self.mean_bce = l_bce;
            self.mean_mse = l_mse;
        } else {
            self.mean_bce = self.gamma * self.mean_bce + (1.0 - self.gamma) * l_bce;
            self.mean_mse = self.gamma * self.mean_mse + (1.0 - self.gamma) * l_mse;
        }
        self.count += 1;
        Ok(())
    }

    /// alpha = mean_bce / max(mean_mse, epsilon); 1 before any update.
    pub fn compute_alpha(&self) -> f64 {
        if self.count == 0 {
            return 1.0;
        }
        self.mean_bce / self.mean_mse.max(self.epsilon)
    }
}

/// L = L_BCE + alpha * L_MSE, with alpha treated as a constant.
pub fn total_loss<E: Element>(
    tape: &mut Tape<E>,
    l_bce: &Tensor<E>,
    l_mse: &Tensor<E>,
    alpha: f64,
) -> Result<Tensor<E>> {
    if !l_bce.is_scalar() || !l_mse.is_scalar() {
        return Err(Error::Contract(format!(
            "total_loss requires scalar losses, got shapes {:?} and {:?}",
            l_bce.shape(),
            l_mse.shape()
        )));
    }
    let weighted = tape.scale(l_mse, alpha);
    tape.add(l_bce, &weighted)
}

/// Fixed-weight baseline: L = L_BCE + w * L_MSE with constant w.
pub fn fixed_combiner<E: Element>(
    tape: &mut Tape<E>,
    l_bce: &Tensor<E>,
    l_mse: &Tensor<E>,
    weight: f64,
) -> Result<Tensor<E>> {
    total_loss(tape, l_bce, l_mse, weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_tracks_last_value() {
        let mut s = AdaptiveState::new(0.0, DEFAULT_EPSILON);
        s.update(0.6, 0.3).unwrap();
        assert_eq!(s.mean_bce(), 0.6);
        assert_eq!(s.mean_mse(), 0.3);
        s.update(0.9, 0.1).unwrap();
        assert_eq!(s.mean_bce(), 0.9);
        assert_eq!(s.mean_mse(), 0.1);
    }

    #[test]
    fn constant_losses_are_a_fixed_point() {
        for gamma in [0.0, 0.5, 0.9] {
            let mut s = AdaptiveState::new(gamma, DEFAULT_EPSILON);
            s.update(1.0, 1.0).unwrap();
            s.update(1.0, 1.0).unwrap();
            assert_eq!(s.mean_bce(), 1.0);
            assert_eq!(s.mean_mse(), 1.0);
        }
    }

    #[test]
    fn ema_recurrence_from_seeded_means() {
        // First sample seeds the means at (1,1); the EMA then gives
        // 0.9*1 + 0.1*0.5 = 0.95 and 0.9*1 + 0.1*0.25 = 0.925.
        let mut s = AdaptiveState::new(0.9, DEFAULT_EPSILON);
        s.update(1.0, 1.0).unwrap();
        s.update(0.5, 0.25).unwrap();
        assert!((s.mean_bce() - 0.95).abs() < 1e-15);
        assert!((s.mean_mse() - 0.925).abs() < 1e-15);
    }

    #[test]
    fn alpha_is_ratio_of_means() {
        let mut s = AdaptiveState::new(0.0, DEFAULT_EPSILON);
        s.update(0.6, 0.3).unwrap();
        assert!((s.compute_alpha() - 2.0).abs() < 1e-15);
        let mut s = AdaptiveState::new(0.0, DEFAULT_EPSILON);
        s.update(0.3, 0.6).unwrap();
        assert!((s.compute_alpha() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_cold_start_is_one() {
        assert_eq!(AdaptiveState::default().compute_alpha(), 1.0);
    }

    #[test]
    fn epsilon_floor_guards_zero_mse() {
        let mut s = AdaptiveState::new(0.0, DEFAULT_EPSILON);
        s.update(0.5, 0.0).unwrap();
        assert!((s.compute_alpha() - 5e7).abs() < 1.0);
    }

    #[test]
    fn nan_loss_is_a_divergence_error() {
        let mut s = AdaptiveState::default();
        assert!(matches!(
            s.update(f64::NAN, 0.1),
            Err(Error::Divergence(_))
        ));
        assert!(matches!(
            s.update(0.1, f64::INFINITY),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn ratio_equivariance() {
        for c in [0.5, 2.0, 10.0, 1e3] {
            let mut a = AdaptiveState::new(0.7, DEFAULT_EPSILON);
            let mut b = AdaptiveState::new(0.7, DEFAULT_EPSILON);
            a.update(0.8, 0.4).unwrap();
            b.update(0.8, 0.4 * c).unwrap();
            let ra = a.compute_alpha();
            let rb = b.compute_alpha();
            assert!((rb - ra / c).abs() / ra.max(rb) < 1e-12);
        }
    }

    #[test]
    fn total_loss_linear_combination() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(&Tensor::scalar(0.7));
        let m = tape.leaf(&Tensor::scalar(0.2));
        let l = total_loss(&mut tape, &b, &m, 2.0).unwrap();
        assert!((l.item().unwrap() - 1.1).abs() < 1e-15);
        let l0 = total_loss(&mut tape, &b, &m, 0.0).unwrap();
        assert_eq!(l0.item().unwrap(), 0.7);
    }

    #[test]
    fn fixed_combiner_matches_frozen_alpha() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(&Tensor::scalar(0.4));
        let m = tape.leaf(&Tensor::scalar(0.6));
        let w1 = fixed_combiner(&mut tape, &b, &m, 1.0).unwrap();
        assert!((w1.item().unwrap() - 1.0).abs() < 1e-15);
        for alpha in [0.0, 0.3, 1.7] {
            let a = fixed_combiner(&mut tape, &b, &m, alpha).unwrap();
            let t = total_loss(&mut tape, &b, &m, alpha).unwrap();
            assert_eq!(a.item().unwrap(), t.item().unwrap());
        }
    }

    #[test]
    fn total_loss_rejects_non_scalars() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(&Tensor::from_vec(vec![2], vec![0.1, 0.2]).unwrap());
        let m = tape.leaf(&Tensor::scalar(0.2));
        assert!(matches!(
            total_loss(&mut tape, &b, &m, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn no_gradient_flows_into_alpha() {
        // Perturbing the adaptive state changes alpha's value but not the
        // backward function: for a fixed alpha the MSE-side gradient is
        // exactly alpha times the gradient of l_mse alone.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let t = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let l_mse = tape.mse(&x, &t).unwrap();
        let zero = tape.scale(&x, 0.0);
        let l_bce_like = tape.sum(&zero);
        let alpha = 3.0;
        let total = total_loss(&mut tape, &l_bce_like, &l_mse, alpha).unwrap();
        let g_total = tape.backward(&total).unwrap();
        let g_mse = tape.backward(&l_mse).unwrap();
        let gt = g_total.of(&x).unwrap();
        let gm = g_mse.of(&x).unwrap();
        for (a, b) in gt.iter().zip(gm) {
            assert!((a - alpha * b).abs() < 1e-12);
        }
    }
}
