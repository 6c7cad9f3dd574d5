use std::collections::BTreeMap;

use crate::error::{shape_err, NnError, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub(crate) moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(name)
            .map(|m| (m.m.as_slice(), m.v.as_slice()))
    }

    pub(crate) fn insert_moments(&mut self, name: String, m: Vec<f64>, v: Vec<f64>) {
        self.moments.insert(name, Moments { m, v });
    }
}

/// One bias-corrected Adam update over every parameter in `params`.
///
/// Gradients are validated before anything is touched, so a
/// `NonFiniteGradient` error leaves parameters and state unchanged.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(shape_err(
                "adam_step",
                format!("`{name}`: {:?} vs {:?}", g.shape(), p.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(NnError::NonFiniteGradient(name.to_string()));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let mo = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
        for (((w, &gi), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mo.m.iter_mut())
            .zip(mo.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::from_vec(&[1], vec![v]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_set("w", 0.0);
        let g = scalar_set("w", 1.0);
        let mut s = AdamState::new();
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, 0.01, &cfg).unwrap();
        let w = p.get("w").unwrap().data()[0];
        assert!((w + 0.01 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_param_but_counts_step() {
        let mut p = scalar_set("w", 0.25);
        let g = scalar_set("w", 0.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.25);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn ten_steps_on_parabola_match_scalar_reference() {
        // independent scalar Adam written out longhand
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = scalar_set("w", 1.0);
        let mut s = AdamState::new();
        for _ in 0..10 {
            let g = scalar_set("w", 2.0 * p.get("w").unwrap().data()[0]);
            adam_step(&mut p, &g, &mut s, lr, &AdamConfig::default()).unwrap();
        }
        let got = p.get("w").unwrap().data()[0];
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = scalar_set("w", -3.5);
        let before = p.clone();
        let mut s = AdamState::new();
        for k in 0..5 {
            let g = scalar_set("w", k as f64 - 2.0);
            adam_step(&mut p, &g, &mut s, 0.0, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = scalar_set("w", 1.0);
        let g = scalar_set("w", f64::NAN);
        let mut s = AdamState::new();
        let err = adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(n) if n == "w"));
        assert_eq!(s.t, 0);
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }
}
