use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: ParameterSet,
    v: ParameterSet,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn first_moment(&self) -> &ParameterSet {
        &self.m
    }

    pub fn second_moment(&self) -> &ParameterSet {
        &self.v
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr·m̂/(√v̂ + ε)`.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// entry leaves `state` and `params` untouched.
pub fn adam_step(state: &mut AdamState, params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: name.to_string(),
                index: i,
            });
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?.data();
        let m = state.m.get_mut(name)?.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state.v.get_mut(name)?.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.m.get(name)?.data(), state.v.get(name)?.data());
        for ((theta, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *theta -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn one(name: &str, v: &[f64]) -> ParameterSet {
        [(name.to_string(), Tensor::from_vec(v.to_vec()))].into_iter().collect()
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = one("w", &[1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut s, &mut p, &one("w", &[0.5]), 5e-5).unwrap();
        let expected = 1.0 - 5e-5 * (0.5 / (0.5 + 1e-8));
        assert_eq!(p.get("w").unwrap().data()[0], expected);
        assert!((expected - 0.99995).abs() < 1e-12);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = one("w", &[0.0, 0.0, 0.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut s, &mut p, &one("w", &[3.0, -0.01, 1e3]), 1e-3).unwrap();
        for (v, sign) in p.get("w").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * 1e-3).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one("w", &[0.3, -2.0]);
        let orig = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            adam_step(&mut s, &mut p, &one("w", &[0.0, 0.0]), 0.1).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = one("w", &[1.0, 2.0]);
        p.insert("a", Tensor::from_vec(vec![0.0]));
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().data_mut()[1] = f64::NAN;
        let before = (p.clone(), s.clone());
        let err = adam_step(&mut s, &mut p, &g, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref name, index: 1 } if name == "w"));
        assert_eq!((p, s), before);
    }

    proptest! {
        #[test]
        fn step_is_pure(g in proptest::collection::vec(-5.0..5.0f64, 4), steps in 1usize..5) {
            let p0 = one("w", &[0.1, 0.2, 0.3, 0.4]);
            let run = || {
                let mut p = p0.clone();
                let mut s = AdamState::new(&p);
                for _ in 0..steps {
                    adam_step(&mut s, &mut p, &one("w", &g), 1e-2).unwrap();
                }
                (p, s)
            };
            let (a, b) = (run(), run());
            prop_assert!(a.0.get("w").unwrap().data().iter().zip(b.0.get("w").unwrap().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(a.1, b.1);
        }
    }
}
