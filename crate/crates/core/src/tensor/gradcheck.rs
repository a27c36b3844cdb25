use super::{BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where `max_rel_error` occurred.
    pub worst: Option<(String, usize)>,
    /// Largest relative error per parameter tensor.
    pub per_param: Vec<(String, f64)>,
}

/// Maximum over all parameter entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`, with the
/// numeric derivative from a two-sided difference of step `eps`.
pub fn gradient_check<F>(f: F, point: &ParameterSet, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    gradient_check_with(f, point, eps, |_| {})
}

/// Like [`gradient_check`], but passes the analytic gradients through
/// `tamper` before comparing. Used to confirm the harness rejects a broken
/// backward rule.
pub fn gradient_check_with<F, H>(f: F, point: &ParameterSet, eps: f64, tamper: H) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
    H: FnOnce(&mut ParameterSet),
{
    let mut tape = Tape::new();
    let bound = tape.bind(point);
    let root = f(&mut tape, &bound)?;
    let value = tape.value(root)?.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            name: "<objective>".into(),
            index: 0,
        });
    }
    tape.backward(root)?;
    let mut analytic = bound.gradients(&tape)?;
    tamper(&mut analytic);

    let eval = |params: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind(params);
        let root = f(&mut tape, &bound)?;
        tape.value(root)?.item()
    };

    let mut work = point.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: Vec::new(),
    };
    let names: Vec<String> = point.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic.get(&name)?.clone();
        let mut worst_here = 0.0_f64;
        for i in 0..grad.len() {
            let original = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original;

            let a = grad.data()[i];
            let n = (plus - minus) / (2.0 * eps);
            if !(plus.is_finite() && minus.is_finite() && a.is_finite() && n.is_finite()) {
                return Err(Error::NonFinite { name, index: i });
            }
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if err > worst_here {
                worst_here = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
        report.per_param.push((name, worst_here));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(name: &str, t: Tensor) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(name, t);
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let p = single("x", Tensor::scalar(3.0));
        let r = gradient_check(
            |tape, b| {
                let x = b.get("x")?;
                tape.square(x)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = single("x", Tensor::from_vec(vec![1.0, -2.0]));
        let r = gradient_check(|tape, _| Ok(tape.constant(Tensor::scalar(4.0))), &p, 1e-6).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn tanh_at_point_three() {
        let p = single("x", Tensor::from_vec(vec![0.3]));
        let r = gradient_check(
            |tape, b| {
                let y = tape.tanh(b.get("x")?)?;
                tape.sum(y)
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_is_reported_with_name() {
        // sqrt at 0 has an infinite derivative.
        let p = single("w", Tensor::from_vec(vec![0.0]));
        let err = gradient_check(
            |tape, b| {
                let y = tape.sqrt(b.get("w")?)?;
                tape.sum(y)
            },
            &p,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref name, .. } if name == "w"), "{err}");
    }

    #[test]
    fn division_near_zero_denominator_is_flagged() {
        let mut p = single("num", Tensor::from_vec(vec![1.0]));
        p.insert("den", Tensor::from_vec(vec![1e-7]));
        let err = gradient_check(
            |tape, b| {
                let y = tape.div(b.get("num")?, b.get("den")?)?;
                tape.sum(y)
            },
            &p,
            1e-6,
        );
        // The forward pass is fine, but the check must not pass silently.
        match err {
            Err(Error::NonFinite { .. }) => {}
            Ok(r) => assert!(r.max_rel_error > 1e-4, "{r:?}"),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn tampered_gradients_are_caught() {
        let p = single("x", Tensor::from_vec(vec![0.4, -0.2]));
        let r = gradient_check_with(
            |tape, b| {
                let y = tape.sigmoid(b.get("x")?)?;
                tape.sum(y)
            },
            &p,
            1e-6,
            |g| g.get_mut("x").unwrap().data_mut()[1] *= 1.01,
        )
        .unwrap();
        assert!(r.max_rel_error > 5e-3);
        assert_eq!(r.worst, Some(("x".into(), 1)));
    }
}
