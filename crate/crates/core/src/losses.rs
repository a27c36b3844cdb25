//! Differentiable training objectives. Correlation losses treat the whole
//! batch as one population.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ccc, moments, pcc};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ccc,
    Pcc,
    Mse,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ccc, LossKind::Pcc, LossKind::Mse];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ccc => "ccc",
            LossKind::Pcc => "pcc",
            LossKind::Mse => "mse",
        }
    }

    pub fn apply(self, tape: &mut Tape, pred: Var, reference: &[f64]) -> Result<Var> {
        match self {
            LossKind::Ccc => ccc_loss(tape, pred, reference),
            LossKind::Pcc => pcc_loss(tape, pred, reference),
            LossKind::Mse => mse_loss(tape, pred, reference),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss `{s}`")))
    }
}

struct Centered {
    pred: Var,
    mean_pred: Var,
    centered_pred: Var,
    centered_ref: Var,
    mean_ref: f64,
    var_ref: f64,
}

fn center(tape: &mut Tape, pred: Var, reference: &[f64], min_len: usize) -> Result<Centered> {
    let n = tape.value(pred)?.len();
    if n != reference.len() {
        return Err(Error::LengthMismatch {
            what: "loss",
            expected: reference.len(),
            got: n,
        });
    }
    if n < min_len {
        return Err(Error::SequenceTooShort {
            what: "loss batch",
            needed: min_len,
            got: n,
        });
    }
    let pred = tape.reshape(pred, &[n])?;
    let m = moments(reference, reference)?;
    let mean_pred = tape.mean(pred)?;
    let centered_pred = tape.sub(pred, mean_pred)?;
    let centered_ref = tape.constant(Tensor::from_vec(reference.iter().map(|r| r - m.mean_x).collect()));
    Ok(Centered {
        pred,
        mean_pred,
        centered_pred,
        centered_ref,
        mean_ref: m.mean_x,
        var_ref: m.var_x,
    })
}

/// `1 − CCC(pred, reference)`.
pub fn ccc_loss(tape: &mut Tape, pred: Var, reference: &[f64]) -> Result<Var> {
    let c = center(tape, pred, reference, 2)?;
    if c.var_ref <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let sq = tape.square(c.centered_pred)?;
    let var_pred = tape.mean(sq)?;
    let prod = tape.mul(c.centered_pred, c.centered_ref)?;
    let cov = tape.mean(prod)?;
    let shift = tape.add_scalar(c.mean_pred, -c.mean_ref)?;
    let shift_sq = tape.square(shift)?;
    let denom = tape.add_scalar(var_pred, c.var_ref)?;
    let denom = tape.add(denom, shift_sq)?;
    let num = tape.scale(cov, 2.0)?;
    let ccc = tape.div(num, denom)?;
    tape.rsub_scalar(1.0, ccc)
}

/// `1 − PCC(pred, reference)`.
pub fn pcc_loss(tape: &mut Tape, pred: Var, reference: &[f64]) -> Result<Var> {
    let c = center(tape, pred, reference, 2)?;
    if c.var_ref <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let sq = tape.square(c.centered_pred)?;
    let var_pred = tape.mean(sq)?;
    if tape.value(var_pred)?.item()? <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let prod = tape.mul(c.centered_pred, c.centered_ref)?;
    let cov = tape.mean(prod)?;
    let std_pred = tape.sqrt(var_pred)?;
    let denom = tape.scale(std_pred, c.var_ref.sqrt())?;
    let r = tape.div(cov, denom)?;
    tape.rsub_scalar(1.0, r)
}

/// Mean squared error.
pub fn mse_loss(tape: &mut Tape, pred: Var, reference: &[f64]) -> Result<Var> {
    let c = center(tape, pred, reference, 1)?;
    let r = tape.constant(Tensor::from_vec(reference.to_vec()));
    let d = tape.sub(c.pred, r)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// Value of `kind` on plain series, matching the tape losses.
pub fn loss_value(kind: LossKind, pred: &[f64], reference: &[f64]) -> Result<f64> {
    match kind {
        LossKind::Ccc => {
            if moments(reference, reference)?.var_x <= 0.0 {
                return Err(Error::UndefinedCorrelation);
            }
            Ok(1.0 - ccc(pred, reference)?)
        }
        LossKind::Pcc => Ok(1.0 - pcc(pred, reference)?),
        LossKind::Mse => {
            if pred.len() != reference.len() || pred.is_empty() {
                return Err(Error::LengthMismatch {
                    what: "loss",
                    expected: reference.len(),
                    got: pred.len(),
                });
            }
            Ok(pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len() as f64)
        }
    }
}

/// Weighted sum of per-task losses, `J = Σ α_m L_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MtlObjective {
    weights: Vec<f64>,
}

impl MtlObjective {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("objective needs at least one task".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("objective weights must be finite".into()));
        }
        Ok(Self { weights })
    }

    /// `α_m = 1/M`.
    pub fn uniform(tasks: usize) -> Result<Self> {
        Self::new(vec![1.0 / tasks as f64; tasks])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn evaluate(&self, tape: &mut Tape, losses: &[Var]) -> Result<Var> {
        mtl_objective(tape, losses, &self.weights)
    }
}

pub fn mtl_objective(tape: &mut Tape, losses: &[Var], weights: &[f64]) -> Result<Var> {
    if losses.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "objective weights",
            expected: losses.len(),
            got: weights.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (&loss, &w) in losses.iter().zip(weights) {
        let term = tape.scale(loss, w)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::InvalidConfig("objective needs at least one task".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;
    use crate::tensor::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn value(kind: LossKind, pred: &[f64], reference: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(pred.to_vec()));
        let l = kind.apply(&mut tape, p, reference)?;
        tape.value(l)?.item()
    }

    const X: [f64; 4] = [0.0, 1.0, 2.0, 3.0];
    const Y: [f64; 4] = [1.0, 1.0, 3.0, 3.0];

    #[test]
    fn ccc_loss_examples() {
        let r = [0.3, -1.0, 2.0, 0.7];
        assert!(value(LossKind::Ccc, &r, &r).unwrap().abs() < 1e-15);
        assert!((value(LossKind::Ccc, &X, &Y).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(
            value(LossKind::Ccc, &X, &[1.0; 4]),
            Err(Error::UndefinedCorrelation)
        ));
    }

    #[test]
    fn pcc_loss_examples() {
        let r = [0.3, -1.0, 2.0, 0.7];
        let affine: Vec<f64> = r.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!(value(LossKind::Pcc, &affine, &r).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((value(LossKind::Pcc, &neg, &r).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            value(LossKind::Pcc, &[1.0; 4], &r),
            Err(Error::UndefinedCorrelation)
        ));
    }

    #[test]
    fn mse_loss_examples() {
        assert_eq!(value(LossKind::Mse, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(value(LossKind::Mse, &[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert!(value(LossKind::Mse, &[0.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn mse_gradient_is_two_residual_over_n() {
        let pred = [0.5, -1.0, 2.0];
        let reference = [1.0, 1.0, 1.0];
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(pred.to_vec()));
        let l = mse_loss(&mut tape, p, &reference).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(p).unwrap().unwrap();
        for i in 0..3 {
            assert!((g.data()[i] - 2.0 * (pred[i] - reference[i]) / 3.0).abs() < 1e-15);
        }
    }

    fn random_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = r.iter().map(|v| 0.6 * v + rng.random_range(-0.5..0.5) + 0.2).collect();
        (p, r)
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for (kind, n) in [
            (LossKind::Ccc, 256),
            (LossKind::Ccc, 64),
            (LossKind::Pcc, 128),
            (LossKind::Mse, 64),
        ] {
            let (p, r) = random_pair(n, n as u64);
            let mut point = ParameterSet::new();
            point.insert("pred", Tensor::from_vec(p));
            let report = gradient_check(|tape, b| kind.apply(tape, b.get("pred")?, &r), &point, 1e-6).unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
        }
    }

    #[test]
    fn loss_matches_metric() {
        for seed in 0..20 {
            let (p, r) = random_pair(50, seed);
            let l = value(LossKind::Ccc, &p, &r).unwrap();
            assert!((l - (1.0 - ccc(&p, &r).unwrap())).abs() < 1e-12);
            let l = value(LossKind::Pcc, &p, &r).unwrap();
            assert!((l - (1.0 - pcc(&p, &r).unwrap())).abs() < 1e-12);
            for kind in LossKind::ALL {
                let tape_value = value(kind, &p, &r).unwrap();
                assert!((tape_value - loss_value(kind, &p, &r).unwrap()).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn objective_examples() {
        let mut tape = Tape::new();
        let ls: Vec<Var> = [0.3, 0.6, 0.9].iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
        let j = MtlObjective::uniform(3).unwrap().evaluate(&mut tape, &ls).unwrap();
        assert!((tape.value(j).unwrap().item().unwrap() - 0.6).abs() < 1e-15);

        let single = mtl_objective(&mut tape, &ls[1..2], &[1.0]).unwrap();
        assert_eq!(tape.value(single).unwrap().item().unwrap(), 0.6);

        let one_hot = mtl_objective(&mut tape, &ls, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(tape.value(one_hot).unwrap().item().unwrap(), 0.9);

        assert!(mtl_objective(&mut tape, &ls, &[0.5, 0.5]).is_err());
        assert!(MtlObjective::new(vec![]).is_err());
        assert!(MtlObjective::new(vec![f64::NAN]).is_err());
    }
}
