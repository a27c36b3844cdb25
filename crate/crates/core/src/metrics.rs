//! Correlation metrics over plain series. All moments are population
//! moments (divisor n).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

/// Two-pass population moments of a pair of series.
pub fn moments(x: &[f64], y: &[f64]) -> Result<Moments> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "correlation",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::SequenceTooShort {
            what: "correlation",
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    })
}

/// Pearson correlation. Zero variance in either series is an error, not 0.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = moments(x, y)?;
    if m.var_x <= 0.0 || m.var_y <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((m.cov / (m.var_x * m.var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Lin's concordance correlation `2 cov / (σx² + σy² + (μx − μy)²)`.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = moments(x, y)?;
    let d = m.mean_x - m.mean_y;
    let denom = m.var_x + m.var_y + d * d;
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(2.0 * m.cov / denom)
}

/// Reference and prediction series of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task: Task,
    pub reference: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Aligned reference/prediction series for every evaluated task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub frame_period_s: f64,
    pub traces: Vec<TaskTrace>,
}

impl TraceSet {
    pub fn new(frame_period_s: f64, traces: Vec<TaskTrace>) -> Result<Self> {
        for t in &traces {
            if t.reference.len() != t.prediction.len() {
                return Err(Error::LengthMismatch {
                    what: "trace",
                    expected: t.reference.len(),
                    got: t.prediction.len(),
                });
            }
        }
        Ok(Self { frame_period_s, traces })
    }

    pub fn len(&self) -> usize {
        self.traces.first().map_or(0, |t| t.reference.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, task: Task) -> Option<&TaskTrace> {
        self.traces.iter().find(|t| t.task == task)
    }
}

/// Trailing-window CCC of one task. `values[i]` covers frames
/// `start + i + 1 - window ..= start + i`; `None` marks a degenerate window.
#[derive(Clone, Debug, PartialEq)]
pub struct SlidingSeries {
    pub task: Task,
    pub window: usize,
    /// Frame index of the first value (`window - 1`).
    pub start: usize,
    pub values: Vec<Option<f64>>,
}

/// CCC over the previous `window` predictions at every frame that has a
/// full window behind it.
pub fn sliding_ccc(trace: &TraceSet, window: usize) -> Result<Vec<SlidingSeries>> {
    if window < 2 {
        return Err(Error::InvalidConfig("sliding window must be at least 2".into()));
    }
    trace
        .traces
        .iter()
        .map(|t| {
            let n = t.reference.len();
            if window > n {
                return Err(Error::SequenceTooShort {
                    what: "sliding_ccc",
                    needed: window,
                    got: n,
                });
            }
            let values = (window - 1..n)
                .map(|l| {
                    let range = l + 1 - window..=l;
                    ccc(&t.prediction[range.clone()], &t.reference[range]).ok()
                })
                .collect();
            Ok(SlidingSeries {
                task: t.task,
                window,
                start: window - 1,
                values,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X: [f64; 4] = [0.0, 1.0, 2.0, 3.0];
    const Y: [f64; 4] = [1.0, 1.0, 3.0, 3.0];

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // cov = 1, σx = √1.25, σy = 1
        assert!((pcc(&X, &Y).unwrap() - 1.0 / 1.25f64.sqrt()).abs() < 1e-15);
        assert!((pcc(&X, &Y).unwrap() - 0.894427).abs() < 1e-6);
    }

    #[test]
    fn ccc_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ccc(&x, &x).unwrap(), 1.0);
        assert_eq!(ccc(&x, &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // 2·1 / (1.25 + 1 + 0.25)
        assert_eq!(ccc(&X, &Y).unwrap(), 0.8);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(
            pcc(&[1.0, 1.0], &[0.0, 2.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(matches!(ccc(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::ZeroDenominator)));
        // Constant but different means is still defined.
        assert_eq!(ccc(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(ccc(&[1.0], &[1.0]).is_err());
        assert!(ccc(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn trace_of(reference: Vec<f64>, prediction: Vec<f64>) -> TraceSet {
        TraceSet::new(
            1.0 / 60.0,
            vec![TaskTrace {
                task: Task::Activation,
                reference,
                prediction,
            }],
        )
        .unwrap()
    }

    #[test]
    fn sliding_ccc_lengths_and_perfect_prediction() {
        let r: Vec<f64> = (0..256).map(|i| (i as f64 * 0.1).sin()).collect();
        let s = sliding_ccc(&trace_of(r.clone(), r.clone()), 100).unwrap();
        assert_eq!(s[0].values.len(), 157);
        assert_eq!(s[0].start, 99);
        assert!(s[0].values.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        assert!(sliding_ccc(&trace_of(r.clone(), r.clone()), 257).is_err());
        assert!(sliding_ccc(&trace_of(r.clone(), r), 1).is_err());
    }

    #[test]
    fn sliding_ccc_constant_offset() {
        let c = 0.5;
        let r: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).cos() * 2.0).collect();
        let p: Vec<f64> = r.iter().map(|v| v + c).collect();
        let s = sliding_ccc(&trace_of(r.clone(), p), 20).unwrap();
        for (i, v) in s[0].values.iter().enumerate() {
            let w = &r[i..i + 20];
            let m = w.iter().sum::<f64>() / 20.0;
            let var = w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 20.0;
            let expected = 2.0 * var / (2.0 * var + c * c);
            assert!((v.unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sliding_ccc_marks_degenerate_windows() {
        let mut r = vec![1.0; 10];
        r.extend((0..10).map(|i| i as f64));
        let s = sliding_ccc(&trace_of(r.clone(), r), 5).unwrap();
        assert_eq!(s[0].values[0], None);
        assert!(s[0].values.last().unwrap().is_some());
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0..10.0f64, n),
                proptest::collection::vec(-10.0..10.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn self_agreement_symmetry_and_attenuation((x, y) in pair()) {
            prop_assume!(moments(&x, &y).map(|m| m.var_x > 1e-6 && m.var_y > 1e-6).unwrap_or(false));
            prop_assert!((ccc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            prop_assert_eq!(ccc(&x, &y).unwrap(), ccc(&y, &x).unwrap());
            prop_assert!((pcc(&x, &y).unwrap() - pcc(&y, &x).unwrap()).abs() < 1e-15);
            prop_assert!(ccc(&x, &y).unwrap().abs() <= pcc(&x, &y).unwrap().abs() + 1e-12);
        }

        #[test]
        fn mean_shift_lowers_ccc_but_not_pcc(x in proptest::collection::vec(-5.0..5.0f64, 3..30), b in 0.1..3.0f64) {
            prop_assume!(moments(&x, &x).unwrap().var_x > 1e-3);
            let y: Vec<f64> = x.iter().map(|v| v + b).collect();
            prop_assert!((pcc(&x, &y).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!(ccc(&x, &y).unwrap() < 1.0);
        }
    }
}
