//! CCC and PCC against a direct two-pass evaluation written independently
//! of the library's moment code.

use cer_core::{ccc, pcc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Direct {
    ccc: f64,
    pcc: f64,
}

fn direct(x: &[f64], y: &[f64]) -> Direct {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let (vx, vy, c) = (sxx / n, syy / n, sxy / n);
    Direct {
        ccc: 2.0 * c / (vx + vy + (mx - my) * (mx - my)),
        pcc: c / (vx.sqrt() * vy.sqrt()),
    }
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..200);
    let scale = rng.random_range(0.1..5.0);
    let shift = rng.random_range(-2.0..2.0);
    let coupling = rng.random_range(-1.0..1.0);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x
        .iter()
        .map(|v| coupling * v * scale + shift + rng.random_range(-1.0..1.0))
        .collect();
    (x, y)
}

#[test]
fn thousand_random_pairs_match_direct_formula_and_attenuation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let (x, y) = random_pair(&mut rng);
        let d = direct(&x, &y);
        let (c, p) = (ccc(&x, &y).unwrap(), pcc(&x, &y).unwrap());
        assert!((c - d.ccc).abs() <= 1e-12, "pair {i}: ccc {c} vs {}", d.ccc);
        assert!((p - d.pcc).abs() <= 1e-12, "pair {i}: pcc {p} vs {}", d.pcc);
        assert!(c.abs() <= p.abs() + 1e-15, "pair {i}: |ccc| {c} > |pcc| {p}");
    }
}

#[test]
fn worked_example() {
    let (x, y) = ([0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 3.0, 3.0]);
    assert_eq!(ccc(&x, &y).unwrap(), 0.8);
    assert!((pcc(&x, &y).unwrap() - 0.894427).abs() < 5e-7);
}
