use std::hint::black_box;

use cer_core::losses::ccc_loss;
use cer_core::model::{build_model, forward, ModelConfig};
use cer_core::{LossKind, Tape, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    // Batch of im2col rows times the default convolution weights.
    let a = random(&[256 * 18, 189], 1);
    let b = random(&[189, 25], 2);
    c.bench_function("matmul_4608x189x25_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(a.clone());
            let w = tape.leaf(b.clone());
            let y = tape.matmul(x, w).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            black_box(tape.grad(w).unwrap().is_some())
        })
    });
}

fn network(c: &mut Criterion) {
    let config = ModelConfig::mtl(63, 20);
    let params = build_model(&config, 0).unwrap();
    let x = random(&[256, 20, 63], 3);
    let targets: Vec<Vec<f64>> = (0..3).map(|s| random(&[256], 10 + s).into_data()).collect();
    c.bench_function("mtl_forward_batch256", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(&params);
            let input = tape.constant(x.clone());
            black_box(forward(&mut tape, &config, &bound, input).unwrap())
        })
    });
    c.bench_function("mtl_forward_backward_batch256", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let input = tape.constant(x.clone());
            let outs = forward(&mut tape, &config, &bound, input).unwrap();
            let losses: Vec<_> = outs
                .iter()
                .zip(&targets)
                .map(|(&o, t)| LossKind::Ccc.apply(&mut tape, o, t).unwrap())
                .collect();
            let j = cer_core::losses::mtl_objective(&mut tape, &losses, &[1.0 / 3.0; 3]).unwrap();
            tape.backward(j).unwrap();
            black_box(bound.gradients(&tape).unwrap())
        })
    });
}

fn loss(c: &mut Criterion) {
    let pred = random(&[256], 4);
    let reference = random(&[256], 5).into_data();
    c.bench_function("ccc_loss_256_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let p = tape.leaf(pred.clone());
            let l = ccc_loss(&mut tape, p, &reference).unwrap();
            tape.backward(l).unwrap();
            black_box(tape.grad(p).unwrap().is_some())
        })
    });
}

criterion_group!(benches, matmul, network, loss);
criterion_main!(benches);
