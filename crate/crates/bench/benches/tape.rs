use std::hint::black_box;

use archgrad_bench::Fixture;
use archgrad_core::diffcore::{Tape, Tensor};
use archgrad_core::problem::{BilevelProblem, Split, Wrt};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn mlp_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("tape/affine_tanh_backward");
    for d in [4usize, 16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| {
            b.iter(|| {
                let mut t = Tape::new();
                let x = t.constant(Tensor::matrix(8, d, vec![0.1; 8 * d]).unwrap());
                let w = t.param("w", Tensor::matrix(d, d, vec![0.01; d * d]).unwrap());
                let bias = t.param("w", Tensor::vector(vec![0.0; d]));
                let h = t.affine(x, w, bias).unwrap();
                let h = t.tanh(h).unwrap();
                let loss = t.mean(h).unwrap();
                black_box(t.backward(loss, &["w"]).unwrap())
            })
        });
    }
    group.finish();
}

fn supernet_loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("tape/supernet_train_loss");
    for n in [16usize, 64] {
        let fx = Fixture::new(n);
        let obj = fx.objective();
        let state = fx.state();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(obj.evaluate(Split::Train, &state.omega, &state.alpha, Wrt::Both).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, mlp_backward, supernet_loss);
criterion_main!(benches);
