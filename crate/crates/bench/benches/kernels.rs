use criterion::{criterion_group, criterion_main, Criterion};
use oafa_bench::filled;
use oafa_core::{Graph, Padding, Shape, Tensor};

fn conv(c: &mut Criterion) {
    // Desk-scale layers: residual 3x3 at the bottleneck, the 7x7 head, a D stage.
    let cases = [
        ("residual 32->32 3x3 16x16", Shape::new(1, 32, 16, 16), 32, 3, 1, Padding::Reflect(1)),
        ("head 16->3 7x7 64x64", Shape::new(1, 16, 64, 64), 3, 7, 1, Padding::Reflect(3)),
        ("disc 6->16 4x4 s2 64x64", Shape::new(1, 6, 64, 64), 16, 4, 2, Padding::Zero(1)),
    ];
    for (name, input, cout, k, stride, padding) in cases {
        let x = filled(input, 1);
        let w = filled(Shape::new(cout, input.c, k, k), 2);
        let b = Tensor::zeros(Shape::new(1, 1, 1, cout));
        c.bench_function(&format!("conv2d fwd+bwd {name}"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let xv = g.param(x.clone());
                let wv = g.param(w.clone());
                let bv = g.param(b.clone());
                let y = g.conv2d(xv, wv, bv, stride, padding).unwrap();
                let loss = g.mean(y);
                g.backward(loss).unwrap();
                g.grad(wv).map(|t| t.data()[0])
            })
        });
    }
}

fn norm_and_upsample(c: &mut Criterion) {
    let x = filled(Shape::new(1, 32, 32, 32), 3);
    let gamma = Tensor::full(Shape::new(1, 1, 1, 32), 1.0);
    let beta = Tensor::zeros(Shape::new(1, 1, 1, 32));
    c.bench_function("instance_norm fwd+bwd 32x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, gv, bv) = (g.param(x.clone()), g.param(gamma.clone()), g.param(beta.clone()));
            let y = g.instance_norm(xv, gv, bv, 1e-5).unwrap();
            let loss = g.mean(y);
            g.backward(loss).unwrap();
        })
    });
    c.bench_function("upsample2x fwd+bwd 32x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let y = g.upsample2x(xv);
            let loss = g.mean(y);
            g.backward(loss).unwrap();
        })
    });
}

criterion_group!(benches, conv, norm_and_upsample);
criterion_main!(benches);
