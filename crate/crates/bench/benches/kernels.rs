use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use nlfb::eigen::lambda1;
use nlfb::semiwave::speed_from_kernel;
use nlfb::{EigenOptions, EigenProblem, KernelTables, Nonlinearity, RadialKernel, SemiWaveOptions};

fn tables(c: &mut Criterion) {
    let mut g = c.benchmark_group("tables");
    g.sample_size(10);
    for (name, k) in [
        ("disc", RadialKernel::uniform(2, 1.0).unwrap()),
        ("ball", RadialKernel::uniform(3, 1.0).unwrap()),
        ("power_tail", RadialKernel::power_tail(2, 3.5, 1.0).unwrap()),
    ] {
        g.bench_function(format!("fill_{name}_200_rows"), |b| {
            b.iter_batched(
                || KernelTables::new(k.clone(), 0.05).unwrap(),
                |t| {
                    t.ensure(200);
                    t
                },
                BatchSize::PerIteration,
            )
        });
    }
    g.finish();
}

fn eigen(c: &mut Criterion) {
    let t = KernelTables::new(RadialKernel::uniform(2, 1.0).unwrap(), 0.05).unwrap();
    t.ensure(400);
    let opts = EigenOptions::default();
    let mut g = c.benchmark_group("eigen");
    for radius in [2.0, 10.0] {
        g.bench_function(format!("lambda1_disc_L{radius}"), |b| {
            b.iter(|| {
                let p = EigenProblem {
                    d: 1.0,
                    a: 0.5,
                    radius,
                    tables: &t,
                };
                black_box(lambda1(&p, &opts).unwrap().lambda1)
            })
        });
    }
    g.finish();
}

fn semiwave(c: &mut Criterion) {
    let k = RadialKernel::uniform(2, 1.0).unwrap();
    let f = Nonlinearity::logistic(1.0);
    let opts = SemiWaveOptions {
        dx: Some(0.05),
        ..SemiWaveOptions::default()
    };
    let mut g = c.benchmark_group("semiwave");
    g.sample_size(10);
    g.bench_function("disc_dx0.05", |b| {
        b.iter(|| black_box(speed_from_kernel(&k, 1.0, 1.0, &f, &opts).unwrap().c0))
    });
    g.finish();
}

criterion_group!(benches, tables, eigen, semiwave);
criterion_main!(benches);
