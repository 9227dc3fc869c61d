//! Sequential against parallel execution on the data-parallel kernels.

use caslab::cmetric::ComplexMetric;
use caslab::gauss::Linearization;
use caslab::grid::{c, make_field_with};
use caslab::spectra::{invertibility_scan, MetricFamily, ScanSettings};
use caslab::{Backend, Exec, GridDomain};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn sampling(cr: &mut Criterion) {
    let d = GridDomain::square(256, 1.0).unwrap();
    let mut group = cr.benchmark_group("sample_field_256");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| make_field_with(exec, &d, |z| (z * c(3.0, 1.0)).sin() * (-z.norm_sqr()).exp()).unwrap())
        });
    }
    group.finish();
}

fn assembly(cr: &mut Criterion) {
    let mut group = cr.benchmark_group("assemble_sparse");
    group.sample_size(10);
    for n in [16, 32] {
        let d = GridDomain::window(n, 0.0, 1.0, 0.0, 1.0).unwrap();
        let lambda = make_field_with(Exec::Sequential, &d, |z| (0.3 * (6.0 * z.re).sin() + 0.2 * z.im).exp().into()).unwrap();
        let g = ComplexMetric::conformal(lambda, Backend::Fd4Window).unwrap();
        let op = Linearization::shifted_laplacian(g, 2.0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &op, |b, op| b.iter(|| black_box(op.assemble_sparse(exec))));
        }
    }
    group.finish();
}

fn scan(cr: &mut Criterion) {
    let settings = ScanSettings { coarse: 12, fine: 16, ..ScanSettings::default() };
    let mut group = cr.benchmark_group("invertibility_scan");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| invertibility_scan(MetricFamily::Riemannian { amplitude: 0.5 }, 4, 7, &settings, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, sampling, assembly, scan);
criterion_main!(benches);
