use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use kacflow::formulas::{cross_section_mean_return, mc_mean_return};
use kacflow::{BaseSet, BaseSystem, CylinderSet, FlowSet, McConfig, Roof, RoofIntegral, SuspensionFlow};

const SAMPLES: u64 = 200_000;
const WORKERS: usize = 8;

fn doubling() -> SuspensionFlow {
    SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(1.0).unwrap()).unwrap()
}

fn cosine_rotation() -> SuspensionFlow {
    SuspensionFlow::new(
        BaseSystem::rotation(kacflow::catalog::GOLDEN_MEAN).unwrap(),
        Roof::closed_form(
            |x| 2.0 + (std::f64::consts::TAU * x).cos(),
            1.0,
            RoofIntegral::Analytic(2.0),
        )
        .unwrap(),
        3.0,
    )
    .unwrap()
}

fn configs() -> [(&'static str, McConfig); 2] {
    let base = McConfig::new(SAMPLES, 42).with_workers(WORKERS);
    [("parallel", base), ("sequential", base.sequential())]
}

fn mean_return(c: &mut Criterion) {
    let flow = doubling();
    let set: FlowSet = CylinderSet::new(BaseSet::interval(0.0, 0.5).unwrap(), 0.0, 1.0)
        .unwrap()
        .into();
    let mut group = c.benchmark_group("mean_return");
    group.throughput(Throughput::Elements(SAMPLES));
    group.sample_size(10);
    for (label, cfg) in configs() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| mc_mean_return(&flow, &set, cfg).unwrap())
        });
    }
    group.finish();
}

fn cross_section(c: &mut Criterion) {
    let flow = cosine_rotation();
    let base = BaseSet::interval(0.0, 0.3).unwrap();
    let mut group = c.benchmark_group("cross_section");
    group.throughput(Throughput::Elements(SAMPLES));
    group.sample_size(10);
    for (label, cfg) in configs() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| cross_section_mean_return(&flow, &base, cfg).unwrap())
        });
    }
    group.finish();
}

fn evolve_batch(c: &mut Criterion) {
    let flow = cosine_rotation();
    let mut group = c.benchmark_group("evolve_batch");
    group.throughput(Throughput::Elements(SAMPLES));
    group.sample_size(10);
    for (label, cfg) in configs() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| {
                kacflow::mc::mean(cfg, |rng| {
                    let p = flow.sampler().sample(rng)?;
                    Ok(flow.evolve(p, 37.5)?.t)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, mean_return, cross_section, evolve_batch);
criterion_main!(benches);
