use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use synchron::harness::{cases, run_case_study, CaseOptions, CaseStudy};
use synchron::*;

fn rendezvous(c: &mut Criterion) {
    let mut g = c.benchmark_group("rendezvous");
    for rounds in [100usize, 1000] {
        g.throughput(Throughput::Elements(2 * rounds as u64));
        g.bench_with_input(BenchmarkId::new("ping_pong", rounds), &rounds, |b, &rounds| {
            b.iter_batched(
                || {
                    let mut rt = Runtime::new(Config::default(), &Board::new(1_000_000, &[]));
                    rt.spawn(move |p| cases::ping_pong(p, rounds)).unwrap();
                    rt
                },
                |rt| rt.run(Limit::none()).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

fn event_construction(c: &mut Criterion) {
    let mut g = c.benchmark_group("events");
    for width in [4u32, 64] {
        let bases: Vec<Event> = (0..width).map(|i| BaseEvent::recv(ChannelId(i)).into()).collect();
        let f = WrapFn::pure(|v| v);
        g.bench_with_input(BenchmarkId::new("choose_then_wrap", width), &bases, |b, bases| {
            b.iter(|| {
                let e = bases.iter().skip(1).fold(bases[0].clone(), |acc, e| choose(&acc, e));
                wrap(&e, f.clone())
            })
        });
    }
    g.finish();
}

fn case_studies(c: &mut Criterion) {
    let mut g = c.benchmark_group("case_study");
    g.sample_size(10);
    for case in [CaseStudy::SquareWave1khz, CaseStudy::Twinkle] {
        g.bench_function(case.name(), |b| {
            b.iter(|| run_case_study(case, &CaseOptions::default()).unwrap())
        });
    }
    g.bench_function("square_wave_1khz_audited", |b| {
        let opts = CaseOptions {
            audit: true,
            ..Default::default()
        };
        b.iter(|| run_case_study(CaseStudy::SquareWave1khz, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, rendezvous, event_construction, case_studies);
criterion_main!(benches);
