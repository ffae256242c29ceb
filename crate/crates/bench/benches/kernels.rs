use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonact::dsp::{amplitude_envelope, condition, mel_spectrogram, resample_down, ENVELOPE_FRAME};
use sonact::nn::{Encoder, Graph, Mode, ParamSet, Tensor};
use sonact::ssl::{pretrain, PretrainConfig, PretrainVariant, SpecSet};
use sonact::synth::{sample_action, simulate};
use sonact::{dtw_distance, ChannelStats, EncoderConfig, TaskId};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn front_end(c: &mut Criterion) {
    let task = TaskId::Swatter;
    let action = sample_action(&task.action_spec(), 1);
    let raw = simulate(task, &action, 1, 0.01).unwrap();
    let clip = condition(&raw).unwrap();
    c.bench_function("simulate swatter", |b| b.iter(|| simulate(task, black_box(&action), 1, 0.01).unwrap()));
    c.bench_function("resample 44.1k to 11k, 2 ch", |b| b.iter(|| resample_down(black_box(&raw), 4).unwrap()));
    c.bench_function("mel spectrogram, 2 ch", |b| b.iter(|| mel_spectrogram(black_box(&clip)).unwrap()));
}

fn alignment(c: &mut Criterion) {
    let task = TaskId::StrikeH;
    let env = |seed| {
        let a = sample_action(&task.action_spec(), seed);
        amplitude_envelope(&condition(&simulate(task, &a, seed, 0.01).unwrap()).unwrap(), ENVELOPE_FRAME).unwrap()
    };
    let (x, y) = (env(1), env(2));
    c.bench_function("dtw 172x172, 2 ch", |b| b.iter(|| dtw_distance(black_box(&x), black_box(&y)).unwrap()));
}

fn network(c: &mut Criterion) {
    let cfg = EncoderConfig::desk(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::<f32>::new();
    let enc = Encoder::build(&mut ps, "encoder", &cfg, &mut rng);
    let x: Vec<f32> = (0..32 * 2 * 16 * 274).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![32, 2, 16, 274], x).unwrap();
    c.bench_function("encoder forward+backward, batch 32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = ps.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let z = enc.forward(&mut g, &ps, &bound, xv, Mode::Train).unwrap();
            let s = g.square(z);
            let loss = g.sum(s);
            g.backward(loss).unwrap()
        })
    });

    let mut set = SpecSet::new(2, 16, 274);
    for i in 0..32u64 {
        let item: Vec<f32> = (0..set.item_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        set.push_values(&item, i / 2, (i % 2) as u32).unwrap();
    }
    let stats = ChannelStats {
        mean: vec![0.0; 2],
        std: vec![1.0; 2],
    };
    let pcfg = PretrainConfig {
        epochs: 1,
        batch_size: 32,
        ..PretrainConfig::desk(PretrainVariant::ByolAa, 0)
    };
    let mut group = c.benchmark_group("pretrain");
    group.sample_size(10);
    group.bench_function("byol step, batch 32", |b| {
        b.iter_batched(|| stats.clone(), |s| pretrain(&set, &cfg, s, &pcfg).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, front_end, alignment, network);
criterion_main!(benches);
