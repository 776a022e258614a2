use criterion::{criterion_group, criterion_main, Criterion};
use fusesurv_bench::{bag, fusion_batch};
use fusesurv_core::encoders::{MilCoxModel, PoolingConfig};
use fusesurv_core::fusion::{FusionConfig, IntermediateFusionModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn intermediate(c: &mut Criterion) {
    let desk = FusionConfig { latent_dim: 32, layers: 2, heads: 4, ffn_dim: 64, ..FusionConfig::default() };
    for (name, cfg, n) in [("desk/300", desk, 300), ("full/8", FusionConfig::default(), 8)] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        let samples = fusion_batch(&cfg, n, 6);
        c.bench_function(&format!("intermediate_forward/{name}"), |b| {
            b.iter(|| model.log_risks(black_box(&samples)).unwrap())
        });
        c.bench_function(&format!("intermediate_forward_backward/{name}"), |b| {
            let mut model = model.clone();
            b.iter(|| {
                let (lrs, cache) = model.forward(black_box(&samples), None).unwrap();
                model.backward(&cache, &vec![1.0; lrs.len()]).unwrap();
            })
        });
    }
}

fn pooling(c: &mut Criterion) {
    let cfg = PoolingConfig::pathology();
    let model = MilCoxModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let x = bag(256, cfg.input_dim, 8);
    c.bench_function("attention_pooling/pathology_256x1024", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
}

criterion_group!(benches, intermediate, pooling);
criterion_main!(benches);
