use ftcnkit::arch::{build_canonical_scaled, remove_spatial_pooling, CanonicalName};
use ftcnkit::autograd::Tape;
use ftcnkit::model::{classify, encoder_block, spatial_shuffle, BlockVars, HeadConfig, Model, TransformerConfig};
use ftcnkit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_head() -> HeadConfig {
    HeadConfig::Transformer(TransformerConfig {
        layers: 1,
        dim: 32,
        heads: 4,
        head_dim: 8,
        mlp_dim: 64,
        tokens: 8,
        feature_dim: 128,
    })
}

/// Toy model with every parameter and running statistic jittered so no
/// branch is trivially zero.
fn jittered(arch: ftcnkit::arch::ArchSpec, seed: u64) -> Model<f32> {
    let mut m = Model::new(arch, toy_head(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in m.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    for r in m.running_mut().values_mut() {
        for v in r.mean.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        for v in r.var.data_mut() {
            *v = rng.gen_range(0.5..2.0);
        }
    }
    m
}

fn random_clip(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn constant_clip_collapses_to_one_pixel() {
    let arch = build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 16, 32, 32]);
    let m = jittered(arch, 3);
    let small = m.collapsed().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f32;
    for _ in 0..5 {
        let px = random_clip(&mut rng, vec![1, 3, 16, 1, 1]);
        let full = Tensor::from_fn(vec![1, 3, 16, 32, 32], |i| px.data()[i / (32 * 32)]);
        let a = m.predict(&full).unwrap()[0];
        let b = small.predict(&px).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn pool_free_ftcn_is_shuffle_invariant_bitwise() {
    let arch = remove_spatial_pooling(&build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 16, 8, 8]));
    let m = jittered(arch, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let clip = random_clip(&mut rng, vec![2, 3, 16, 8, 8]);
    let base = m.logits(&clip).unwrap();
    for seed in 1..4 {
        let shuffled = spatial_shuffle(&clip, seed).unwrap();
        let got = m.logits(&shuffled).unwrap();
        assert_eq!(
            base.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            got.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let arch = build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 16, 16, 16]);
    let m = jittered(arch, 9);
    let clip = random_clip(&mut ChaCha8Rng::seed_from_u64(1), vec![2, 3, 16, 16, 16]);
    assert_eq!(m.logits(&clip).unwrap(), m.logits(&clip).unwrap());
}

#[test]
fn zero_weight_block_is_identity() {
    let cfg = TransformerConfig {
        layers: 1,
        dim: 8,
        heads: 2,
        head_dim: 4,
        mlp_dim: 16,
        tokens: 3,
        feature_dim: 8,
    };
    let mut tape = Tape::<f64>::new();
    let z = tape.input(Tensor::from_fn(vec![1, 4, 8], |i| (i as f64 * 0.37).sin()));
    let mut zeros = |shape: Vec<usize>| tape.param("w", Tensor::zeros(shape));
    let w = BlockVars {
        ln1: (zeros(vec![8]), zeros(vec![8])),
        q: zeros(vec![8, 8]),
        k: zeros(vec![8, 8]),
        v: zeros(vec![8, 8]),
        out: (zeros(vec![8, 8]), zeros(vec![8])),
        ln2: (zeros(vec![8]), zeros(vec![8])),
        fc1: (zeros(vec![16, 8]), zeros(vec![16])),
        fc2: (zeros(vec![8, 16]), zeros(vec![8])),
    };
    let out = encoder_block(&mut tape, z, &w, &cfg).unwrap();
    assert_eq!(tape.value(out), tape.value(z));
}

#[test]
fn classifier_reads_class_token_only() {
    let run = |z: Tensor<f64>| {
        let mut tape = Tape::<f64>::new();
        let z = tape.input(z);
        let g = tape.input(Tensor::full(vec![4], 1.5));
        let s = tape.input(Tensor::full(vec![4], 0.1));
        let w = tape.input(Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.5, 0.1]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![0.05]));
        let (y, _) = classify(&mut tape, z, g, s, w, b).unwrap();
        tape.value(y).data().to_vec()
    };
    let z = Tensor::from_fn(vec![2, 5, 4], |i| (i as f64 * 0.61).cos());
    let mut perturbed = z.clone();
    for (i, v) in perturbed.data_mut().iter_mut().enumerate() {
        if (i / 4) % 5 != 0 {
            *v += 3.0;
        }
    }
    assert_eq!(run(z), run(perturbed));
}

#[test]
fn sigmoid_of_two() {
    let arch = build_canonical_scaled(CanonicalName::Ftcn, 16, [3, 16, 16, 16]);
    let mut m = Model::new(arch, toy_head(), 1).unwrap();
    let p = m.params_mut();
    *p.get_mut("head.bias").unwrap() = Tensor::from_vec(vec![2.0]);
    let clip = Tensor::zeros(vec![1, 3, 16, 16, 16]);
    let y: f32 = m.predict(&clip).unwrap()[0];
    assert!((y - 0.880_797_1).abs() < 1e-6, "{y}");
}
