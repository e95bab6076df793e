mod common;

use attncut::attention::AttentionKind;
use attncut::config::TrainConfig;
use attncut::discriminator::{Discriminator, DiscriminatorConfig};
use attncut::generator::{Generator, GeneratorConfig, TapLayer, DEFAULT_TAPS};
use attncut::nn::{NormKind, ParamStore};
use attncut::trainer::Trainer;
use candle_core::{DType, Device, IndexOp, Tensor};
use sha2::{Digest, Sha256};

use common::fields::{
    expected_discriminator_params, expected_generator_params, impulse_matches_back_projection, measured_fields,
    resnet9_norm_channels, RECEPTIVE_FIELDS,
};

#[test]
fn receptive_fields_by_gradient_support() {
    assert_eq!(measured_fields(128), RECEPTIVE_FIELDS.to_vec());
    let cfg = GeneratorConfig::default();
    let analytic: Vec<usize> = DEFAULT_TAPS.iter().map(|t| cfg.receptive_field(*t).unwrap()).collect();
    assert_eq!(analytic, RECEPTIVE_FIELDS.to_vec());
}

#[test]
fn receptive_fields_by_single_pixel_perturbation() {
    impulse_matches_back_projection(128).unwrap();
}

#[test]
fn parameter_counts_match_layer_arithmetic() {
    // Without the affine norm parameters these are the familiar totals of the
    // reference ResNet-9 generator and 70×70 PatchGAN.
    let affine_g: usize = resnet9_norm_channels().iter().map(|c| 2 * c).sum();
    assert_eq!(expected_generator_params() - affine_g, 11_378_179);
    assert_eq!(expected_discriminator_params() - 2 * (128 + 256 + 512), 2_764_737);

    let mut gs = ParamStore::new(0, DType::F32);
    Generator::new(GeneratorConfig::default(), &mut gs).unwrap();
    assert_eq!(gs.num_params(), expected_generator_params());
    let mut ds = ParamStore::new(0, DType::F32);
    Discriminator::new(DiscriminatorConfig::default(), &mut ds).unwrap();
    assert_eq!(ds.num_params(), expected_discriminator_params());
}

#[test]
fn attention_never_changes_generator_or_discriminator() {
    let cfg = |kind| TrainConfig {
        attention: kind,
        ..common::tiny_config(32)
    };
    let reference = Trainer::new(cfg(AttentionKind::Random)).unwrap();
    let shapes = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
        s.iter().map(|(n, v)| (n.clone(), v.dims().to_vec())).collect()
    };
    for kind in AttentionKind::ALL {
        let t = Trainer::new(cfg(kind)).unwrap();
        assert_eq!(t.param_counts().generator, reference.param_counts().generator, "{kind}");
        assert_eq!(t.param_counts().discriminator, reference.param_counts().discriminator, "{kind}");
        assert_eq!(shapes(t.generator_store()), shapes(reference.generator_store()));
        assert_eq!(shapes(t.discriminator_store()), shapes(reference.discriminator_store()));
        assert!(t.generator_store().iter().all(|(n, _)| n.starts_with("gen.")));
        assert!(t.discriminator_store().iter().all(|(n, _)| n.starts_with("disc.")));
        assert!(t.head_store().iter().all(|(n, _)| n.starts_with("heads.")));
        assert!(t.attention_store().iter().all(|(n, _)| n.starts_with("attn.")));
        assert_eq!(t.attention_store().is_empty(), kind == AttentionKind::Random);
    }
}

#[test]
fn discriminator_scores_are_local() {
    let cfg = DiscriminatorConfig {
        base_channels: 4,
        norm: NormKind::None,
        ..DiscriminatorConfig::default()
    };
    let mut store = ParamStore::new(9, DType::F64);
    let disc = Discriminator::new(cfg.clone(), &mut store).unwrap();
    // 4×4 convs with padding 1 and strides 2, 2, 2, 1, 1: location i covers
    // input rows [8i − 23, 8i + 46].
    let field = |i: usize| -> (isize, isize) { (8 * i as isize - 23, 8 * i as isize + 46) };
    let (lo, hi) = field(2);
    assert_eq!(hi - lo + 1, cfg.receptive_field() as isize);

    let size = 128;
    let mut r = common::rng(3);
    let x = common::uniform_tensor(&mut r, &[1, 3, size, size], -1.0, 1.0);
    let score = |img: &Tensor| -> Vec<Vec<f64>> { disc.discriminate(img).unwrap().i((0, 0)).unwrap().to_vec2().unwrap() };
    let base = score(&x);
    assert_eq!(base.len(), cfg.score_map_size(size).unwrap());

    let mut data: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
    let at = |c: usize, row: usize, col: usize| c * size * size + row * size + col;
    for c in 0..3 {
        for row in (hi as usize + 1)..size {
            for col in 0..size {
                data[at(c, row, col)] = -data[at(c, row, col)] + 0.3;
            }
        }
    }
    let far = Tensor::from_vec(data.clone(), (1, 3, size, size), &Device::Cpu).unwrap();
    let moved = score(&far);
    for j in 0..base.len() {
        assert_eq!(moved[2][j], base[2][j], "score (2,{j}) changed by pixels outside its field");
    }
    assert_ne!(moved[base.len() - 1], base[base.len() - 1]);

    data[at(1, hi as usize, 10)] += 0.5;
    let near = Tensor::from_vec(data, (1, 3, size, size), &Device::Cpu).unwrap();
    assert_ne!(score(&near)[2][1], moved[2][1], "pixel inside the field left the score unchanged");
}

/// Generator whose residual blocks contribute nothing: the trunk passes
/// through every block unchanged.
fn identity_trunk_generator() -> (Generator, ParamStore) {
    let cfg = GeneratorConfig {
        base_channels: 4,
        n_residual_blocks: 6,
        ..GeneratorConfig::default()
    };
    let mut store = ParamStore::new(2024, DType::F32);
    let gen = Generator::new(cfg, &mut store).unwrap();
    for (name, var) in store.iter() {
        if name.starts_with("gen.res") && name.contains(".norm2.") {
            var.set(&var.as_tensor().zeros_like().unwrap()).unwrap();
        }
    }
    (gen, store)
}

/// Checksum of the identity-trunk generator's output on a fixed input,
/// rounded to 1e-5 so it is insensitive to last-bit differences.
const IDENTITY_GENERATOR_CHECKSUM: &str = "78a4bad84ac4ca0446f809d18034976d6a511a5ce13fa127decb2415dc8c2299";

#[test]
fn identity_trunk_generator_regression() {
    let (gen, _) = identity_trunk_generator();
    let x = common::image_batch(77, 1, 32, DType::F32);
    let taps = [TapLayer::Res(1), TapLayer::Res(3), TapLayer::Res(6)];
    let stack = gen.encode_features(&x, &taps).unwrap();
    let first: Vec<f32> = stack.maps[0].flatten_all().unwrap().to_vec1().unwrap();
    for m in &stack.maps[1..] {
        assert_eq!(m.flatten_all().unwrap().to_vec1::<f32>().unwrap(), first);
    }

    let out: Vec<f32> = gen.translate(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let mut h = Sha256::new();
    for v in &out {
        h.update(format!("{:.5};", v).as_bytes());
    }
    let digest = format!("{:x}", h.finalize());
    assert_eq!(digest, IDENTITY_GENERATOR_CHECKSUM, "output checksum changed");
}
