//! Receptive-field probes and layer-by-layer parameter arithmetic.

use attncut::generator::{Generator, GeneratorConfig, DEFAULT_TAPS};
use attncut::nn::{NormKind, ParamStore};
use candle_core::{DType, Device, IndexOp, Tensor, Var};

pub const RECEPTIVE_FIELDS: [usize; 5] = [1, 9, 15, 35, 99];

/// Replace every weight with a strictly positive value and every bias with
/// zero, so that with no normalization the encoder is a positive linear map.
fn make_positive_linear(store: &ParamStore) {
    for (name, var) in store.iter() {
        let t = var.as_tensor();
        let new = if name.ends_with(".bias") {
            t.zeros_like().unwrap()
        } else {
            let fan_in = (t.elem_count() / t.dim(0).unwrap()) as f64;
            ((t.abs().unwrap() + 0.01).unwrap() / fan_in).unwrap()
        };
        var.set(&new).unwrap();
    }
}

fn positive_encoder(size: usize) -> Generator {
    let cfg = GeneratorConfig {
        base_channels: 2,
        n_residual_blocks: 6,
        norm: NormKind::None,
        ..GeneratorConfig::default()
    };
    let mut store = ParamStore::new(5, DType::F64);
    let gen = Generator::new(cfg, &mut store).unwrap();
    make_positive_linear(&store);
    assert_eq!(size % gen.config().size_multiple(), 0);
    gen
}

/// Input pixels (along one axis) that influence the centre location of each
/// tap, measured from the support of the exact input gradient.
pub fn measured_fields(size: usize) -> Vec<usize> {
    let gen = positive_encoder(size);
    let mut fields = Vec::new();
    for (l, tap) in DEFAULT_TAPS.iter().enumerate() {
        let input = Var::from_tensor(&Tensor::full(0.5f64, (1, 3, size, size), &Device::Cpu).unwrap()).unwrap();
        let stack = gen.encode_features(input.as_tensor(), &[*tap]).unwrap();
        let map = &stack.maps[0];
        let (_, _, h, w) = map.dims4().unwrap();
        let probe = map.i((0, .., h / 2, w / 2)).unwrap().sum_all().unwrap();
        let grads = probe.backward().unwrap();
        let g = grads.get(input.as_tensor()).unwrap().abs().unwrap().sum(1).unwrap().i(0).unwrap();
        let g: Vec<Vec<f64>> = g.to_vec2().unwrap();
        let rows: Vec<usize> = (0..size).filter(|&r| g[r].iter().any(|&v| v != 0.0)).collect();
        let cols: Vec<usize> = (0..size).filter(|&c| g.iter().any(|row| row[c] != 0.0)).collect();
        let extent = |v: &[usize]| v.last().unwrap() - v.first().unwrap() + 1;
        assert_eq!(extent(&rows), rows.len(), "tap {l}: support has holes");
        assert_eq!(extent(&rows), extent(&cols), "tap {l}: field is not square");
        fields.push(extent(&rows));
    }
    fields
}

/// Flips (adds 1 to) the centre pixel of a zero image and compares the set of
/// changed locations of every tap with the locations whose back-projected
/// field, `|stride·i − p| ≤ (rf − 1)/2` on each axis, covers the pixel.
pub fn impulse_matches_back_projection(size: usize) -> Result<(), String> {
    let gen = positive_encoder(size);
    let p = size / 2;
    let mut impulse = vec![0.0f64; 3 * size * size];
    for c in 0..3 {
        impulse[c * size * size + p * size + p] = 1.0;
    }
    let zero = Tensor::zeros((1, 3, size, size), DType::F64, &Device::Cpu).unwrap();
    let hit = Tensor::from_vec(impulse, (1, 3, size, size), &Device::Cpu).unwrap();
    let base = gen.encode_features(&zero, &DEFAULT_TAPS).unwrap();
    let moved = gen.encode_features(&hit, &DEFAULT_TAPS).unwrap();
    for (l, rf) in RECEPTIVE_FIELDS.iter().enumerate() {
        let stride = size / base.maps[l].dim(2).unwrap();
        let a: Vec<Vec<f64>> = base.maps[l].i((0, ..)).unwrap().sum(0).unwrap().to_vec2().unwrap();
        let b: Vec<Vec<f64>> = moved.maps[l].i((0, ..)).unwrap().sum(0).unwrap().to_vec2().unwrap();
        let half = (rf - 1) / 2;
        for (i, (ra, rb)) in a.iter().zip(&b).enumerate() {
            for (j, (va, vb)) in ra.iter().zip(rb).enumerate() {
                let covers = (stride * i).abs_diff(p) <= half && (stride * j).abs_diff(p) <= half;
                if covers != (va != vb) {
                    return Err(format!(
                        "tap {l} (rf {rf}, stride {stride}): location ({i},{j}) changed={} but covers={covers}",
                        va != vb
                    ));
                }
            }
        }
    }
    Ok(())
}

/// CycleGAN ResNet-9 generator at ngf = 64, layer by layer:
/// (c_in, c_out, kernel) of every conv/transposed conv, each with a bias.
fn resnet9_conv_table() -> Vec<(usize, usize, usize)> {
    let mut t = vec![(3, 64, 7), (64, 128, 3), (128, 256, 3)];
    t.extend(std::iter::repeat_n((256, 256, 3), 18));
    t.extend([(256, 128, 3), (128, 64, 3), (64, 3, 7)]);
    t
}

/// Channel counts of the instance-norm layers (affine: scale and shift each).
pub fn resnet9_norm_channels() -> Vec<usize> {
    let mut n = vec![64, 128, 256];
    n.extend(std::iter::repeat_n(256, 18));
    n.extend([128, 64]);
    n
}

pub fn expected_generator_params() -> usize {
    let convs: usize = resnet9_conv_table().iter().map(|(i, o, k)| i * o * k * k + o).sum();
    let norms: usize = resnet9_norm_channels().iter().map(|c| 2 * c).sum();
    convs + norms
}

/// PatchGAN 70×70 at ndf = 64: 4×4 convs 3→64→128→256→512→1, each with a bias,
/// and affine instance norm on the three middle convs.
pub fn expected_discriminator_params() -> usize {
    let convs: usize = [(3, 64), (64, 128), (128, 256), (256, 512), (512, 1)]
        .iter()
        .map(|(i, o)| i * o * 16 + o)
        .sum();
    convs + 2 * (128 + 256 + 512)
}
