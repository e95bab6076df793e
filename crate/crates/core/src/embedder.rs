//! Feature/class embedders used by the evaluation metrics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Tensor};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::EmbeddedSet;
use crate::nn::{softmax_last, Conv2d, Linear, ParamStore};

/// Feature width of the toy embedder.
pub const TOY_EMBED_DIM: usize = 32;
/// Class count of the toy embedder's classifier head.
pub const TOY_CLASSES: usize = 10;
pub const TOY_EMBED_SEED: u64 = 0x7e57_ed00;
const WIDTHS: [usize; 4] = [3, 16, 32, TOY_EMBED_DIM];
const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    /// Small CNN with weights generated from a fixed seed.
    ToyFixedCnn,
    /// Same architecture, weights read from a safetensors file.
    Pretrained(PathBuf),
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedderKind::ToyFixedCnn => f.write_str("toy-fixed-cnn"),
            EmbedderKind::Pretrained(p) => write!(f, "pretrained:{}", p.display()),
        }
    }
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "toy-fixed-cnn" {
            Ok(EmbedderKind::ToyFixedCnn)
        } else if let Some(path) = s.strip_prefix("pretrained:") {
            Ok(EmbedderKind::Pretrained(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!(
                "unknown embedder `{s}` (expected toy-fixed-cnn or pretrained:<weights.safetensors>)"
            )))
        }
    }
}

/// Three stride-2 3×3 conv + ReLU layers, global average pooling to
/// `TOY_EMBED_DIM` features, and a linear classifier to `TOY_CLASSES`.
pub struct Embedder {
    kind: EmbedderKind,
    convs: Vec<Conv2d>,
    classifier: Linear,
}

impl Embedder {
    fn build(kind: EmbedderKind) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(TOY_EMBED_SEED, DType::F64);
        let convs = WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = (2.0 / (9 * w[0]) as f64).sqrt();
                Conv2d::new(&mut store, &format!("embed.conv{i}"), w[0], w[1], 3, 2, 1, std)
            })
            .collect::<Result<Vec<_>>>()?;
        let std = (1.0 / TOY_EMBED_DIM as f64).sqrt();
        let classifier = Linear::new(&mut store, "embed.classifier", TOY_EMBED_DIM, TOY_CLASSES, std)?;
        Ok((Self { kind, convs, classifier }, store))
    }

    pub fn toy() -> Result<Self> {
        Ok(Self::build(EmbedderKind::ToyFixedCnn)?.0)
    }

    pub fn pretrained(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!(
                "pretrained embedder weights not found at {}. Provide a safetensors file with tensors \
                 embed.conv{{0,1,2}}.{{weight,bias}} and embed.classifier.{{weight,bias}} \
                 (write the toy layout with `attncut export-embedder <file>` and replace its values \
                 with trained weights), or use --embedder toy-fixed-cnn",
                path.display()
            )));
        }
        let (e, store) = Self::build(EmbedderKind::Pretrained(path.to_path_buf()))?;
        let tensors = candle_core::safetensors::load(path, store.device())
            .map_err(|err| Error::checkpoint(path, err.to_string()))?;
        store.load(&tensors, "").map_err(|err| Error::checkpoint(path, err.to_string()))?;
        Ok(e)
    }

    pub fn from_kind(kind: &EmbedderKind) -> Result<Self> {
        match kind {
            EmbedderKind::ToyFixedCnn => Self::toy(),
            EmbedderKind::Pretrained(p) => Self::pretrained(p),
        }
    }

    /// Writes the toy weights in the layout `pretrained:` expects.
    pub fn export_toy_weights(path: &Path) -> Result<()> {
        let (_, store) = Self::build(EmbedderKind::ToyFixedCnn)?;
        let tensors: std::collections::HashMap<String, Tensor> =
            store.iter().map(|(n, v)| (n.clone(), v.as_tensor().clone())).collect();
        candle_core::safetensors::save(&tensors, path).map_err(|e| Error::checkpoint(path, e.to_string()))
    }

    pub fn id(&self) -> String {
        self.kind.to_string()
    }

    pub fn dim(&self) -> usize {
        TOY_EMBED_DIM
    }

    pub fn classes(&self) -> usize {
        TOY_CLASSES
    }

    fn features_chunk(&self, images: &Tensor) -> Result<Tensor> {
        let mut h = images.to_dtype(DType::F64)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        Ok(h.mean((2, 3))?)
    }

    fn run(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let dims = images.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] < 8 || dims[3] < 8 {
            return Err(Error::Shape(format!("embedder expects M×3×H×W with H, W ≥ 8, got {dims:?}")));
        }
        let m = dims[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < m {
            let n = CHUNK.min(m - start);
            parts.push(self.features_chunk(&images.narrow(0, start, n)?)?);
            start += n;
        }
        let feats = Tensor::cat(&parts, 0)?;
        let probs = softmax_last(&self.classifier.forward(&feats)?)?;
        Ok((feats, probs))
    }

    pub fn embed(&self, images: &Tensor) -> Result<EmbeddedSet> {
        Ok(self.embed_and_classify(images)?.0)
    }

    /// Features and class probabilities for each image.
    pub fn embed_and_classify(&self, images: &Tensor) -> Result<(EmbeddedSet, Vec<Vec<f64>>)> {
        let (feats, probs) = self.run(images)?;
        let rows = feats.to_vec2::<f64>()?;
        let m = rows.len();
        let matrix = DMatrix::from_fn(m, TOY_EMBED_DIM, |i, j| rows[i][j]);
        Ok((EmbeddedSet::new(matrix, self.id())?, probs.to_vec2::<f64>()?))
    }
}

/// Convenience wrapper over [`Embedder::embed`].
pub fn embed_images(images: &Tensor, kind: &EmbedderKind) -> Result<EmbeddedSet> {
    Embedder::from_kind(kind)?.embed(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn images(m: usize) -> Tensor {
        let n = m * 3 * 16 * 16;
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        Tensor::from_vec(v, (m, 3, 16, 16), &Device::Cpu).unwrap()
    }

    #[test]
    fn deterministic_rows_and_dim() {
        let e = Embedder::toy().unwrap();
        let a = e.embed(&images(20)).unwrap();
        let b = Embedder::toy().unwrap().embed(&images(20)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dim()), (20, TOY_EMBED_DIM));
        let (_, probs) = e.embed_and_classify(&images(3)).unwrap();
        for row in probs {
            assert_eq!(row.len(), TOY_CLASSES);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pretrained_path_round_trip_and_missing_file() {
        let err = Embedder::pretrained(Path::new("/nonexistent/w.safetensors")).err().unwrap().to_string();
        assert!(err.contains("not found") && err.contains("toy-fixed-cnn"), "{err}");
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("w.safetensors");
        Embedder::export_toy_weights(&path).unwrap();
        let e = Embedder::pretrained(&path).unwrap();
        assert_eq!(e.embed(&images(2)).unwrap().features, Embedder::toy().unwrap().embed(&images(2)).unwrap().features);
        assert!(e.id().starts_with("pretrained:"));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("toy-fixed-cnn".parse::<EmbedderKind>().unwrap(), EmbedderKind::ToyFixedCnn);
        assert_eq!(
            "pretrained:/a/b".parse::<EmbedderKind>().unwrap(),
            EmbedderKind::Pretrained("/a/b".into())
        );
        assert!("inception".parse::<EmbedderKind>().is_err());
    }
}
