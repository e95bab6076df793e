//! Run manifest written at the top of every run directory.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

const SOURCES: [(&str, &str); 20] = [
    ("attention.rs", include_str!("attention.rs")),
    ("checkpoint.rs", include_str!("checkpoint.rs")),
    ("cli.rs", include_str!("cli.rs")),
    ("config.rs", include_str!("config.rs")),
    ("contrastive.rs", include_str!("contrastive.rs")),
    ("data_io.rs", include_str!("data_io.rs")),
    ("discriminator.rs", include_str!("discriminator.rs")),
    ("embedder.rs", include_str!("embedder.rs")),
    ("error.rs", include_str!("error.rs")),
    ("generator.rs", include_str!("generator.rs")),
    ("lib.rs", include_str!("lib.rs")),
    ("main.rs", include_str!("main.rs")),
    ("manifest.rs", include_str!("manifest.rs")),
    ("metrics.rs", include_str!("metrics.rs")),
    ("nn.rs", include_str!("nn.rs")),
    ("optim.rs", include_str!("optim.rs")),
    ("plot.rs", include_str!("plot.rs")),
    ("rng.rs", include_str!("rng.rs")),
    ("toy.rs", include_str!("toy.rs")),
    ("trainer.rs", include_str!("trainer.rs")),
];

fn git_blob_sha256(content: &str) -> Sha256 {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    h
}

/// Hash of the compiled sources: a tree-style digest over per-file blob digests.
pub fn code_hash() -> String {
    let mut tree = Sha256::new();
    for (name, content) in SOURCES {
        tree.update(name.as_bytes());
        tree.update([0]);
        tree.update(git_blob_sha256(content).finalize());
    }
    format!("{:x}", tree.finalize())
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLayout {
    pub losses: String,
    pub checkpoints: String,
    pub data: Option<String>,
    pub plots: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub code_hash: String,
    pub seed: u64,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
    pub resumed_from: Option<String>,
    pub layout: RunLayout,
}

impl RunManifest {
    pub fn new(config: TrainConfig, data: Option<String>) -> Self {
        Self {
            seed: config.seed,
            config,
            code_hash: code_hash(),
            started_at_unix: unix_now(),
            finished_at_unix: None,
            resumed_from: None,
            layout: RunLayout {
                losses: crate::trainer::LOSS_CSV.into(),
                checkpoints: crate::trainer::CHECKPOINT_DIR.into(),
                data,
                plots: crate::plot::PLOT_DIR.into(),
            },
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
