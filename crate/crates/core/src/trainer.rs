//! Alternating least-squares adversarial training with patch contrastive terms.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};

use crate::attention::AttentionSampler;
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::TrainConfig;
use crate::contrastive::{patch_nce_from_features, scalar, ProjectionHeads};
use crate::data_io::UnpairedDataset;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{FeatureStack, Generator};
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::rng::derive_seed;

pub const LOSS_CSV_HEADER: &str = "step,d_loss,g_gan,nce_x,nce_y,total_g";
pub const LOSS_CSV: &str = "losses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// Number of completed steps including this one.
    pub step: u64,
    pub d_loss: f64,
    pub g_gan: f64,
    pub nce_x: f64,
    /// Zero when the identity term is disabled (it is then never computed).
    pub nce_y: f64,
    pub total_g: f64,
}

impl LossReport {
    /// Values use the shortest representation that parses back exactly.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_gan, self.nce_x, self.nce_y, self.total_g
        )
    }

    pub fn parse_csv(text: &str) -> Result<Vec<LossReport>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == LOSS_CSV_HEADER => {}
            Some(h) => return Err(Error::Config(format!("unexpected loss CSV header `{h}`"))),
            None => return Err(Error::Config("loss CSV is empty".into())),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let bad = || Error::Config(format!("malformed loss CSV row {}: `{line}`", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(bad());
                }
                let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
                Ok(LossReport {
                    step: f[0].trim().parse().map_err(|_| bad())?,
                    d_loss: num(f[1])?,
                    g_gan: num(f[2])?,
                    nce_x: num(f[3])?,
                    nce_y: num(f[4])?,
                    total_g: num(f[5])?,
                })
            })
            .collect()
    }
}

/// `½·mean((real − 1)²) + ½·mean(fake²)`.
pub fn lsgan_d_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = (real_scores - 1.0)?.sqr()?.mean_all()?;
    let fake = fake_scores.sqr()?.mean_all()?;
    Ok(((real + fake)? * 0.5)?)
}

/// `mean((fake − 1)²)`.
pub fn lsgan_g_loss(fake_scores: &Tensor) -> Result<Tensor> {
    Ok((fake_scores - 1.0)?.sqr()?.mean_all()?)
}

pub fn total_generator_objective(g_gan: f64, nce_x: f64, nce_y: f64, lambda_x: f64, lambda_y: f64) -> f64 {
    let identity = if lambda_y == 0.0 { 0.0 } else { lambda_y * nce_y };
    g_gan + lambda_x * nce_x + identity
}

fn check_finite(name: &str, value: f64, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{name} is {value} at step {step}")))
    }
}

/// Parameter counts per owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub generator: usize,
    pub discriminator: usize,
    pub heads: usize,
    pub attention: usize,
}

/// Complete training state: networks, heads, attention scorers and optimizers.
pub struct Trainer {
    cfg: TrainConfig,
    gen_store: ParamStore,
    disc_store: ParamStore,
    head_store: ParamStore,
    attn_store: ParamStore,
    gen: Generator,
    disc: Discriminator,
    heads: ProjectionHeads,
    sampler: AttentionSampler,
    opt_g: Adam,
    opt_d: Adam,
    step: u64,
    identity_calls: u64,
    generator_frozen: bool,
    audit: bool,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let dtype = cfg.dtype()?;
        let gcfg = cfg.generator();
        let channels = gcfg
            .tap_layers
            .iter()
            .map(|t| gcfg.tap_channels(*t))
            .collect::<Result<Vec<_>>>()?;
        let mut gen_store = ParamStore::new(derive_seed(cfg.seed, "generator"), dtype);
        let mut disc_store = ParamStore::new(derive_seed(cfg.seed, "discriminator"), dtype);
        let mut head_store = ParamStore::new(derive_seed(cfg.seed, "heads"), dtype);
        let mut attn_store = ParamStore::new(derive_seed(cfg.seed, "attention"), dtype);
        let gen = Generator::new(gcfg, &mut gen_store)?;
        let disc = Discriminator::new(cfg.discriminator(), &mut disc_store)?;
        let heads = ProjectionHeads::new(&mut head_store, &channels, cfg.nce_dim, cfg.init_std)?;
        let sampler = AttentionSampler::new(cfg.attention_config(), &channels, &mut attn_store)?;
        let betas = (cfg.beta1, cfg.beta2);
        Ok(Self {
            opt_g: Adam::new(cfg.lr, betas),
            opt_d: Adam::new(cfg.lr, betas),
            cfg,
            gen_store,
            disc_store,
            head_store,
            attn_store,
            gen,
            disc,
            heads,
            sampler,
            step: 0,
            identity_calls: 0,
            generator_frozen: false,
            audit: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn heads(&self) -> &ProjectionHeads {
        &self.heads
    }

    pub fn sampler(&self) -> &AttentionSampler {
        &self.sampler
    }

    pub fn generator_store(&self) -> &ParamStore {
        &self.gen_store
    }

    pub fn discriminator_store(&self) -> &ParamStore {
        &self.disc_store
    }

    pub fn head_store(&self) -> &ParamStore {
        &self.head_store
    }

    pub fn attention_store(&self) -> &ParamStore {
        &self.attn_store
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            generator: self.gen_store.num_params(),
            discriminator: self.disc_store.num_params(),
            heads: self.head_store.num_params(),
            attention: self.attn_store.num_params(),
        }
    }

    /// Times the identity term has been evaluated.
    pub fn identity_calls(&self) -> u64 {
        self.identity_calls
    }

    /// While frozen the generator-side update (generator and heads) is skipped.
    pub fn freeze_generator(&mut self, frozen: bool) {
        self.generator_frozen = frozen;
    }

    /// When enabled every step verifies that each update phase leaves the
    /// other phase's parameters bit-identical.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.set_lr(lr);
        self.opt_d.set_lr(lr);
    }

    fn step_seed(&self) -> u64 {
        derive_seed(self.cfg.seed, &format!("step{}", self.step))
    }

    fn nce(&self, source: &FeatureStack, translated_img: &Tensor, seed: u64) -> Result<Tensor> {
        let translated = self.gen.encode_features(translated_img, self.gen.tap_layers())?;
        Ok(patch_nce_from_features(source, &translated, &self.heads, &self.sampler, &self.cfg.nce(), seed)?.loss)
    }

    fn fingerprints(&self, stores: &[&ParamStore]) -> Result<Vec<String>> {
        stores.iter().map(|s| s.fingerprint()).collect()
    }

    /// One discriminator update followed by one generator+heads update.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<LossReport> {
        let dtype = self.gen_store.dtype();
        let (x, y) = (x.to_dtype(dtype)?, y.to_dtype(dtype)?);
        let next = self.step + 1;
        let seed = self.step_seed();
        let (y_hat, source_taps) = self.gen.forward_with_taps(&x)?;

        let g_side = if self.audit {
            self.fingerprints(&[&self.gen_store, &self.head_store, &self.attn_store])?
        } else {
            Vec::new()
        };
        let d_loss_t = lsgan_d_loss(&self.disc.discriminate(&y)?, &self.disc.discriminate(&y_hat.detach())?)?;
        let d_loss = check_finite("d_loss", scalar(&d_loss_t)?, next)?;
        self.opt_d.step(&[&self.disc_store], &d_loss_t.backward()?)?;
        if self.audit && g_side != self.fingerprints(&[&self.gen_store, &self.head_store, &self.attn_store])? {
            return Err(Error::Numeric(format!(
                "discriminator update changed generator-side parameters at step {next}"
            )));
        }

        let g_gan_t = lsgan_g_loss(&self.disc.discriminate(&y_hat)?)?;
        let g_gan = check_finite("g_gan", scalar(&g_gan_t)?, next)?;
        let nce_x_t = self.nce(&source_taps, &y_hat, derive_seed(seed, "x"))?;
        let nce_x = check_finite("nce_x", scalar(&nce_x_t)?, next)?;
        let (lx, ly) = (self.cfg.lambda_x, self.cfg.lambda_y);
        let mut total_t = (g_gan_t.to_dtype(DType::F64)? + (nce_x_t.to_dtype(DType::F64)? * lx)?)?;
        let mut nce_y = 0.0;
        if ly != 0.0 {
            self.identity_calls += 1;
            let (y_idt, target_taps) = self.gen.forward_with_taps(&y)?;
            let nce_y_t = self.nce(&target_taps, &y_idt, derive_seed(seed, "y"))?;
            nce_y = check_finite("nce_y", scalar(&nce_y_t)?, next)?;
            total_t = (total_t + (nce_y_t.to_dtype(DType::F64)? * ly)?)?;
        }
        let total_g = check_finite("total_g", scalar(&total_t)?, next)?;

        if !self.generator_frozen {
            let d_side = if self.audit {
                self.fingerprints(&[&self.disc_store, &self.attn_store])?
            } else {
                Vec::new()
            };
            self.opt_g.step(&[&self.gen_store, &self.head_store], &total_t.backward()?)?;
            if self.audit && d_side != self.fingerprints(&[&self.disc_store, &self.attn_store])? {
                return Err(Error::Numeric(format!(
                    "generator update changed discriminator or attention parameters at step {next}"
                )));
            }
        }
        self.step = next;
        Ok(LossReport {
            step: next,
            d_loss,
            g_gan,
            nce_x,
            nce_y,
            total_g,
        })
    }

    /// Every parameter and optimizer moment, keyed for the checkpoint file.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for store in [&self.gen_store, &self.disc_store, &self.head_store, &self.attn_store] {
            out.extend(store.iter().map(|(n, v)| (n.clone(), v.as_tensor().clone())));
        }
        out.extend(self.opt_g.state_tensors("adam_g/"));
        out.extend(self.opt_d.state_tensors("adam_d/"));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta::new(self.cfg.clone(), self.step, self.opt_g.steps(), self.opt_d.steps());
        save_checkpoint(path, &self.state_tensors(), &meta)
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_checkpoint(path)?;
        let mut t = Self::new(meta.config).map_err(|e| Error::checkpoint(path, e.to_string()))?;
        for store in [&t.gen_store, &t.disc_store, &t.head_store, &t.attn_store] {
            store.load(&tensors, "").map_err(|e| Error::checkpoint(path, e.to_string()))?;
        }
        t.opt_g.load_state(&tensors, "adam_g/", meta.opt_g_steps)?;
        t.opt_d.load_state(&tensors, "adam_d/", meta.opt_d_steps)?;
        t.step = meta.step;
        Ok(t)
    }
}

/// Generator alone, rebuilt from a checkpoint for inference.
pub fn load_generator(path: &Path) -> Result<(TrainConfig, Generator)> {
    let (meta, tensors) = load_checkpoint(path)?;
    let mut store = ParamStore::new(0, meta.config.dtype()?);
    let gen = Generator::new(meta.config.generator(), &mut store)?;
    store.load(&tensors, "").map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok((meta.config, gen))
}

/// Steps for the full schedule: `epochs · ⌈|X| / batch⌉`, capped by `max_steps`.
pub fn total_steps(cfg: &TrainConfig, dataset: &UnpairedDataset) -> u64 {
    let full = cfg.epochs as u64 * dataset.steps_per_epoch(cfg.batch_size) as u64;
    if cfg.max_steps > 0 {
        full.min(cfg.max_steps)
    } else {
        full
    }
}

/// Constant rate, or linear decay to zero over the second half when enabled.
pub fn lr_at(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    let half = total / 2;
    if !cfg.lr_decay || step < half || total == half {
        cfg.lr
    } else {
        cfg.lr * (total - step) as f64 / (total - half) as f64
    }
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:06}.safetensors"))
}

/// Highest-step checkpoint in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let mut found: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "safetensors"))
        .collect();
    found.sort();
    found
        .pop()
        .ok_or_else(|| Error::checkpoint(&dir, "no checkpoints found"))
}

pub struct TrainOutcome {
    /// Reports produced by this invocation.
    pub reports: Vec<LossReport>,
    pub final_checkpoint: PathBuf,
}

fn open_loss_log(path: &Path, keep_through: u64) -> Result<File> {
    let mut text = format!("{LOSS_CSV_HEADER}\n");
    if keep_through > 0 {
        let existing = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for r in LossReport::parse_csv(&existing)? {
            if r.step <= keep_through {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

/// Runs from the trainer's current step to the end of the schedule, or to
/// `stop_at` completed steps if given. Writes `losses.csv` and checkpoints
/// under `run_dir`; a checkpoint always marks the start (step 0) and the end.
pub fn train(
    trainer: &mut Trainer,
    dataset: &UnpairedDataset,
    run_dir: &Path,
    stop_at: Option<u64>,
) -> Result<TrainOutcome> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let cfg = trainer.config().clone();
    let dtype = cfg.dtype()?;
    let total = total_steps(&cfg, dataset);
    let end = stop_at.map_or(total, |s| s.min(total));
    let log_path = run_dir.join(LOSS_CSV);
    let mut log = open_loss_log(&log_path, trainer.step())?;
    if trainer.step() == 0 {
        trainer.save(&checkpoint_path(run_dir, 0))?;
    }
    let mut reports = Vec::new();
    while trainer.step() < end {
        trainer.set_lr(lr_at(&cfg, trainer.step(), total));
        let (x, y) = dataset.batch(trainer.step(), cfg.batch_size, dtype)?;
        let report = trainer.train_step(&x, &y)?;
        writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        log::info!(
            "step {} d {:.4} g_gan {:.4} nce_x {:.4} nce_y {:.4} total {:.4}",
            report.step,
            report.d_loss,
            report.g_gan,
            report.nce_x,
            report.nce_y,
            report.total_g
        );
        if cfg.checkpoint_every > 0 && report.step % cfg.checkpoint_every == 0 && report.step != end {
            trainer.save(&checkpoint_path(run_dir, report.step))?;
        }
        reports.push(report);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = checkpoint_path(run_dir, trainer.step());
    trainer.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        reports,
        final_checkpoint,
    })
}
