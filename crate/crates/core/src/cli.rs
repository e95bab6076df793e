//! Command-line interface: train, translate, evaluate, plot.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::RgbImage;

use crate::attention::AttentionKind;
use crate::config::{Preset, TrainConfig};
use crate::data_io::{decode_rgb, list_images, load_folder, rgb_to_tensor, tensor_to_rgb, UnpairedDataset};
use crate::embedder::{Embedder, EmbedderKind};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::manifest::{unix_now, RunManifest};
use crate::metrics::{fid, inception_score, swd, MetricReport, SampleCounts, DEFAULT_IS_SPLITS, DEFAULT_PROJECTIONS};
use crate::plot::plot_run;
use crate::toy::{generate_toy_dataset, ToySpec};
use crate::trainer::{load_generator, train, Trainer};

#[derive(Debug, Parser)]
#[command(name = "attncut", version, about = "Attention-guided contrastive unpaired image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a translator; writes manifest, loss CSV and checkpoints to the run directory.
    Train(TrainArgs),
    /// Translate every image in a folder with a trained checkpoint.
    Translate(TranslateArgs),
    /// Compare two image folders with FID, IS and SWD.
    Evaluate(EvaluateArgs),
    /// Render loss (and metric) curves of a run directory.
    Plot(PlotArgs),
    /// Write the toy embedder's weights in the layout `pretrained:` loads.
    ExportEmbedder {
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat TOML file of config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub attention: Option<AttentionKind>,
    /// lambda_1_1 or lambda_10_0.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop after this many steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Generate and train on the synthetic two-domain dataset (64×64, reduced network).
    #[arg(long)]
    pub toy: bool,
    /// Dataset root holding the `train_x` and `train_y` folders.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Output directory (default `runs/<unix time>`).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed steps without changing the schedule.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub fake: PathBuf,
    /// toy-fixed-cnn or pretrained:<weights.safetensors>.
    #[arg(long, default_value = "toy-fixed-cnn")]
    pub embedder: EmbedderKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images are resized/cropped to this edge before embedding.
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = DEFAULT_PROJECTIONS)]
    pub projections: usize,
    #[arg(long, default_value_t = DEFAULT_IS_SPLITS)]
    pub splits: usize,
    /// JSON report file.
    #[arg(long, default_value = "metrics.json")]
    pub output: PathBuf,
    /// Append `fid,is_mean,is_std,swd` to this CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
}

/// Config from (toy or default) base, then file, then flags.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = if args.toy { TrainConfig::toy() } else { TrainConfig::default() };
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    if let Some(p) = args.preset {
        cfg.apply_preset(p);
    }
    if let Some(v) = args.attention {
        cfg.attention = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        ))
    }
}

/// Runs training and returns the run directory.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let (mut trainer, run_dir) = match &args.resume {
        Some(ckpt) => {
            let t = Trainer::from_checkpoint(ckpt)?;
            let dir = match &args.run_dir {
                Some(d) => d.clone(),
                None => ckpt
                    .parent()
                    .and_then(Path::parent)
                    .map(Path::to_path_buf)
                    .ok_or_else(|| Error::checkpoint(ckpt, "cannot infer run directory"))?,
            };
            (t, dir)
        }
        None => {
            let cfg = resolve_config(args)?;
            let dir = args
                .run_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}", unix_now())));
            (Trainer::new(cfg)?, dir)
        }
    };
    let cfg = trainer.config().clone();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let data_root = if args.toy {
        let root = run_dir.join("data");
        let spec = ToySpec {
            image_size: cfg.image_size,
            seed: cfg.seed,
            ..ToySpec::default()
        };
        generate_toy_dataset(&root, &spec)?;
        root
    } else {
        let root = args
            .data_root
            .clone()
            .ok_or_else(|| Error::Config("--data-root is required unless --toy is given".into()))?;
        require_dir(&root)?;
        root
    };
    let (dx, dy) = (data_root.join(&cfg.train_x), data_root.join(&cfg.train_y));
    require_dir(&dx)?;
    require_dir(&dy)?;
    let dataset = UnpairedDataset::load(&dx, &dy, cfg.image_size, cfg.seed)?.with_random_crop(cfg.random_crop);

    let mut manifest = RunManifest::new(cfg, Some(data_root.display().to_string()));
    manifest.resumed_from = args.resume.as_ref().map(|p| p.display().to_string());
    manifest.save(&run_dir)?;
    let outcome = train(&mut trainer, &dataset, &run_dir, args.stop_at)?;
    manifest.finished_at_unix = Some(unix_now());
    manifest.save(&run_dir)?;
    log::info!(
        "finished at step {}; checkpoint {}",
        trainer.step(),
        outcome.final_checkpoint.display()
    );
    Ok(run_dir)
}

/// Edge-replicates right/bottom up to a valid generator size, translates,
/// and crops back to the input size.
pub fn translate_rgb(gen: &Generator, img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let m = gen.config().size_multiple() as u32;
    let fit = |v: u32| v.div_ceil(m).max(2) * m;
    let (pw, ph) = (fit(w), fit(h));
    let padded = RgbImage::from_fn(pw, ph, |x, y| *img.get_pixel(x.min(w - 1), y.min(h - 1)));
    let x = rgb_to_tensor(&padded)?.to_dtype(gen.dtype())?.unsqueeze(0)?;
    let y = gen.translate(&x)?.squeeze(0)?;
    tensor_to_rgb(&y.narrow(1, 0, h as usize)?.narrow(2, 0, w as usize)?)
}

/// [`translate_rgb`] on a packed `width × height × 3` buffer.
pub fn translate_rgb8(gen: &Generator, width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image must be at least 1×1".into()));
    }
    let img = RgbImage::from_raw(width, height, pixels.to_vec()).ok_or_else(|| {
        Error::Shape(format!(
            "{} bytes do not form a {width}×{height} RGB image",
            pixels.len()
        ))
    })?;
    Ok(translate_rgb(gen, &img)?.into_raw())
}

/// One PNG per input image; the file stem is kept and the extension becomes `.png`.
pub fn cmd_translate(args: &TranslateArgs) -> Result<Vec<PathBuf>> {
    let (_, gen) = load_generator(&args.checkpoint)?;
    require_dir(&args.input)?;
    let inputs = list_images(&args.input)?;
    std::fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let mut written = Vec::new();
    for path in inputs {
        let out = translate_rgb(&gen, &decode_rgb(&path)?)?;
        let name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
        let dest = args.output.join(name).with_extension("png");
        out.save(&dest).map_err(|e| Error::Decode {
            path: dest.clone(),
            reason: format!("encode failed: {e}"),
        })?;
        written.push(dest);
    }
    Ok(written)
}

/// FID and SWD between the folders, IS of the `fake` folder.
pub fn evaluate_dirs(
    real: &Path,
    fake: &Path,
    embedder: &EmbedderKind,
    seed: u64,
    image_size: usize,
    projections: usize,
    splits: usize,
) -> Result<MetricReport> {
    require_dir(real)?;
    require_dir(fake)?;
    let (real_paths, real_imgs) = load_folder(real, image_size)?;
    let (fake_paths, fake_imgs) = load_folder(fake, image_size)?;
    for (dir, n) in [(real, real_paths.len()), (fake, fake_paths.len())] {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "{} holds {n} image(s); at least 2 are needed for a covariance",
                dir.display()
            )));
        }
    }
    let e = Embedder::from_kind(embedder)?;
    let real_set = e.embed(&real_imgs)?;
    let (fake_set, probs) = e.embed_and_classify(&fake_imgs)?;
    let (is_mean, is_std) = inception_score(&probs, splits)?;
    Ok(MetricReport {
        fid: fid(&real_set, &fake_set)?,
        is_mean,
        is_std,
        swd: swd(&real_set, &fake_set, projections, seed)?,
        counts: SampleCounts {
            real: real_paths.len(),
            fake: fake_paths.len(),
        },
        embedder: e.id(),
        seed,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    let report = evaluate_dirs(
        &args.real,
        &args.fake,
        &args.embedder,
        args.seed,
        args.image_size,
        args.projections,
        args.splits,
    )?;
    let json = serde_json::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
    println!("{json}");
    std::fs::write(&args.output, format!("{json}\n")).map_err(|e| Error::io(&args.output, e))?;
    if let Some(csv) = &args.csv {
        let new = !csv.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(csv)
            .map_err(|e| Error::io(csv, e))?;
        let mut text = String::new();
        if new {
            text.push_str("fid,is_mean,is_std,swd\n");
        }
        text.push_str(&format!("{},{},{},{}\n", report.fid, report.is_mean, report.is_std, report.swd));
        f.write_all(text.as_bytes()).map_err(|e| Error::io(csv, e))?;
    }
    Ok(report)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let dir = cmd_train(&a)?;
            println!("{}", dir.display());
        }
        Command::Translate(a) => {
            let n = cmd_translate(&a)?.len();
            println!("translated {n} image(s) into {}", a.output.display());
        }
        Command::Evaluate(a) => {
            cmd_evaluate(&a)?;
        }
        Command::Plot(a) => {
            for p in plot_run(&a.run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::ExportEmbedder { output } => Embedder::export_toy_weights(&output)?,
    }
    Ok(())
}
