//! `hseg <synth|fit-guides|train|infer|eval|render>`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hseg_core::data::{derive_seed, synth_one, Sample};
use hseg_core::guides::{fit_guides, GuideSet};
use hseg_core::metrics::{evaluate, Prediction, SegScore};
use hseg_core::network::{SinUNet, Trainer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Header};
use crate::config::RunConfig;
use crate::dataset::{create_dir, file_name, labels_dir, list_pngs, load_dataset, load_label_dir, write_dataset, write_json};
use crate::error::{Error, Result};
use crate::guides_file::{load_guides, save_guides, GuidesFile};
use crate::png_io::{load_image, load_labels, save_labels, save_rgb, to_grayscale};
use crate::render::overlay;
use crate::tiling::segment;

#[derive(Debug, Parser)]
#[command(name = "hseg", version, about = "Instance segmentation with harmonic guide embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Plain convolutions, no positional channels.
    NoGuide,
    /// Normalized x/y coordinate channels instead of guide maps.
    Coordconv,
    /// Unfitted guides with frequencies drawn from (0, 50).
    Random,
    /// Unfitted guides with frequencies drawn from (0, 5).
    Low,
    /// Unfitted guides with frequencies drawn from (45, 50).
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    Sbd,
    Dic,
    Ap,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Random seed; image i depends only on (seed, i).
        #[arg(long)]
        seed: u64,
        /// blobs, rods or worms.
        #[arg(long)]
        kind: Option<String>,
        /// Number of images.
        #[arg(long)]
        images: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit guide functions on a dataset's label maps.
    FitGuides {
        /// Dataset directory (label maps in `labels/`).
        #[arg(long)]
        data: PathBuf,
        /// Guide file to write (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Seed for initialization and minibatch sampling.
        #[arg(long)]
        seed: u64,
        /// Exit with code 3 unless the sweep loss reaches zero.
        #[arg(long)]
        strict: bool,
        /// Also write the fitting trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the embedding network.
    Train {
        /// Dataset directory with `images/` and `labels/`.
        #[arg(long)]
        data: PathBuf,
        /// Fitted guides; not used by the random/low/high ablations.
        #[arg(long)]
        guides: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Seed for initialization, augmentation and batch order.
        #[arg(long)]
        seed: u64,
        /// Train a baseline instead of the fitted-guide model.
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Segment an image or a directory of images.
    Infer {
        /// Image file, or directory of images (or of `images/`).
        #[arg(long)]
        input: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Guide file the checkpoint was trained with; not needed for no-guide or coordconv models.
        #[arg(long)]
        guides: Option<PathBuf>,
        /// Output directory; receives `labels/*.png` and `scores.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Tile size `WxH`.
        #[arg(long, value_parser = parse_size)]
        tile: Option<(usize, usize)>,
        /// Label map or directory of label maps used as foreground instead of
        /// the predicted one.
        #[arg(long)]
        fg_mask: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        /// Predicted label maps (directory, or one with `labels/`).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth label maps (directory, or one with `labels/`).
        #[arg(long)]
        gt: PathBuf,
        /// JSON report; a per-image CSV is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Metrics to report.
        #[arg(long, value_enum, default_value = "all")]
        metric: MetricChoice,
        /// Score SBD on `WxH` crops and average them.
        #[arg(long, value_parser = parse_size)]
        per_crop: Option<(usize, usize)>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a label map over its image.
    Render {
        /// Input image.
        #[arg(long)]
        image: PathBuf,
        /// Label map to draw.
        #[arg(long)]
        labels: PathBuf,
        /// RGB PNG to write.
        #[arg(long)]
        out: PathBuf,
        /// Opacity of the instance colours.
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(w)?, p(h)?))
}

/// Parses arguments and runs a command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    match cli.command {
        Command::Synth {
            out,
            seed,
            kind,
            images,
            common,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = kind {
                extra.push(format!("synth.kind={}", toml_string(&k)));
            }
            if let Some(n) = images {
                extra.push(format!("synth.images={n}"));
            }
            let cfg = load_config(&common, extra)?;
            cmd_synth(&cfg, seed, &out)
        }
        Command::FitGuides {
            data,
            out,
            seed,
            strict,
            trace,
            common,
        } => cmd_fit_guides(&load_config(&common, vec![])?, &data, &out, seed, strict, trace.as_deref()),
        Command::Train {
            data,
            guides,
            out,
            seed,
            ablation,
            epochs,
            loss_csv,
            resume,
            common,
        } => {
            let extra = epochs.map(|e| format!("train.epochs={e}")).into_iter().collect();
            let cfg = load_config(&common, extra)?;
            let loss_csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            cmd_train(
                &cfg,
                &TrainArgs {
                    data: &data,
                    guides: guides.as_deref(),
                    out: &out,
                    seed,
                    ablation,
                    loss_csv: &loss_csv,
                    resume: resume.as_deref(),
                },
            )
        }
        Command::Infer {
            input,
            checkpoint,
            guides,
            out,
            tile,
            fg_mask,
            common,
        } => {
            let mut cfg = load_config(&common, vec![])?;
            if tile.is_some() {
                cfg.infer.tile = tile;
            }
            cmd_infer(&cfg, &input, &checkpoint, guides.as_deref(), &out, fg_mask.as_deref())
        }
        Command::Eval {
            pred,
            gt,
            out,
            metric,
            per_crop,
            common,
        } => {
            let mut cfg = load_config(&common, vec![])?;
            if per_crop.is_some() {
                cfg.eval.per_crop = per_crop;
            }
            cmd_eval(&cfg, &pred, &gt, &out, metric).map(|_| ())
        }
        Command::Render {
            image,
            labels,
            out,
            alpha,
        } => cmd_render(&image, &labels, &out, alpha),
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn load_config(common: &Common, extra: Vec<String>) -> Result<RunConfig> {
    if let Some(path) = &common.config {
        if !path.is_file() {
            return Err(Error::Usage(format!("config file {} does not exist", path.display())));
        }
    }
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} is not a directory", path.display())))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn cmd_synth(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let mut synth = cfg.synth.clone();
    synth.seed = seed;
    synth.validate()?;
    let samples: Vec<Sample> = (0..synth.images)
        .into_par_iter()
        .map(|i| synth_one(&synth, i))
        .collect::<hseg_core::Result<_>>()?;
    write_dataset(out, &samples, Some(&synth))?;
    eprintln!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

pub fn cmd_fit_guides(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    seed: u64,
    strict: bool,
    trace: Option<&Path>,
) -> Result<()> {
    require_dir(data)?;
    let maps: Vec<_> = load_label_dir(data)?.into_iter().map(|(_, m)| m).collect();
    let fit = fit_guides(&maps, &cfg.guides, seed)?;
    let mut file = GuidesFile::new(&fit.guides, seed);
    file.sweep_loss = Some(fit.sweep_loss);
    file.iterations = Some(fit.iterations);
    ensure_parent(out)?;
    save_guides(&file, out)?;
    if let Some(path) = trace {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        for p in &fit.trace {
            w.serialize(p).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    eprintln!(
        "sweep loss {} after {} iterations ({})",
        fit.sweep_loss,
        fit.iterations,
        if fit.converged { "converged" } else { "not converged" }
    );
    if strict && !fit.converged {
        return Err(Error::Convergence(format!(
            "guide fitting stopped at sweep loss {} after {} iterations",
            fit.sweep_loss, fit.iterations
        )));
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub guides: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
    pub ablation: Option<Ablation>,
    pub loss_csv: &'a Path,
    pub resume: Option<&'a Path>,
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    require_dir(args.data)?;
    let sampled = match args.ablation {
        Some(Ablation::Random) => Some((0.0, 50.0)),
        Some(Ablation::Low) => Some((0.0, 5.0)),
        Some(Ablation::High) => Some((45.0, 50.0)),
        _ => None,
    };
    let guides = match (sampled, args.guides) {
        (Some(range), _) => {
            let g = GuideSet::random(cfg.guides.n, cfg.guides.margin, range, derive_seed(args.seed, 0x6775))?;
            let path = with_suffix(args.out, ".guides.json");
            ensure_parent(&path)?;
            save_guides(&GuidesFile::new(&g, args.seed), &path)?;
            g
        }
        (None, Some(path)) => {
            require_file(path)?;
            load_guides(path)?.guide_set()?
        }
        (None, None) => return Err(Error::Usage("train needs --guides unless a random/low/high ablation is set".into())),
    };
    let mut net = cfg.network.clone();
    net.embedding_dim = guides.n();
    match args.ablation {
        Some(Ablation::NoGuide) => {
            net.sinconv_enabled = false;
            net.coordconv_mode = false;
        }
        Some(Ablation::Coordconv) => net.coordconv_mode = true,
        _ => {}
    }
    net.validate()?;

    let samples: Vec<Sample> = load_dataset(args.data)?.into_iter().map(|(_, s)| s).collect();
    if let Some(s) = samples.iter().find(|s| s.image.channels() != net.input_channels) {
        return Err(Error::Data(format!(
            "dataset images have {} channels, the network expects {}",
            s.image.channels(),
            net.input_channels
        )));
    }

    let mut trainer = match args.resume {
        Some(path) => {
            require_file(path)?;
            let ck = load_checkpoint(path)?;
            if ck.guide_digest != guides.digest() {
                return Err(Error::Data("checkpoint was trained with a different guide set".into()));
            }
            if ck.header.network != net {
                return Err(Error::Usage("checkpoint network configuration differs from the requested one".into()));
            }
            Trainer::resume(ck.model, ck.adam, ck.header.epoch, &guides, cfg.train.clone(), args.seed)?
        }
        None => {
            let model = SinUNet::new(net.clone(), derive_seed(args.seed, u64::MAX))?;
            Trainer::new(model, &guides, cfg.train.clone(), args.seed)?
        }
    };

    ensure_parent(args.out)?;
    ensure_parent(args.loss_csv)?;
    let mut csv_out = csv::Writer::from_writer(File::create(args.loss_csv).map_err(|e| Error::io(args.loss_csv, e))?);
    while trainer.epoch < cfg.train.epochs {
        let loss = trainer.run_epoch(&samples)?;
        csv_out.serialize(loss).map_err(|e| Error::io(args.loss_csv, e))?;
        csv_out.flush().map_err(|e| Error::io(args.loss_csv, e))?;
        eprintln!(
            "epoch {:>4}  l1 {:.5}  bce {:.5}  total {:.5}",
            loss.epoch, loss.l1, loss.bce, loss.total
        );
    }
    let ck = Checkpoint {
        header: Header {
            network: net,
            train: cfg.train.clone(),
            epoch: trainer.epoch,
            adam_step: trainer.adam.step,
            seed: args.seed,
        },
        guide_digest: guides.digest(),
        model: trainer.model,
        adam: trainer.adam,
    };
    save_checkpoint(&ck, args.out)
}

/// Input images: a single file, `dir/images/*.png`, or `dir/*.png`.
fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    require_dir(input)?;
    let sub = input.join("images");
    let files = list_pngs(if sub.is_dir() { &sub } else { input })?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG images under {}", input.display())));
    }
    Ok(files)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    image: String,
    id: u32,
    score: f64,
    area: usize,
}

pub fn cmd_infer(
    cfg: &RunConfig,
    input: &Path,
    checkpoint: &Path,
    guides: Option<&Path>,
    out: &Path,
    fg_mask: Option<&Path>,
) -> Result<()> {
    require_file(checkpoint)?;
    let images = input_images(input)?;
    let ck = load_checkpoint(checkpoint)?;
    let guides = match guides {
        Some(path) => {
            require_file(path)?;
            let g = load_guides(path)?.guide_set()?;
            if g.digest() != ck.guide_digest {
                return Err(Error::Data("guides do not match the checkpoint's guide set".into()));
            }
            Some(g)
        }
        None => None,
    };
    let model = ck.model;
    let tile = cfg.infer.tile.unwrap_or(model.config().tile);
    let masks: Option<BTreeMap<String, PathBuf>> = match fg_mask {
        Some(p) if p.is_file() => images.first().map(|i| BTreeMap::from([(file_name(i), p.to_path_buf())])),
        Some(p) => {
            require_dir(p)?;
            Some(list_pngs(&labels_dir(p))?.into_iter().map(|m| (file_name(&m), m)).collect())
        }
        None => None,
    };
    let label_out = out.join("labels");
    create_dir(&label_out)?;

    let results: Vec<(String, crate::tiling::Segmentation)> = images
        .par_iter()
        .map(|path| {
            let name = file_name(path);
            let mut image = load_image(path)?;
            if image.channels() != model.config().input_channels {
                image = to_grayscale(image);
            }
            let mask = match &masks {
                Some(m) => {
                    let p = m
                        .get(&name)
                        .ok_or_else(|| Error::Data(format!("no foreground mask for {name}")))?;
                    Some(load_labels(p)?)
                }
                None => None,
            };
            let seg = segment(
                &image,
                &model,
                guides.as_ref(),
                tile,
                cfg.infer.fg_threshold,
                mask.as_ref(),
                &cfg.extract,
            )?;
            save_labels(&seg.labels, &label_out.join(&name))?;
            Ok((name, seg))
        })
        .collect::<Result<_>>()?;

    let scores_path = out.join("scores.csv");
    let mut w = csv::Writer::from_path(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
    for (name, seg) in &results {
        let mut area = vec![0usize; seg.scores.len()];
        for &id in seg.labels.data() {
            if id != 0 {
                area[id as usize - 1] += 1;
            }
        }
        for (k, &score) in seg.scores.iter().enumerate() {
            w.serialize(ScoreRow {
                image: name.clone(),
                id: k as u32 + 1,
                score,
                area: area[k],
            })
            .map_err(|e| Error::io(&scores_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&scores_path, e))?;
    eprintln!("segmented {} images into {}", results.len(), out.display());
    Ok(())
}

fn read_scores(dir: &Path) -> Result<BTreeMap<String, BTreeMap<u32, f64>>> {
    let path = dir.join("scores.csv");
    let mut out: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    if !path.is_file() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, e))?;
    for row in r.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| Error::io(&path, e))?;
        out.entry(row.image).or_default().insert(row.id, row.score);
    }
    Ok(out)
}

/// JSON evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub metric: MetricChoice,
    pub images: usize,
    pub sbd: Option<f64>,
    pub dic: Option<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ImageRow<'a> {
    image: &'a str,
    sbd: f64,
    dic: usize,
    pred_count: usize,
    gt_count: usize,
}

pub fn cmd_eval(cfg: &RunConfig, pred: &Path, gt: &Path, out: &Path, metric: MetricChoice) -> Result<Report> {
    require_dir(pred)?;
    require_dir(gt)?;
    let gts = load_label_dir(gt)?;
    if gts.is_empty() {
        return Err(Error::Data(format!("no ground-truth label maps under {}", gt.display())));
    }
    let preds: BTreeMap<String, _> = load_label_dir(pred)?.into_iter().collect();
    let mut scores = read_scores(pred)?;
    let mut pairs = Vec::with_capacity(gts.len());
    for (name, g) in &gts {
        let p = preds
            .get(name)
            .ok_or_else(|| Error::Data(format!("no prediction for {name}")))?;
        pairs.push((
            Prediction {
                labels: p.clone(),
                scores: scores.remove(name).unwrap_or_default(),
            },
            g.clone(),
        ));
    }
    let (s, per_image) = evaluate(&pairs, &cfg.eval)?;
    let want = |m: MetricChoice| metric == MetricChoice::All || metric == m;
    let ap = |v: Option<f64>| if want(MetricChoice::Ap) { v } else { None };
    let SegScore {
        sbd,
        dic,
        ap: ap_all,
        ap50,
        ap75,
        ap_s,
        ap_m,
        ap_l,
    } = s;
    let report = Report {
        format_version: 1,
        metric,
        images: pairs.len(),
        sbd: want(MetricChoice::Sbd).then_some(sbd),
        dic: want(MetricChoice::Dic).then_some(dic),
        ap: ap(ap_all),
        ap50: ap(ap50),
        ap75: ap(ap75),
        ap_s: ap(ap_s),
        ap_m: ap(ap_m),
        ap_l: ap(ap_l),
    };
    ensure_parent(out)?;
    write_json(&report, out)?;
    let csv_path = out.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    for ((name, _), row) in gts.iter().zip(&per_image) {
        w.serialize(ImageRow {
            image: name,
            sbd: row.sbd,
            dic: row.dic,
            pred_count: row.pred_count,
            gt_count: row.gt_count,
        })
        .map_err(|e| Error::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(report)
}

pub fn cmd_render(image: &Path, labels: &Path, out: &Path, alpha: f32) -> Result<()> {
    require_file(image)?;
    require_file(labels)?;
    let img = load_image(image)?;
    let lab = load_labels(labels)?;
    let rgb = overlay(&img, &lab, alpha)?;
    ensure_parent(out)?;
    save_rgb(img.width(), img.height(), &rgb, out)
}

/// Removes a file if present; used by tests and scripts.
pub fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}
