use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Device;
use rayon::prelude::*;
use serde::Serialize;
use wwbl_core::{Detection, Phrase};
use wwbl_model::pipeline::records::{image_id_for, parse_jsonl, to_jsonl, AnnotationRecord, PredictionRecord};
use wwbl_model::pipeline::{infer_wsg, infer_wsol, infer_wwbl, wsg_prediction};
use wwbl_model::synthetic::generate_scenes;
use wwbl_model::trainer::EpochStats;
use wwbl_model::{
    evaluate, fit, Cache, Checkpoint, EvalReport, EvalTask, GroundingNet, PairDataset, Prediction, TrainPair, Variant,
    VisionLanguageBackend, WwblMode,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_CHECKPOINT};
use crate::imageio::{load_image, overlay, save_image, save_mask};

pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const TRAIN_LOG: &str = "train_log.jsonl";

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| CliError::io(p, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parse errors carry the file name and line.
fn parse_records<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    parse_jsonl(&read_text(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// A dataset is an annotation file, or a directory holding `annotations.jsonl`.
/// Image paths resolve against the annotation file's directory.
pub fn load_dataset(path: &Path) -> CliResult<(PathBuf, Vec<AnnotationRecord>)> {
    if !path.exists() {
        return Err(CliError::data(format!("{}: no such file or directory", path.display())));
    }
    let file = if path.is_dir() {
        path.join(ANNOTATIONS)
    } else {
        path.to_path_buf()
    };
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((root, parse_records(&file)?))
}

#[derive(Serialize)]
struct LogLine<'a> {
    epoch: usize,
    steps: usize,
    samples: usize,
    #[serde(flatten)]
    loss: &'a wwbl_model::LossBreakdown,
}

fn log_line(s: &EpochStats) -> String {
    let line = LogLine {
        epoch: s.epoch,
        steps: s.steps,
        samples: s.samples,
        loss: &s.loss,
    };
    serde_json::to_string(&line).expect("log line serializes")
}

/// Train on `data`, writing `epoch_N.ckpt`, the training log and the
/// effective configuration into `out`. Returns the last checkpoint path.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<PathBuf> {
    let (root, records) = load_dataset(data)?;
    let mut pairs = Vec::with_capacity(records.len());
    for r in &records {
        let image = load_image(&root.join(&r.image))?;
        pairs.push(TrainPair {
            image_id: image_id_for(&r.image),
            image,
            captions: r.training_captions(),
        });
    }
    let dataset = PairDataset::new(pairs).map_err(|e| CliError::data(e.to_string()))?;
    if cfg.net.input_size != cfg.train.input_size() {
        return Err(CliError::config(format!(
            "net.input_size {} differs from the training extent {}",
            cfg.net.input_size,
            cfg.train.input_size()
        )));
    }
    let backend = cfg.backend()?;
    let net = GroundingNet::new(cfg.net.clone(), cfg.train.seed, &Device::Cpu)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let cache = Cache::from_env();
    let mut last = None;
    let result = fit(&dataset, &cfg.train, &cfg.loss, &net, backend.as_ref(), &cache, |ck| {
        let stats = ck.history.last().expect("one entry per epoch");
        writeln!(log, "{}", log_line(stats)).map_err(|source| wwbl_model::ModelError::Io {
            path: log_path.display().to_string(),
            source,
        })?;
        eprintln!(
            "epoch {:>3}  loss {:.6}  (fore {:.4} back {:.4} rmap {:.4} reg {:.4})",
            stats.epoch, stats.loss.total, stats.loss.fore, stats.loss.back, stats.loss.rmap, stats.loss.reg
        );
        let path = out.join(format!("epoch_{}.ckpt", ck.epoch));
        ck.save(&path)?;
        last = Some(path);
        Ok(())
    });
    result?;
    Ok(last.expect("at least one epoch"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InferMode {
    Wsol,
    Wsg,
    Wwbl,
    WwblIter,
}

impl InferMode {
    fn variant(self) -> Variant {
        match self {
            InferMode::Wsol => Variant::Wsol,
            _ => Variant::Multimodal,
        }
    }
}

pub struct InferArgs<'a> {
    pub checkpoint: &'a Path,
    pub mode: InferMode,
    pub prompt: Option<&'a str>,
    pub images: &'a [PathBuf],
    pub out: &'a Path,
    pub overlay_dir: Option<&'a Path>,
    pub masks_dir: Option<&'a Path>,
    pub workers: usize,
}

fn restore(path: &Path, mode: InferMode, backend: &dyn VisionLanguageBackend) -> CliResult<GroundingNet> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).with_code(EXIT_CHECKPOINT))?;
    let nc = &ck.net_config;
    if nc.variant != mode.variant() {
        return Err(CliError::checkpoint(format!(
            "{}: a {:?} network cannot run {mode:?} inference",
            path.display(),
            nc.variant
        )));
    }
    let dim = backend.descriptor().embed_dim;
    if nc.variant == Variant::Multimodal && nc.feature_dim != dim {
        return Err(CliError::checkpoint(format!(
            "{}: network expects {}-d text embeddings, the backend produces {dim}",
            path.display(),
            nc.feature_dim
        )));
    }
    ck.restore(&Device::Cpu)
        .map_err(|e| CliError::from(e).with_code(EXIT_CHECKPOINT))
}

fn predict_one(
    cfg: &RunConfig,
    args: &InferArgs,
    net: &GroundingNet,
    backend: &dyn VisionLanguageBackend,
    path: &Path,
) -> CliResult<PredictionRecord> {
    let img = load_image(path)?;
    let id = image_id_for(&path.to_string_lossy());
    let pred = match args.mode {
        InferMode::Wsol => {
            let (mask, bbox) = infer_wsol(&img, net, &cfg.extract)?;
            let score = mask.mean_in(&bbox).clamp(0.0, 1.0);
            let mut p = Prediction::new(id.clone());
            p.push(Detection::new(bbox, Phrase::new("object")?, score)?, Some(mask));
            p
        }
        InferMode::Wsg => {
            let prompt = args.prompt.expect("checked by caller");
            let (mask, boxes) = infer_wsg(&img, prompt, net, backend, &cfg.extract)?;
            wsg_prediction(&id, &Phrase::new(prompt)?, mask, &boxes)?
        }
        InferMode::Wwbl => infer_wwbl(&id, &img, net, backend, &cfg.wwbl(WwblMode::SelectiveSearch))?,
        InferMode::WwblIter => infer_wwbl(&id, &img, net, backend, &cfg.wwbl(WwblMode::Iterative))?,
    };
    let masks = match args.masks_dir {
        Some(dir) => {
            let mut paths = Vec::with_capacity(pred.len());
            for k in 0..pred.len() {
                match pred.mask(k) {
                    Some(m) => {
                        let p = dir.join(format!("{id}_{k}.png"));
                        save_mask(m, &p)?;
                        paths.push(Some(p.display().to_string()));
                    }
                    None => paths.push(None),
                }
            }
            Some(paths)
        }
        None => None,
    };
    if let Some(dir) = args.overlay_dir {
        save_image(
            &overlay(&img, &pred.detections.detections),
            &dir.join(format!("{id}.png")),
        )?;
    }
    Ok(PredictionRecord::from_prediction(&pred, masks))
}

/// One record per input image, in input order.
pub fn infer(cfg: &RunConfig, args: &InferArgs) -> CliResult<usize> {
    match (args.mode, args.prompt) {
        (InferMode::Wsg, None) => return Err(CliError::config("wsg inference needs --prompt".into())),
        (InferMode::Wsg, Some(_)) => {}
        (m, Some(_)) => return Err(CliError::config(format!("--prompt is not accepted in {m:?} mode"))),
        _ => {}
    }
    if args.images.is_empty() {
        return Err(CliError::config("no input images".into()));
    }
    let backend = cfg.backend()?;
    let net = restore(args.checkpoint, args.mode, backend.as_ref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.max(1))
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    let records: Vec<PredictionRecord> = pool.install(|| {
        args.images
            .par_iter()
            .map(|p| predict_one(cfg, args, &net, backend.as_ref(), p))
            .collect::<CliResult<Vec<_>>>()
    })?;
    write_text(args.out, &to_jsonl(&records)?)?;
    Ok(records.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Point,
    Box,
    Both,
}

pub fn format_report(r: &EvalReport, metric: Metric) -> String {
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let point = match r.pointing_accuracy {
        Some(p) => format!("point: {}", pct(p)),
        None => "point: n/a".to_string(),
    };
    let boxed = format!("box: {}", pct(r.box_accuracy));
    match metric {
        Metric::Point => point,
        Metric::Box => boxed,
        Metric::Both => format!("{point}  {boxed}"),
    }
}

pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path, task: EvalTask, report: &Path) -> CliResult<EvalReport> {
    let preds = parse_records::<PredictionRecord>(pred)?
        .iter()
        .map(|r| r.to_prediction())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::data(format!("{}: {e}", pred.display())))?;
    let (_, gt_records) = load_dataset(gt)?;
    let gt: Vec<_> = gt_records.iter().map(AnnotationRecord::to_annotation).collect();
    let backend = cfg.backend()?;
    let r = evaluate(&preds, &gt, backend.as_ref(), task)?;
    let json = serde_json::to_string_pretty(&r).expect("report serializes");
    write_text(report, &json)?;
    Ok(r)
}

/// Generated scenes as PNGs plus `annotations.jsonl`.
pub fn make_synthetic(cfg: &RunConfig, out: &Path, count: usize, seed: u64) -> CliResult<usize> {
    if count == 0 {
        return Err(CliError::config("count must be at least 1".into()));
    }
    let scenes = generate_scenes(&cfg.backend.world, &cfg.synthetic, count, seed)?;
    let mut records = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let rel = format!("images/{}.png", s.image_id);
        save_image(&s.image, &out.join(&rel))?;
        records.push(AnnotationRecord {
            image: rel,
            captions: s.captions(),
            regions: s.annotation().regions,
        });
    }
    write_text(&out.join(ANNOTATIONS), &to_jsonl(&records)?)?;
    Ok(records.len())
}
