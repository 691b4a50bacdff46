//! `sanet` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{
    self, gen_scenes, list_stems, load_image, load_samples, save_scenes, write_file,
};
use crate::dvs::{accumulate_with, normalize_frame, parse_events, PolarityFilter};
use crate::error::{Error, Result};
use crate::imageio::{load_gray, save_gray, save_mask, save_overlay, GrayImage};
use crate::labels::{parse_annotations, rasterize, SceneConfig, DEFAULT_WIDTH_PX};
use crate::metrics::EvalReport;
use crate::network::{predict_mask, Sanet};
use crate::par::Exec;
use crate::rng::PRNG_NAME;
use crate::slice_conv::Direction;
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::training::{evaluate, train_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "sanet",
    version,
    about = "Lane segmentation on accumulated event-camera frames"
)]
struct Cli {
    /// Do not print the JSON report.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Accumulate an event stream into fixed-interval frames.
    Accumulate(AccumulateArgs),
    /// Rasterise lane annotations into class and binary masks.
    Rasterize(RasterizeArgs),
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Split a dataset into train/val/test (1/2, 1/6, 1/3).
    Split(SplitArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict masks and overlays for images.
    Infer(InferArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolarityMode {
    Any,
    On,
    Off,
    /// Separate on/ and off/ frame sets.
    Split,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FrameFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
struct AccumulateArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    dt_us: u64,
    #[arg(long, default_value_t = 3)]
    clip: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PolarityMode::Any)]
    polarity: PolarityMode,
    #[arg(long, value_enum, default_value_t = FrameFormat::Png)]
    format: FrameFormat,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RasterizeArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WIDTH_PX)]
    width_px: f64,
    /// `N` or `WxH`.
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long)]
    out: PathBuf,
    /// Optional frame to draw an overlay on.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, value_parser = parse_size, default_value = "128")]
    size: (usize, usize),
    #[arg(long, default_value_t = 4)]
    lanes: usize,
    #[arg(long, default_value_t = 2)]
    occluders: usize,
    #[arg(long, default_value_t = SceneConfig::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = DEFAULT_WIDTH_PX)]
    width_px: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training set directory (overrides `train_data`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluation set directory (overrides `eval_data`; defaults to the training set).
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list from vd,vu,hl,hr,mdd,mdu,cdd,cdu; empty for the baseline.
    #[arg(long, value_parser = parse_directions)]
    directions: Option<DirectionList>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// An image file or a dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad size {s:?}"))
    };
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (num(w)?, num(h)?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if w == 0 || h == 0 {
        return Err(format!("size {s:?} must be positive"));
    }
    Ok((w, h))
}

#[derive(Clone, Debug)]
struct DirectionList(Vec<Direction>);

fn parse_directions(s: &str) -> std::result::Result<DirectionList, String> {
    Direction::parse_list(s)
        .map(DirectionList)
        .map_err(|e| e.to_string())
}

/// Provenance record written before a command does its work.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub prng: String,
    /// SHA-256 of each input file, or of the sorted listing of a directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(
        command: &str,
        config: Value,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), hash_path(p)?);
        }
        Ok(RunManifest {
            command: command.into(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            prng: PRNG_NAME.into(),
            inputs: hashes,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// File: digest of its bytes. Directory: digest of `relative-path digest`
/// lines over all files, sorted.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(sha256_hex(
            &std::fs::read(path).map_err(|e| Error::io(path, e))?,
        ));
    }
    let mut lines = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(path)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .replace('\\', "/");
                lines.push(format!("{rel} {}", hash_path(&p)?));
            }
        }
    }
    lines.sort();
    Ok(sha256_hex(lines.join("\n").as_bytes()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Writes the report to `--report` when given and hands it back for printing.
fn emit(report: &Value, path: Option<&Path>) -> Result<Value> {
    if let Some(p) = path {
        write_json(p, report)?;
    }
    Ok(report.clone())
}

fn cmd_accumulate(a: &AccumulateArgs) -> Result<Value> {
    if a.dt_us == 0 || a.clip == 0 {
        return Err(Error::Config("--dt-us and --clip must be positive".into()));
    }
    let config = json!({"dt_us": a.dt_us, "clip": a.clip, "polarity": format!("{:?}", a.polarity).to_lowercase()});
    RunManifest::new("accumulate", config, None, &[&a.events], &[&a.out])?
        .write(&a.out.join("manifest.json"))?;
    let stream = parse_events(&a.events)?;
    let sets: Vec<(&str, PolarityFilter)> = match a.polarity {
        PolarityMode::Any => vec![("", PolarityFilter::Any)],
        PolarityMode::On => vec![("", PolarityFilter::On)],
        PolarityMode::Off => vec![("", PolarityFilter::Off)],
        PolarityMode::Split => vec![("on", PolarityFilter::On), ("off", PolarityFilter::Off)],
    };
    let ext = match a.format {
        FrameFormat::Png => "png",
        FrameFormat::Pgm => "pgm",
    };
    let mut files = Vec::new();
    let mut n_frames = 0;
    for (sub, filter) in sets {
        let frames = accumulate_with(&stream, a.dt_us, filter, Exec::default())?;
        n_frames = frames.len();
        for f in &frames {
            let path = a.out.join(sub).join(format!("{:06}.{ext}", f.index));
            save_gray(&normalize_frame(f, a.clip)?, &path)?;
            files.push(path.display().to_string());
        }
    }
    let report = json!({
        "events": stream.len(),
        "frames": n_frames,
        "dt_us": a.dt_us,
        "clip": a.clip,
        "width": stream.width(),
        "height": stream.height(),
        "files": files,
    });
    emit(&report, a.report.as_deref())
}

fn cmd_rasterize(a: &RasterizeArgs) -> Result<Value> {
    let text = std::fs::read_to_string(&a.labels).map_err(|e| Error::io(&a.labels, e))?;
    let lanes = parse_annotations(&text)?;
    let (w, h) = a.size;
    let (mask, binary) = rasterize(&lanes, a.width_px, w, h)?;
    let mask_path = a.out.join("mask.png");
    let binary_path = a.out.join("binary.png");
    save_mask(&mask, &mask_path)?;
    let bin_img = GrayImage::new(w, h, binary.data().iter().map(|&v| v * 255).collect())?;
    save_gray(&bin_img, &binary_path)?;
    let mut files = vec![
        mask_path.display().to_string(),
        binary_path.display().to_string(),
    ];
    if let Some(img) = &a.image {
        let frame = load_gray(img)?;
        let p = a.out.join("overlay.png");
        save_overlay(&frame, &mask, &p)?;
        files.push(p.display().to_string());
    }
    let report = json!({
        "lanes": lanes.len(),
        "width_px": a.width_px,
        "lane_pixels": binary.data().iter().filter(|&&v| v > 0).count(),
        "files": files,
    });
    emit(&report, a.report.as_deref())
}

fn cmd_gen(a: &GenArgs) -> Result<Value> {
    let template = SceneConfig {
        width: a.size.0,
        height: a.size.1,
        lanes: a.lanes,
        occluders: a.occluders,
        noise: a.noise,
        label_width: a.width_px,
        ..Default::default()
    };
    template.validate()?;
    let config = json!({"count": a.count, "scene": template});
    RunManifest::new("gen", config, Some(a.seed), &[], &[&a.out])?
        .write(&a.out.join("manifest.json"))?;
    let scenes = gen_scenes(&template, a.count, a.seed, Exec::default())?;
    let files = save_scenes(&a.out, &scenes)?;
    let report = json!({"count": scenes.len(), "seed": a.seed, "files": files.len()});
    emit(&report, a.report.as_deref())
}

fn cmd_split(a: &SplitArgs) -> Result<Value> {
    RunManifest::new("split", json!({}), Some(a.seed), &[&a.data], &[&a.out])?
        .write(&a.out.join("manifest.json"))?;
    let [train, val, test] = dataset::split(&a.data, &a.out, a.seed)?;
    let report = json!({"train": train.len(), "val": val.len(), "test": test.len()});
    emit(&report, a.report.as_deref())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    let path_str = |p: &Path| p.display().to_string();
    if let Some(d) = &a.data {
        cfg.train_data = Some(path_str(d));
    }
    if let Some(d) = &a.eval_data {
        cfg.eval_data = Some(path_str(d));
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(path_str(o));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.directions {
        cfg.directions = d.0.clone();
    }
    if let Some(k) = a.kernel_size {
        cfg.kernel_size = k;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    if cfg.eval_data.is_none() {
        cfg.eval_data = cfg.train_data.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<Value> {
    let cfg = train_config(a)?;
    let train_dir =
        PathBuf::from(cfg.train_data.as_deref().ok_or_else(|| {
            Error::Config("no training data: set train_data or pass --data".into())
        })?);
    let eval_dir = PathBuf::from(cfg.eval_data.as_deref().expect("defaulted to train_data"));
    let out = PathBuf::from(cfg.out_dir.as_deref().unwrap_or("run"));
    let mut inputs: Vec<&Path> = vec![&train_dir];
    if eval_dir != train_dir {
        inputs.push(&eval_dir);
    }
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    let (best_path, final_path) = (out.join("best.sanc"), out.join("final.sanc"));
    let (log_path, report_path) = (out.join("metrics.jsonl"), out.join("report.json"));
    RunManifest::new(
        "train",
        serde_json::to_value(&cfg)?,
        Some(cfg.seed),
        &inputs,
        &[&best_path, &final_path, &log_path, &report_path],
    )?
    .write(&out.join("manifest.json"))?;

    let train_set = load_samples(&train_dir)?;
    let eval_set = load_samples(&eval_dir)?;
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let outcome = train_with(&cfg, &train_set, &eval_set, Exec::default(), |r| {
        serde_json::to_writer(&mut log, r)?;
        writeln!(log).map_err(|e| Error::io(&log_path, e))
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let outcome = outcome?;
    save_checkpoint(&best_path, &outcome.best_model.to_checkpoint())?;
    save_checkpoint(&final_path, &outcome.final_model.to_checkpoint())?;
    let final_eval = EvalReport::from_counts(
        &evaluate(&outcome.final_model, &eval_set, Exec::default())?,
        eval_set.len(),
    )?;
    let report = json!({
        "steps": outcome.steps,
        "final_loss": outcome.log.last().map(|r| r.loss),
        "best_iter": outcome.best_iter,
        "best": outcome.best_report,
        "final": final_eval,
        "best_checkpoint": "best.sanc",
        "final_checkpoint": "final.sanc",
    });
    write_json(&report_path, &report)?;
    emit(&report, a.report.as_deref())
}

fn load_model(path: &Path) -> Result<Sanet> {
    Sanet::from_checkpoint(load_checkpoint(path)?)
}

fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    if let Some(r) = &a.report {
        RunManifest::new("eval", json!({}), None, &[&a.ckpt, &a.data], &[r])?
            .write(&r.with_extension("manifest.json"))?;
    }
    let model = load_model(&a.ckpt)?;
    let samples = load_samples(&a.data)?;
    let counts = evaluate(&model, &samples, Exec::default())?;
    let report = EvalReport::from_counts(&counts, samples.len())?;
    emit(&serde_json::to_value(&report)?, a.report.as_deref())
}

fn cmd_infer(a: &InferArgs) -> Result<Value> {
    RunManifest::new("infer", json!({}), None, &[&a.ckpt, &a.data], &[&a.out])?
        .write(&a.out.join("manifest.json"))?;
    let model = load_model(&a.ckpt)?;
    let inputs: Vec<(String, GrayImage)> = if a.data.is_file() {
        let stem = a
            .data
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        vec![(stem, load_gray(&a.data)?)]
    } else {
        list_stems(&a.data)?
            .into_iter()
            .map(|s| load_image(&a.data, &s).map(|img| (s, img)))
            .collect::<Result<_>>()?
    };
    let mut files = Vec::new();
    for (stem, img) in &inputs {
        let mask = predict_mask(&model.infer(&img.to_tensor())?)?;
        let mp = a.out.join("masks").join(format!("{stem}.png"));
        let op = a.out.join("overlays").join(format!("{stem}.png"));
        save_mask(&mask, &mp)?;
        save_overlay(img, &mask, &op)?;
        files.push(mp.display().to_string());
        files.push(op.display().to_string());
    }
    emit(
        &json!({"images": inputs.len(), "files": files}),
        a.report.as_deref(),
    )
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Config(_) | Error::Contract(_) => 1,
        _ => 2,
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Accumulate(a) => cmd_accumulate(a),
        Command::Rasterize(a) => cmd_rasterize(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
    };
    let printed = result.and_then(|report| {
        if !cli.quiet {
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Ok(())
    });
    match printed {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("128"), Ok((128, 128)));
        assert_eq!(parse_size("160x120"), Ok((160, 120)));
        assert!(parse_size("0").is_err());
        assert!(parse_size("ax3").is_err());
    }

    #[test]
    fn usage_errors_exit_one_and_help_zero() {
        assert_eq!(run(["sanet", "gen", "--bogus"]), 1);
        assert_eq!(run(["sanet"]), 1);
        assert_eq!(run(["sanet", "--help"]), 0);
        assert_eq!(run(["sanet", "train", "--directions", "vd,xx"]), 1);
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(
            exit_code(&Error::Diverged {
                iter: 3,
                loss: f64::NAN
            }),
            3
        );
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
    }

    #[test]
    fn directory_hash_ignores_listing_order() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        std::fs::write(a.path().join("x"), b"1").unwrap();
        std::fs::write(a.path().join("y"), b"2").unwrap();
        std::fs::write(b.path().join("y"), b"2").unwrap();
        std::fs::write(b.path().join("x"), b"1").unwrap();
        assert_eq!(hash_path(a.path()).unwrap(), hash_path(b.path()).unwrap());
        std::fs::write(b.path().join("x"), b"3").unwrap();
        assert_ne!(hash_path(a.path()).unwrap(), hash_path(b.path()).unwrap());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"max_iter": 7, "seed": 1, "train_data": "a"}"#).unwrap();
        let cli = Cli::try_parse_from([
            "sanet",
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--directions",
            "vd,mdd",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        let c = train_config(&a).unwrap();
        assert_eq!((c.max_iter, c.seed), (7, 9));
        assert_eq!(c.directions, vec![Direction::TopDown, Direction::MainDown]);
        assert_eq!(c.eval_data.as_deref(), Some("a"));
    }
}
