//! `tseg` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a failed check or runtime error, 2 on a
//! configuration or usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use tseg::checkpoint::Checkpoint;
use tseg::config::RunConfig;
use tseg::decode::PixelMasks;
use tseg::eval::{
    eval_scenes, evaluate, expression_scores, predict_scene, scene_similarity, write_masks, Decoder, EvalReport,
};
use tseg::image::{Image, Mask};
use tseg::metrics::mean_iou;
use tseg::pooling::Mechanism;
use tseg::synth::{dump_dataset, Split, Vocab};
use tseg::trainer::{train, training_scenes, TrainConfig};
use tseg::{pnm, Error};

#[derive(Parser)]
#[command(name = "tseg", version, about = "Weakly-supervised referring-expression segmentation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set mechanism=spa`. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    Train,
    Seen,
    Heldout,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Seen => Split::EvalSeen,
            SplitArg::Heldout => Split::EvalHeldout,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset directory of P6 images, P5 masks and a JSON manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "seen")]
        split: SplitArg,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write `model.ckpt`, `losses.csv` and `manifest.json`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, writing `report.json` and one mask per pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "seen")]
        split: SplitArg,
        #[arg(long)]
        eval_seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one P6 image for the given expressions.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Expression such as "large red square"; repeat for several.
        #[arg(long = "expr", required = true)]
        expressions: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train all four pooling mechanisms on shared seeds and print the mIoU table.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 1 unless MPA > SPA > max(GAP, GMP).
        #[arg(long)]
        check: bool,
    },
}

/// A failure together with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn check_failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for item in &args.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {item:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Configuration echoed as a JSON object in canonical key order.
fn config_json(cfg: &RunConfig) -> Value {
    let map: Map<String, Value> = cfg
        .render()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    Value::Object(map)
}

fn write_json(path: &Path, value: &Value) -> Outcome {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Checkpoint plus the configuration it was trained with.
fn open_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig), Failure> {
    let ck = Checkpoint::load(path)?;
    let text = ck.config_text()?;
    let cfg = RunConfig::parse(&text)?;
    if cfg.hash() != ck.config_hash()? {
        return Err(check_failed("checkpoint configuration does not round-trip"));
    }
    Ok((ck, cfg))
}

fn gen_data(args: &ConfigArgs, split: SplitArg, count: usize, out: &Path) -> Outcome {
    let cfg = load_config(args)?;
    let scenes = match split {
        // The scenes the trainer draws, in order, before augmentation.
        SplitArg::Train => {
            let mut scenes = Vec::with_capacity(count);
            let mut n = 0;
            while scenes.len() < count {
                scenes.extend(training_scenes(&cfg.train, n)?);
                n += 1;
            }
            scenes.truncate(count);
            scenes
        }
        _ => eval_scenes(cfg.eval_seed, &cfg.train.synth, split.split(), count)?,
    };
    dump_dataset(out, &scenes, &cfg.train.synth, split.split())?;
    fs::write(out.join("config.txt"), cfg.render())?;
    println!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

fn train_cmd(args: &ConfigArgs, out: &Path) -> Outcome {
    let cfg = load_config(args)?;
    fs::create_dir_all(out)?;
    let outcome = train(&cfg.train)?;
    let text = cfg.render();
    let ck = Checkpoint::from_model(&outcome.model, outcome.iteration as u64, &text);
    ck.save(&out.join("model.ckpt"))?;
    let log: String = std::iter::once("iteration,loss\n".to_string())
        .chain(outcome.losses.iter().enumerate().map(|(i, l)| format!("{i},{l:.17e}\n")))
        .collect();
    fs::write(out.join("losses.csv"), log)?;
    fs::write(out.join("config.txt"), &text)?;
    let manifest = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.train.seed,
        "iterations": outcome.iteration,
        "final_loss": outcome.losses.last(),
        "config_hash": cfg.hash(),
        "config": config_json(&cfg),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "trained {} iterations, loss {:.4} -> {:.4}, checkpoint {}",
        outcome.iteration,
        outcome.losses.first().copied().unwrap_or(f64::NAN),
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, split: SplitArg, eval_seed: Option<u64>, count: Option<usize>, out: &Path) -> Outcome {
    let (ck, mut cfg) = open_checkpoint(checkpoint)?;
    let hash = ck.config_hash()?;
    if let Some(s) = eval_seed {
        cfg.eval_seed = s;
    }
    if let Some(n) = count {
        if n == 0 {
            return Err(Error::Config("--scenes must be positive".into()).into());
        }
        cfg.eval_scenes = n;
    }
    let model = ck.to_model(&cfg.train.model)?;
    let decoder = Decoder::for_config(&cfg.train);
    let scenes = eval_scenes(cfg.eval_seed, &cfg.train.synth, split.split(), cfg.eval_scenes)?;
    let records = evaluate(&model, &cfg.train.model, &scenes, decoder)?;
    let masks_dir = out.join("masks");
    for (i, scene) in scenes.iter().enumerate() {
        let pred = predict_scene(&model, &cfg.train.model, scene, decoder)?;
        write_masks(&masks_dir, &format!("scene_{i:05}"), &pred)?;
    }
    let report = EvalReport::new(&cfg.train, hash, split.split(), cfg.eval_seed, &records)?;
    let mut value = serde_json::to_value(&report)?;
    value["version"] = json!(env!("CARGO_PKG_VERSION"));
    value["checkpoint_iteration"] = json!(ck.iteration()?);
    value["eval_scenes"] = json!(cfg.eval_scenes);
    value["config"] = config_json(&cfg);
    value["records"] = serde_json::to_value(&records)?;
    write_json(&out.join("report.json"), &value)?;
    println!(
        "mIoU {:.4} over {} pairs ({} scenes); report {}",
        report.miou,
        report.pairs,
        scenes.len(),
        out.join("report.json").display()
    );
    Ok(())
}

fn read_image(path: &Path) -> Result<Image, Failure> {
    let bytes = fs::read(path)?;
    let (channels, height, width, samples) = pnm::decode(&bytes)?;
    if channels != 3 {
        return Err(Error::Config(format!("{}: expected a P6 image", path.display())).into());
    }
    Ok(Image {
        height,
        width,
        channels,
        data: samples.iter().map(|&v| f64::from(v) / 255.0).collect(),
    })
}

/// Replaces the mask of every expression scored below zero with an empty one.
/// Returns the per-expression absent flags.
fn suppress_absent(masks: &mut [PixelMasks], scores: &[f64]) -> Vec<bool> {
    masks
        .iter_mut()
        .zip(scores)
        .map(|(m, &z)| {
            let absent = z < 0.0;
            if absent {
                m.binary = Mask::empty(m.binary.height, m.binary.width);
            }
            absent
        })
        .collect()
}

fn segment_cmd(checkpoint: &Path, image: &Path, expressions: &[String], out: &Path) -> Outcome {
    let (ck, cfg) = open_checkpoint(checkpoint)?;
    let model = ck.to_model(&cfg.train.model)?;
    let img = read_image(image)?;
    let size = cfg.train.model.image_size;
    if img.height != size || img.width != size {
        return Err(Error::Config(format!(
            "image is {}x{}, the model expects {size}x{size}",
            img.height, img.width
        ))
        .into());
    }
    let tokens = expressions.iter().map(|e| Vocab::parse(e)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[usize]> = tokens.iter().map(Vec::as_slice).collect();
    let s = scene_similarity(&model, &cfg.train.model, &img, &refs)?;
    let scores = expression_scores(&s, &cfg.train.pooling)?;
    let mut masks = tseg::eval::decode_similarity(&s, Decoder::for_config(&cfg.train), img.height, img.width)?;
    let absent = suppress_absent(&mut masks, &scores);
    let paths = write_masks(out, "mask", &masks)?;
    let entries: Vec<Value> = (0..masks.len())
        .map(|j| {
            json!({
                "expression": Vocab::render(&tokens[j]),
                "tokens": tokens[j],
                "score": scores[j],
                "absent": absent[j],
                "area": masks[j].binary.area(),
                "mask": paths[j].file_name().map(|n| n.to_string_lossy().into_owned()),
            })
        })
        .collect();
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "image": image.display().to_string(),
        "config_hash": ck.config_hash()?,
        "expressions": entries,
    });
    write_json(&out.join("segment.json"), &report)?;
    for (j, e) in expressions.iter().enumerate() {
        let flag = if absent[j] { " (absent)" } else { "" };
        println!("{e}: z = {:.4}, {} px{flag}", scores[j], masks[j].binary.area());
    }
    Ok(())
}

fn gradcheck_cmd(points: usize, seed: u64) -> Outcome {
    if points == 0 {
        return Err(Error::Config("--points must be positive".into()).into());
    }
    let results = tseg::gradsuite::run(points, seed);
    let mut all = true;
    for r in &results {
        let tag = if r.passed { "ok" } else { "FAIL" };
        println!("{tag:>4}  {:<36} {} points  max rel err {:.3e}", r.pipeline, r.points, r.max_rel_error);
        all &= r.passed;
    }
    if all {
        println!("all {} pipelines passed (tolerance {:e})", results.len(), tseg::gradsuite::TOLERANCE);
        Ok(())
    } else {
        Err(check_failed("gradient check failed"))
    }
}

fn compare_cmd(args: &ConfigArgs, seeds: &[u64], out: Option<&Path>, check: bool) -> Outcome {
    let base = load_config(args)?;
    if seeds.is_empty() {
        return Err(Error::Config("--seeds must not be empty".into()).into());
    }
    let scenes = eval_scenes(base.eval_seed, &base.train.synth, Split::EvalSeen, base.eval_scenes)?;
    // Row order of the usual results table: weakest baseline first.
    let order = [Mechanism::Gmp, Mechanism::Gap, Mechanism::Spa, Mechanism::Mpa];
    let mut table: Vec<(Mechanism, Vec<f64>)> = Vec::new();
    for &m in &order {
        let mut row = Vec::new();
        for &seed in seeds {
            let mut cfg: TrainConfig = base.train.clone();
            cfg.pooling.mechanism = m;
            cfg.seed = seed;
            let outcome = train(&cfg)?;
            let records = evaluate(&outcome.model, &cfg.model, &scenes, Decoder::for_config(&cfg))?;
            let miou = mean_iou(&records)?;
            eprintln!("{m} seed {seed}: mIoU {miou:.4}");
            row.push(miou);
        }
        table.push((m, row));
    }
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;

    let mut header = format!("{:<8}", "method");
    for s in seeds {
        header += &format!(" {:>8}", format!("seed {s}"));
    }
    header += &format!(" {:>8}", "mean");
    println!("{header}");
    for (m, row) in &table {
        let mut line = format!("{:<8}", m.name());
        for v in row {
            line += &format!(" {:>8.2}", 100.0 * v);
        }
        line += &format!(" {:>8.2}", 100.0 * mean(row));
        println!("{line}");
    }
    let get = |m: Mechanism| mean(&table.iter().find(|(k, _)| *k == m).expect("row").1);
    let (gap, gmp, spa, mpa) = (get(Mechanism::Gap), get(Mechanism::Gmp), get(Mechanism::Spa), get(Mechanism::Mpa));
    let ordered = mpa > spa && spa > gap.max(gmp);
    println!(
        "mIoU x100 on {} seen scenes; MPA > SPA > max(GAP, GMP): {}",
        scenes.len(),
        if ordered { "yes" } else { "no" }
    );

    if let Some(path) = out {
        let rows: Map<String, Value> = table
            .iter()
            .map(|(m, r)| (m.name().to_string(), json!({ "per_seed": r, "mean": mean(r) })))
            .collect();
        let value = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seeds": seeds,
            "eval_seed": base.eval_seed,
            "eval_scenes": base.eval_scenes,
            "ordered": ordered,
            "miou": rows,
            "config": config_json(&base),
        });
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_json(path, &value)?;
    }
    if check && !ordered {
        return Err(check_failed("mechanism ordering not reproduced"));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData {
            config,
            split,
            count,
            out,
        } => gen_data(&config, split, count, &out),
        Command::Train { config, out } => train_cmd(&config, &out),
        Command::Eval {
            checkpoint,
            split,
            eval_seed,
            scenes,
            out,
        } => eval_cmd(&checkpoint, split, eval_seed, scenes, &out),
        Command::Segment {
            checkpoint,
            image,
            expressions,
            out,
        } => segment_cmd(&checkpoint, &image, &expressions, &out),
        Command::Gradcheck { points, seed } => gradcheck_cmd(points, seed),
        Command::Compare {
            config,
            seeds,
            out,
            check,
        } => compare_cmd(&config, &seeds, out.as_deref(), check),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tseg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks(n: usize) -> Vec<PixelMasks> {
        (0..n)
            .map(|j| PixelMasks {
                expression: j,
                soft: vec![1.0; 4],
                binary: Mask::full(2, 2),
            })
            .collect()
    }

    #[test]
    fn negative_scores_empty_the_mask() {
        let mut m = masks(3);
        let flags = suppress_absent(&mut m, &[0.5, -0.1, 0.0]);
        assert_eq!(flags, vec![false, true, false]);
        assert_eq!(m[0].binary.area(), 4);
        assert!(m[1].binary.is_empty());
        assert_eq!(m[2].binary.area(), 4);
    }

    #[test]
    fn config_errors_exit_with_two() {
        let args = ConfigArgs {
            config: None,
            overrides: vec!["colour=red".into()],
        };
        assert_eq!(load_config(&args).unwrap_err().code, 2);
        let args = ConfigArgs {
            config: None,
            overrides: vec!["seed".into()],
        };
        assert_eq!(load_config(&args).unwrap_err().code, 2);
        let args = ConfigArgs {
            config: Some("/nonexistent/run.cfg".into()),
            overrides: vec![],
        };
        assert_eq!(load_config(&args).unwrap_err().code, 2);
    }

    #[test]
    fn config_echo_has_every_key() {
        let v = config_json(&RunConfig::default());
        assert_eq!(v.as_object().unwrap().len(), tseg::config::KEYS.len());
        assert_eq!(v["mechanism"], "MPA");
    }
}
