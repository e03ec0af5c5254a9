//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the per-criterion lines are
//! always printed. Exits non-zero if any criterion fails.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tseg::checkpoint::Checkpoint;
use tseg::eval::{eval_scenes, evaluate, predict_scene, write_masks, Decoder};
use tseg::graph::Graph;
use tseg::image::Mask;
use tseg::metrics::{iou, mean_iou};
use tseg::pnm;
use tseg::pooling::{
    gap_scores, gmp_scores, gwp, gwp_scores, mpa_mask_matrix, score_matrix, size_score_values, spa_mask_matrix,
    Mechanism, PoolingConfig,
};
use tseg::synth::{ExprKind, Split, SynthScene};
use tseg::tensor::Tensor;
use tseg::trainer::{train, TrainConfig, TrainOutcome};

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_SEED: u64 = 1_000_003;
const EVAL_SCENES: usize = 100;
/// Held-out compositions must reach this fraction of the seen-composition mIoU.
const ZERO_SHOT_RATIO: f64 = 0.5;
const ORDER_MARGIN: f64 = 0.03;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(line: &Line) {
    let mut out = std::io::stdout().lock();
    let tag = if line.pass { "PASS" } else { "FAIL" };
    writeln!(out, "[{tag}] criterion {}: {} -- {}", line.id, line.name, line.detail).unwrap();
    out.flush().unwrap();
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Tensor {
    Tensor::from_fn(&[n, l], |_| rng.random_range(-12.0..12.0))
}

// ---------------------------------------------------------------- criterion 1

fn gradients() -> Line {
    let t = Instant::now();
    let results = tseg::gradsuite::run(20, 20_251_016);
    let elapsed = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.pipeline.as_str()).collect();
    Line {
        id: 1,
        name: "gradient suite",
        pass: failed.is_empty() && worst < 1e-5 && elapsed < 60.0,
        detail: format!(
            "{} pipelines x 20 points, max rel err {worst:.2e} (< 1e-5), {elapsed:.1}s (< 60s){}",
            results.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    }
}

// ---------------------------------------------------------------- criterion 2

fn sigmoid_ref(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gap_ref(s: &Tensor) -> Vec<f64> {
    let (n, l) = s.dims2().unwrap();
    (0..l).map(|j| (0..n).map(|i| s.at2(i, j)).sum::<f64>() / n as f64).collect()
}

fn gmp_ref(s: &Tensor) -> Vec<f64> {
    let (n, l) = s.dims2().unwrap();
    (0..l)
        .map(|j| {
            let mut best = s.at2(0, j);
            for i in 1..n {
                if s.at2(i, j) > best {
                    best = s.at2(i, j);
                }
            }
            best
        })
        .collect()
}

/// `N × (L+1)` with column 0 the background.
fn spa_ref(s: &Tensor, bg: f64) -> Vec<Vec<f64>> {
    let (n, l) = s.dims2().unwrap();
    (0..n)
        .map(|i| {
            let mut logits = vec![bg];
            logits.extend((0..l).map(|j| s.at2(i, j)));
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

fn mpa_ref(s: &Tensor, bg: f64) -> Vec<Vec<f64>> {
    let (n, l) = s.dims2().unwrap();
    (0..n).map(|i| (0..l).map(|j| sigmoid_ref(s.at2(i, j) - bg)).collect()).collect()
}

fn gwp_ref(s: &Tensor, m: &[Vec<f64>], offset: usize, eps: f64) -> Vec<f64> {
    let (n, l) = s.dims2().unwrap();
    (0..l)
        .map(|j| {
            let mass: f64 = (0..n).map(|i| m[i][j + offset]).sum();
            (0..n).map(|i| m[i][j + offset] * s.at2(i, j)).sum::<f64>() / (mass + eps)
        })
        .collect()
}

fn size_ref(m: &[Vec<f64>], offset: usize, l: usize, lambda: f64, p: f64) -> Vec<f64> {
    let n = m.len();
    (0..l)
        .map(|j| {
            let mean = (0..n).map(|i| m[i][j + offset]).sum::<f64>() / n as f64;
            (1.0 - mean).max(0.0).powf(p) * (lambda + mean).ln()
        })
        .collect()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn formulas() -> Line {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = PoolingConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let l = rng.random_range(1..=8);
        let s = random_matrix(&mut rng, n, l);
        worst = worst.max(max_gap(&gap_scores(&s).unwrap().z, &gap_ref(&s)));
        worst = worst.max(max_gap(&gmp_scores(&s).unwrap().z, &gmp_ref(&s)));

        let spa = spa_ref(&s, cfg.background);
        let spa_lib = spa_mask_matrix(&s, cfg.background).unwrap();
        let mpa = mpa_ref(&s, cfg.background);
        let mpa_lib = mpa_mask_matrix(&s, cfg.background).unwrap();
        for i in 0..n {
            worst = worst.max(max_gap(&spa[i], &(0..=l).map(|j| spa_lib.values.at2(i, j)).collect::<Vec<_>>()));
            worst = worst.max(max_gap(&mpa[i], &(0..l).map(|j| mpa_lib.values.at2(i, j)).collect::<Vec<_>>()));
        }
        let gwp_spa = gwp_ref(&s, &spa, 1, cfg.epsilon);
        let gwp_mpa = gwp_ref(&s, &mpa, 0, cfg.epsilon);
        worst = worst.max(max_gap(&gwp_scores(&s, &spa_lib, cfg.epsilon).unwrap().z, &gwp_spa));
        worst = worst.max(max_gap(&gwp_scores(&s, &mpa_lib, cfg.epsilon).unwrap().z, &gwp_mpa));
        let size_spa = size_ref(&spa, 1, l, cfg.lambda, cfg.power);
        let size_mpa = size_ref(&mpa, 0, l, cfg.lambda, cfg.power);
        worst = worst.max(max_gap(&size_score_values(&spa_lib, cfg.lambda, cfg.power).unwrap(), &size_spa));
        worst = worst.max(max_gap(&size_score_values(&mpa_lib, cfg.lambda, cfg.power).unwrap(), &size_mpa));

        for (mech, gwp_v, size_v) in [(Mechanism::Spa, &gwp_spa, &size_spa), (Mechanism::Mpa, &gwp_mpa, &size_mpa)] {
            let total: Vec<f64> = gwp_v.iter().zip(size_v.iter()).map(|(a, b)| a + b).collect();
            let (z, _) = score_matrix(&s, &PoolingConfig::with_mechanism(mech)).unwrap();
            worst = worst.max(max_gap(&z.z, &total));
        }
    }
    let elapsed = t.elapsed().as_secs_f64();
    Line {
        id: 2,
        name: "formula oracles",
        pass: worst <= 1e-12 && elapsed < 10.0,
        detail: format!("100 matrices up to 64x8, max abs diff {worst:.2e} (<= 1e-12), {elapsed:.2}s (< 10s)"),
    }
}

// ---------------------------------------------------------------- criterion 3

fn structure() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();

    let mut row_err = 0.0f64;
    let mut mpa_independent = true;
    let mut l1_gap = 0.0f64;
    let mut gwp_gap_err = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let l = rng.random_range(2..=8);
        let s = random_matrix(&mut rng, n, l);

        let spa = spa_mask_matrix(&s, 0.0).unwrap().values;
        for i in 0..n {
            let total: f64 = (0..=l).map(|j| spa.at2(i, j)).sum();
            row_err = row_err.max((total - 1.0).abs());
        }

        let full = mpa_mask_matrix(&s, 0.0).unwrap().values;
        let drop = rng.random_range(0..l);
        let kept: Vec<usize> = (0..l).filter(|&j| j != drop).collect();
        let reduced = Tensor::from_fn(&[n, l - 1], |k| s.at2(k / (l - 1), kept[k % (l - 1)]));
        let part = mpa_mask_matrix(&reduced, 0.0).unwrap().values;
        for i in 0..n {
            for (c, &j) in kept.iter().enumerate() {
                if part.at2(i, c).to_bits() != full.at2(i, j).to_bits() {
                    mpa_independent = false;
                }
            }
        }

        let single = Tensor::from_fn(&[n, 1], |i| s.at2(i, 0));
        let spa1 = spa_mask_matrix(&single, 0.0).unwrap().values;
        let mpa1 = mpa_mask_matrix(&single, 0.0).unwrap().values;
        for i in 0..n {
            l1_gap = l1_gap.max((spa1.at2(i, 1) - mpa1.at2(i, 0)).abs());
        }
        let (z_spa, _) = score_matrix(&single, &PoolingConfig::with_mechanism(Mechanism::Spa)).unwrap();
        let (z_mpa, _) = score_matrix(&single, &PoolingConfig::with_mechanism(Mechanism::Mpa)).unwrap();
        l1_gap = l1_gap.max((z_spa.z[0] - z_mpa.z[0]).abs());

        let mut g = Graph::new();
        let sv = g.constant(s.clone());
        let ones = g.constant(Tensor::ones(&[n, l]));
        let z = gwp(&mut g, sv, ones, 0.0).unwrap();
        gwp_gap_err = gwp_gap_err.max(max_gap(g.value(z).data(), &gap_scores(&s).unwrap().z));
    }
    if row_err > 1e-12 {
        failures.push(format!("SPA row sum off by {row_err:.1e}"));
    }
    if !mpa_independent {
        failures.push("MPA masks changed after deleting a column".into());
    }
    if l1_gap > 1e-12 {
        failures.push(format!("L=1 SPA and MPA differ by {l1_gap:.1e}"));
    }
    if gwp_gap_err > 1e-12 {
        failures.push(format!("unit-mask GWP differs from GAP by {gwp_gap_err:.1e}"));
    }

    // Deleting the second expression changes SPA's first column.
    let s = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let both = spa_mask_matrix(&s, 0.0).unwrap().values;
    let alone = spa_mask_matrix(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), 0.0).unwrap().values;
    let spa_dependent = both.at2(0, 1) != alone.at2(0, 1);
    if !spa_dependent {
        failures.push("SPA did not react to a deleted column".into());
    }

    Line {
        id: 3,
        name: "structural invariants",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "SPA rows sum to 1 (max err {row_err:.1e}); MPA column deletion bit-exact; SPA first column {:.4} -> {:.4} when a column is deleted; L=1 SPA = MPA (max diff {l1_gap:.1e}); unit-mask GWP(eps=0) = GAP (max diff {gwp_gap_err:.1e})",
                both.at2(0, 1),
                alone.at2(0, 1)
            )
        } else {
            failures.join("; ")
        },
    }
}

// ----------------------------------------------------------- training runs

struct Run {
    seed: u64,
    cfg: TrainConfig,
    outcome: TrainOutcome,
}

fn config_for(seed: u64, mechanism: Option<Mechanism>) -> TrainConfig {
    let mut cfg = match mechanism {
        Some(m) => TrainConfig::weak(m),
        None => TrainConfig::full(),
    };
    cfg.seed = seed;
    cfg
}

fn train_all() -> Vec<Run> {
    let mut jobs = Vec::new();
    for &seed in &SEEDS {
        for m in Mechanism::ALL {
            jobs.push(config_for(seed, Some(m)));
        }
        jobs.push(config_for(seed, None));
    }
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Run>>> = jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(cfg) = jobs.get(k) else { break };
                let t = Instant::now();
                let outcome = train(cfg).expect("training run");
                let mut out = std::io::stdout().lock();
                writeln!(
                    out,
                    "  trained {:?}/{} seed {} in {:.0}s, loss {:.3} -> {:.3}",
                    cfg.mode,
                    cfg.pooling.mechanism,
                    cfg.seed,
                    t.elapsed().as_secs_f64(),
                    outcome.losses[0],
                    outcome.losses.last().unwrap()
                )
                .unwrap();
                *slots[k].lock().unwrap() = Some(Run {
                    seed: cfg.seed,
                    cfg: cfg.clone(),
                    outcome,
                });
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every job ran")).collect()
}

fn find<'a>(runs: &'a [Run], seed: u64, mechanism: Option<Mechanism>) -> &'a Run {
    runs.iter()
        .find(|r| {
            r.seed == seed
                && match mechanism {
                    Some(m) => r.cfg.mode == tseg::trainer::Mode::Weak && r.cfg.pooling.mechanism == m,
                    None => r.cfg.mode == tseg::trainer::Mode::Full,
                }
        })
        .expect("run present")
}

fn miou(run: &Run, scenes: &[SynthScene]) -> f64 {
    let records = evaluate(&run.outcome.model, &run.cfg.model, scenes, Decoder::for_config(&run.cfg)).unwrap();
    mean_iou(&records).unwrap()
}

// ---------------------------------------------------------------- criterion 4

fn ordering(runs: &[Run], seen: &[SynthScene]) -> (Line, Vec<[f64; 4]>) {
    let mut table = Vec::new();
    for &seed in &SEEDS {
        let row = Mechanism::ALL.map(|m| miou(find(runs, seed, Some(m)), seen));
        table.push(row);
    }
    let mean = |k: usize| table.iter().map(|r| r[k]).sum::<f64>() / table.len() as f64;
    let (gap, gmp, spa, mpa) = (mean(0), mean(1), mean(2), mean(3));
    let pass = mpa > spa && spa > gap.max(gmp) && mpa - spa >= ORDER_MARGIN;
    (
        Line {
            id: 4,
            name: "ordering reproduction",
            pass,
            detail: format!(
                "3-seed mean mIoU GAP {gap:.4} GMP {gmp:.4} SPA {spa:.4} MPA {mpa:.4}; need MPA > SPA > max(GAP, GMP) and MPA - SPA >= {ORDER_MARGIN} (got {:.4})",
                mpa - spa
            ),
        },
        table,
    )
}

// ---------------------------------------------------------------- criterion 5

fn upper_bound(runs: &[Run], seen: &[SynthScene], weak: &[[f64; 4]]) -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, &seed) in SEEDS.iter().enumerate() {
        let full = miou(find(runs, seed, None), seen);
        let mpa = weak[k][3];
        pass &= full >= mpa;
        parts.push(format!("seed {seed}: full {full:.4} vs MPA {mpa:.4}"));
    }
    Line {
        id: 5,
        name: "supervision upper bound",
        pass,
        detail: parts.join("; "),
    }
}

// ---------------------------------------------------------------- criterion 6

fn overlapping_pairs(masks: &[Mask]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..masks.len() {
        for k in j + 1..masks.len() {
            if masks[j].overlaps(&masks[k]) {
                out.push((j, k));
            }
        }
    }
    out
}

fn overlap(runs: &[Run], seen: &[SynthScene]) -> Line {
    let mut scenes_with_overlap = 0;
    let mut mpa_misses = 0;
    let mut spa_violations = 0;
    for &seed in &SEEDS {
        let mpa = find(runs, seed, Some(Mechanism::Mpa));
        let spa = find(runs, seed, Some(Mechanism::Spa));
        for scene in seen {
            let pairs = overlapping_pairs(scene.gt_masks());
            if pairs.is_empty() {
                continue;
            }
            scenes_with_overlap += 1;
            let pm = predict_scene(&mpa.outcome.model, &mpa.cfg.model, scene, Decoder::for_config(&mpa.cfg)).unwrap();
            if !pairs.iter().any(|&(j, k)| pm[j].binary.overlaps(&pm[k].binary)) {
                mpa_misses += 1;
            }
            let ps = predict_scene(&spa.outcome.model, &spa.cfg.model, scene, Decoder::for_config(&spa.cfg)).unwrap();
            let binary: Vec<Mask> = ps.into_iter().map(|p| p.binary).collect();
            spa_violations += overlapping_pairs(&binary).len();
        }
    }
    Line {
        id: 6,
        name: "overlap behavior",
        pass: scenes_with_overlap > 0 && mpa_misses == 0 && spa_violations == 0,
        detail: format!(
            "{scenes_with_overlap} scene evaluations with overlapping ground truth (3 seeds); MPA masks of an overlapping pair failed to overlap in {mpa_misses}; overlapping SPA mask pairs: {spa_violations}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 7

fn composition_miou(run: &Run, scenes: &[SynthScene], keep: impl Fn(&tseg::synth::Expression) -> bool) -> f64 {
    let decoder = Decoder::for_config(&run.cfg);
    let mut ious = Vec::new();
    for scene in scenes {
        let pred = predict_scene(&run.outcome.model, &run.cfg.model, scene, decoder).unwrap();
        for ((e, p), gt) in scene.expressions.iter().zip(&pred).zip(scene.gt_masks()) {
            if keep(e) {
                ious.push(iou(&p.binary, gt).unwrap());
            }
        }
    }
    assert!(!ious.is_empty());
    ious.iter().sum::<f64>() / ious.len() as f64
}

fn zero_shot(runs: &[Run], seen: &[SynthScene], heldout: &[SynthScene]) -> Line {
    let mut seen_scores = Vec::new();
    let mut held_scores = Vec::new();
    for &seed in &SEEDS {
        let run = find(runs, seed, Some(Mechanism::Mpa));
        let pairs = run.cfg.synth.holdout.clone();
        let composed = |e: &tseg::synth::Expression| matches!(e.kind, ExprKind::ColorShape | ExprKind::SizeColorShape);
        seen_scores.push(composition_miou(run, seen, composed));
        held_scores.push(composition_miou(run, heldout, |e| {
            composed(e) && pairs.iter().any(|&(c, s)| e.names_composition(c, s))
        }));
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (s, h) = (avg(&seen_scores), avg(&held_scores));
    Line {
        id: 7,
        name: "zero-shot composition transfer",
        pass: h >= ZERO_SHOT_RATIO * s,
        detail: format!(
            "MPA 3-seed mean mIoU on color-shape phrases: held-out {h:.4} vs seen {s:.4} (ratio {:.3}, need >= {ZERO_SHOT_RATIO})",
            h / s
        ),
    }
}

// ---------------------------------------------------------------- criterion 8

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::weak(Mechanism::Mpa);
    cfg.total_iters = 3;
    cfg.batch_size = 2;
    cfg.seed = 11;
    cfg
}

fn determinism() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let cfg = small_config();
    let text = tseg::config::RunConfig {
        train: cfg.clone(),
        ..Default::default()
    }
    .render();

    let mut checkpoints = Vec::new();
    let mut mask_bytes = Vec::new();
    for round in 0..2 {
        let out = train(&cfg).unwrap();
        let ck = Checkpoint::from_model(&out.model, out.iteration as u64, &text);
        let path = dir.path().join(format!("run{round}.ckpt"));
        ck.save(&path).unwrap();
        checkpoints.push(std::fs::read(&path).unwrap());

        let model = Checkpoint::load(&path).unwrap().to_model(&cfg.model).unwrap();
        let scenes = eval_scenes(EVAL_SEED, &cfg.synth, Split::EvalSeen, 2).unwrap();
        let mut bytes = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            let pred = predict_scene(&model, &cfg.model, scene, Decoder::for_config(&cfg)).unwrap();
            let paths = write_masks(&dir.path().join(format!("masks{round}")), &format!("scene{i}"), &pred).unwrap();
            for p in paths {
                bytes.push(std::fs::read(p).unwrap());
            }
        }
        mask_bytes.push(bytes);
    }
    if checkpoints[0] != checkpoints[1] {
        failures.push("checkpoints differ between identical runs".to_string());
    }
    if mask_bytes[0] != mask_bytes[1] {
        failures.push("mask files differ between identical runs".to_string());
    }

    let reloaded = Checkpoint::from_bytes(&checkpoints[0]).unwrap();
    if reloaded.to_bytes().unwrap() != checkpoints[0] {
        failures.push("checkpoint save-load-save is not byte-identical".to_string());
    }

    // Independent reader for the emitted image formats.
    let scene = &eval_scenes(EVAL_SEED, &cfg.synth, Split::EvalSeen, 1).unwrap()[0];
    let p6 = pnm::encode_rgb(&scene.image);
    match image::load_from_memory_with_format(&p6, image::ImageFormat::Pnm) {
        Ok(img) => {
            let rgb = img.to_rgb8();
            let ok = rgb.width() as usize == scene.image.width
                && rgb.height() as usize == scene.image.height
                && rgb.pixels().enumerate().all(|(k, px)| {
                    let (y, x) = (k / scene.image.width, k % scene.image.width);
                    (0..3).all(|c| px[c] == (scene.image.get(y, x, c).clamp(0.0, 1.0) * 255.0).round() as u8)
                });
            if !ok {
                failures.push("P6 pixels differ under the independent reader".into());
            }
        }
        Err(e) => failures.push(format!("P6 rejected by independent reader: {e}")),
    }
    let gt = &scene.gt_masks()[0];
    let p5 = pnm::encode_mask(gt);
    match image::load_from_memory_with_format(&p5, image::ImageFormat::Pnm) {
        Ok(img) => {
            let g = img.to_luma8();
            let ok = g.pixels().enumerate().all(|(k, px)| (px[0] == 255) == gt.data[k] && (px[0] == 0 || px[0] == 255));
            if !ok {
                failures.push("P5 pixels differ under the independent reader".into());
            }
        }
        Err(e) => failures.push(format!("P5 rejected by independent reader: {e}")),
    }
    for bytes in &mask_bytes[0] {
        if image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm).is_err() {
            failures.push("emitted mask file rejected by independent reader".into());
            break;
        }
    }

    Line {
        id: 8,
        name: "determinism and formats",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "two fixed-seed runs gave byte-identical checkpoints ({} bytes) and {} identical mask files; save-load-save identical; P5/P6 parsed by the image crate",
                checkpoints[0].len(),
                mask_bytes[0].len()
            )
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let start = Instant::now();
    let mut lines = Vec::new();
    for f in [gradients, formulas, structure, determinism] {
        let line = f();
        report(&line);
        lines.push(line);
    }

    let runs = train_all();
    let default = TrainConfig::default();
    let seen = eval_scenes(EVAL_SEED, &default.synth, Split::EvalSeen, EVAL_SCENES).unwrap();
    let heldout = eval_scenes(EVAL_SEED, &default.synth, Split::EvalHeldout, EVAL_SCENES).unwrap();

    let (line4, weak) = ordering(&runs, &seen);
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "  mIoU table (rows = seeds; GAP GMP SPA MPA):").unwrap();
        for (seed, row) in SEEDS.iter().zip(&weak) {
            writeln!(out, "    seed {seed}: {:.4} {:.4} {:.4} {:.4}", row[0], row[1], row[2], row[3]).unwrap();
        }
    }
    report(&line4);
    let line5 = upper_bound(&runs, &seen, &weak);
    report(&line5);
    let line6 = overlap(&runs, &seen);
    report(&line6);
    let line7 = zero_shot(&runs, &seen, &heldout);
    report(&line7);
    lines.extend([line4, line5, line6, line7]);
    lines.sort_by_key(|l| l.id);

    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "acceptance: {} of {} criteria passed in {:.0}s{}",
        lines.len() - failed.len(),
        lines.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    )
    .unwrap();
    drop(out);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
