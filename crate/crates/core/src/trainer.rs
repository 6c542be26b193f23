//! Training, evaluation, prediction, and the three-way mode comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::combiner::{fixed_combiner, total_loss, AdaptiveState};
use crate::config::{AlphaUpdate, Mode, RunConfig};
use crate::data::{
    batch_to_tensors, batches, load_dataset, make_splits, read_gray_png, resolve, split_hash,
    synth_generate, write_gray_png, Sample, Split, SplitIndex,
};
use crate::error::{Error, Result};
use crate::metrics::{binarize, dice, iou, MetricsReport};
use crate::model::{build, load_checkpoint, save_checkpoint, ModelParams};
use crate::tensor::{Adam, Element, Tape, Tensor};
use crate::tensormap::{self, ElemData, Entry};

/// One log line per training batch. `l_mse` is absent in single mode;
/// `alpha` is absent unless the mode is proposed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: u64,
    pub batch: u64,
    pub l_bce: f64,
    pub l_mse: Option<f64>,
    pub alpha: Option<f64>,
    pub lr: f64,
    pub wall_ms: u128,
}

pub fn log_csv(mode: Mode, rows: &[TrainLogRow]) -> String {
    let mut out = String::new();
    match mode {
        Mode::Proposed => out.push_str("epoch,batch,l_bce,l_mse,alpha,lr,wall_ms\n"),
        Mode::MultitaskFixed => out.push_str("epoch,batch,l_bce,l_mse,lr,wall_ms\n"),
        Mode::Single => out.push_str("epoch,batch,l_bce,lr,wall_ms\n"),
    }
    for r in rows {
        let _ = write!(out, "{},{},{}", r.epoch, r.batch, r.l_bce);
        if let Some(m) = r.l_mse {
            let _ = write!(out, ",{m}");
        }
        if let Some(a) = r.alpha {
            let _ = write!(out, ",{a}");
        }
        let _ = writeln!(out, ",{},{}", r.lr, r.wall_ms);
    }
    out
}

fn format_tail(rows: &[TrainLogRow]) -> String {
    rows.iter()
        .rev()
        .take(10)
        .rev()
        .map(|r| {
            format!(
                "epoch {} batch {}: l_bce={} l_mse={:?} alpha={:?}",
                r.epoch, r.batch, r.l_bce, r.l_mse, r.alpha
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub rows: Vec<TrainLogRow>,
    pub split: SplitIndex,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub split_path: PathBuf,
    pub best_val_dice: Option<f64>,
    pub epochs_run: u64,
}

pub fn write_split_file(path: &Path, split: &SplitIndex) -> Result<()> {
    let mut text = format!("seed={}\nhash={}\n", split.seed, split_hash(split));
    for (tag, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids.iter() {
            let _ = writeln!(text, "{tag} {id}");
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_split_file(path: &Path) -> Result<SplitIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut split = SplitIndex {
        train: vec![],
        val: vec![],
        test: vec![],
        seed: 0,
    };
    for line in text.lines() {
        if let Some(seed) = line.strip_prefix("seed=") {
            split.seed = seed
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad seed line", path.display())))?;
        } else if line.starts_with("hash=") {
            continue;
        } else if let Some((tag, id)) = line.split_once(' ') {
            match tag {
                "train" => split.train.push(id.to_string()),
                "val" => split.val.push(id.to_string()),
                "test" => split.test.push(id.to_string()),
                other => {
                    return Err(Error::Data(format!(
                        "{}: unknown split tag {other:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    Ok(split)
}

/// Evaluate a model over samples: forward, sigmoid, threshold, Dice/IoU.
pub fn evaluate_params(
    params: &ModelParams<f32>,
    samples: &[&Sample],
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = predict_probs(params, &s.image, s.width, s.height)?.0;
        let pred = binarize(&probs, s.width, s.height, threshold)?;
        per_image.push((
            s.id.clone(),
            dice(&pred, &s.mask)?,
            iou(&pred, &s.mask)?,
        ));
    }
    MetricsReport::from_per_image(per_image, threshold)
}

/// Forward one image, reflect-padding to the model's spatial divisor if
/// needed and cropping back. Returns (probabilities, dt prediction if the
/// model has a DT head, whether padding was applied).
pub fn predict_probs(
    params: &ModelParams<f32>,
    image: &[f32],
    width: usize,
    height: usize,
) -> Result<(Vec<f32>, Option<Vec<f32>>, bool)> {
    let div = params.config.spatial_divisor();
    let pw = width.div_ceil(div) * div;
    let ph = height.div_ceil(div) * div;
    let padded = pw != width || ph != height;
    let data = if padded {
        reflect_pad(image, width, height, pw, ph)
    } else {
        image.to_vec()
    };
    let input = Tensor::from_vec(vec![1, 1, ph, pw], data)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = bound.forward(&mut tape, &input)?;
    let probs_full = tape.sigmoid(&out.seg_logits);
    let probs = crop(probs_full.data(), pw, width, height);
    let dt = out
        .dt_pred
        .map(|t| crop(t.data(), pw, width, height));
    Ok((probs, dt, padded))
}

fn reflect_pad(image: &[f32], w: usize, h: usize, pw: usize, ph: usize) -> Vec<f32> {
    let reflect = |i: usize, n: usize| {
        if i < n {
            i
        } else if n == 1 {
            0
        } else {
            // mirror about the last pixel, no edge repeat
            let over = i - (n - 1);
            n - 1 - over.min(n - 1)
        }
    };
    let mut out = vec![0.0; pw * ph];
    for y in 0..ph {
        let sy = reflect(y, h);
        for x in 0..pw {
            out[y * pw + x] = image[sy * w + reflect(x, w)];
        }
    }
    out
}

fn crop(data: &[f32], src_w: usize, w: usize, h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&data[y * src_w..y * src_w + w]);
    }
    out
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    train_with_split(config, None)
}

/// Train per the run config; a preset split overrides the seeded one (used
/// by `compare` so all modes consume identical splits).
pub fn train_with_split(config: &RunConfig, preset: Option<SplitIndex>) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let (samples, _) = load_dataset(&config.data_root)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = match preset {
        Some(s) => s,
        None => make_splits(
            &ids,
            (config.train_frac, config.val_frac, config.test_frac()),
            config.seed,
        )?,
    };
    let split_path = config.out_dir.join("splits.txt");
    write_split_file(&split_path, &split)?;

    let train_samples = resolve(&samples, &split.train)?;
    let val_samples = resolve(&samples, &split.val)?;
    if train_samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }

    let mut params = build::<f32>(&config.model_config())?;
    let mut adam = Adam::new(config.lr, config.beta1, config.beta2, config.adam_eps);
    let mut state = AdaptiveState::new(config.gamma, config.epsilon);
    let mut rows: Vec<TrainLogRow> = Vec::new();

    let best_path = config.out_dir.join("best.ckpt");
    let last_path = config.out_dir.join("last.ckpt");
    let mut best_val_dice: Option<f64> = None;
    let mut epochs_run = 0;

    'epochs: for epoch in 0..config.epochs {
        let epoch_batches = batches(&train_samples, config.batch_size, config.seed, epoch, true)?;
        let mut epoch_bce = 0.0;
        let mut epoch_mse = 0.0;
        for (batch_idx, batch) in epoch_batches.iter().enumerate() {
            let t0 = Instant::now();
            let (image, mask_target, dt_target) = batch_to_tensors(batch)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = bound.forward(&mut tape, &image)?;
            let l_bce = tape.bce_with_logits(&out.seg_logits, &mask_target)?;
            let bce_val = l_bce.item()?.as_f64();
            let mut mse_val = None;
            let mut alpha_val = None;

            let loss = match config.mode {
                Mode::Single => l_bce,
                Mode::MultitaskFixed | Mode::Proposed => {
                    let dt_pred = out
                        .dt_pred
                        .as_ref()
                        .expect("dual-head modes have a DT decoder");
                    let l_mse = tape.mse(dt_pred, &dt_target)?;
                    let m = l_mse.item()?.as_f64();
                    mse_val = Some(m);
                    epoch_bce += bce_val;
                    epoch_mse += m;
                    match config.mode {
                        Mode::MultitaskFixed => {
                            fixed_combiner(&mut tape, &l_bce, &l_mse, config.fixed_weight)?
                        }
                        _ => {
                            // Alpha is read from the running means first; the
                            // cold-start value is exactly 1.
                            let alpha = state.compute_alpha();
                            alpha_val = Some(alpha);
                            let total = total_loss(&mut tape, &l_bce, &l_mse, alpha)?;
                            if config.alpha_update == AlphaUpdate::Batch {
                                state.update(bce_val, m)?;
                            }
                            total
                        }
                    }
                }
            };

            let loss_val = loss.item()?.as_f64();
            if !loss_val.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss {loss_val} at epoch {epoch} batch {batch_idx}; last rows:\n{}",
                    format_tail(&rows)
                )));
            }

            let grads = tape.backward(&loss)?;
            params.zero_grads();
            params.accumulate_grads(&bound, &grads);
            let (mut p, g) = params.optim_views();
            adam.step(&mut p, &g)?;

            rows.push(TrainLogRow {
                epoch,
                batch: batch_idx as u64,
                l_bce: bce_val,
                l_mse: mse_val,
                alpha: alpha_val,
                lr: config.lr,
                wall_ms: t0.elapsed().as_millis(),
            });
        }
        epochs_run = epoch + 1;

        if config.mode == Mode::Proposed && config.alpha_update == AlphaUpdate::Epoch {
            let n = epoch_batches.len() as f64;
            state.update(epoch_bce / n, epoch_mse / n)?;
        }

        if !val_samples.is_empty() {
            let report = evaluate_params(&params, &val_samples, config.threshold)?;
            if best_val_dice.is_none_or(|b| report.mean_dice > b) {
                best_val_dice = Some(report.mean_dice);
                save_checkpoint(&params, &best_path)?;
            }
        }

        if let Some(target) = config.early_stop_dice {
            let report = evaluate_params(&params, &train_samples, config.threshold)?;
            if report.mean_dice >= target {
                break 'epochs;
            }
        }
    }

    save_checkpoint(&params, &last_path)?;
    if best_val_dice.is_none() {
        // No validation split: the last checkpoint doubles as best.
        save_checkpoint(&params, &best_path)?;
    }
    let log_path = config.out_dir.join("train_log.csv");
    std::fs::write(&log_path, log_csv(config.mode, &rows)).map_err(|e| Error::io(&log_path, e))?;

    Ok(TrainOutcome {
        params,
        rows,
        split,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
        split_path,
        best_val_dice,
        epochs_run,
    })
}

/// Evaluate a checkpoint against one split of a dataset and write the
/// report CSV next to the checkpoint.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data_root: &Path,
    split_name: &str,
    threshold: f64,
    out_csv: &Path,
) -> Result<MetricsReport> {
    let params = load_checkpoint::<f32>(checkpoint)?;
    let (samples, _) = load_dataset(data_root)?;
    let selected: Vec<&Sample> = if split_name == "all" {
        samples.iter().collect()
    } else {
        let split: Split = split_name.parse()?;
        let split_file = checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("splits.txt");
        let index = read_split_file(&split_file)?;
        resolve(&samples, index.ids(split))?
    };
    if selected.is_empty() {
        return Err(Error::Data(format!("split {split_name:?} is empty")));
    }
    let report = evaluate_params(&params, &selected, threshold)?;
    report.write_csv(out_csv)?;
    Ok(report)
}

/// Per-image prediction artifacts: probability PNG, binarized mask PNG,
/// and (dual-head) the DT map as a tensor-map file plus a normalized PNG.
pub fn predict_files(
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    threshold: f64,
) -> Result<Vec<String>> {
    let params = load_checkpoint::<f32>(checkpoint)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        return Err(Error::Data(format!(
            "no PNG inputs found under {}",
            input.display()
        )));
    }

    let mut produced = Vec::new();
    for path in &inputs {
        let (w, h, px) = read_gray_png(path)?;
        let image: Vec<f32> = px.iter().map(|&p| p as f32 / 255.0).collect();
        let (probs, dt, was_padded) = predict_probs(&params, &image, w, h)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "image".into());

        let prob_png: Vec<u8> = probs
            .iter()
            .map(|&p| (255.0 * p as f64).round() as u8)
            .collect();
        write_gray_png(&out_dir.join(format!("{stem}_prob.png")), w, h, &prob_png)?;

        let mask = binarize(&probs, w, h, threshold)?;
        let mask_png: Vec<u8> = mask.pixels().iter().map(|&p| p * 255).collect();
        write_gray_png(&out_dir.join(format!("{stem}_mask.png")), w, h, &mask_png)?;

        if let Some(dt_values) = dt {
            let entry = Entry::new("dt", vec![h, w], ElemData::F32(dt_values.clone()))?;
            tensormap::write_file(&out_dir.join(format!("{stem}_dt.dtc")), &[entry])?;
            let max = dt_values.iter().cloned().fold(0.0f32, f32::max);
            let dt_png: Vec<u8> = dt_values
                .iter()
                .map(|&v| {
                    if max > 0.0 {
                        (255.0 * (v / max) as f64).round() as u8
                    } else {
                        0
                    }
                })
                .collect();
            write_gray_png(&out_dir.join(format!("{stem}_dt.png")), w, h, &dt_png)?;
        }

        if was_padded {
            let note = out_dir.join(format!("{stem}_note.txt"));
            std::fs::write(
                &note,
                format!(
                    "input {w}x{h} was reflect-padded to a multiple of {} and cropped back\n",
                    params.config.spatial_divisor()
                ),
            )
            .map_err(|e| Error::io(&note, e))?;
        }
        produced.push(stem);
    }
    Ok(produced)
}

#[derive(Debug, Clone)]
pub struct ModeScores {
    pub mode: Mode,
    pub per_seed: Vec<(u64, f64, f64)>,
    pub median_dice: f64,
    pub median_iou: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub scores: Vec<ModeScores>,
    pub split_hash: String,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Default synthetic benchmark dimensions: 250 images of 64x64, split
/// 200 train / 50 test.
pub const BENCH_IMAGES: usize = 250;
pub const BENCH_SIZE: usize = 64;

/// Train all three modes per seed on identical splits and report per-mode
/// median test Dice/IoU.
pub fn compare(config: &RunConfig, seeds: &[u64]) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    if !config.data_root.join("img").is_dir() {
        synth_generate(BENCH_IMAGES, BENCH_SIZE, config.seed, &config.data_root)?;
    }
    let (samples, _) = load_dataset(&config.data_root)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_splits(
        &ids,
        (config.train_frac, config.val_frac, config.test_frac()),
        config.seed,
    )?;
    let hash = split_hash(&split);
    write_split_file(&config.out_dir.join("splits.txt"), &split)?;
    let test_samples = resolve(&samples, &split.test)?;
    if test_samples.is_empty() {
        return Err(Error::Data("comparison test split is empty".into()));
    }

    let defaults = RunConfig::default();
    let mut scores = Vec::new();
    for mode in [Mode::Proposed, Mode::MultitaskFixed, Mode::Single] {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.mode = mode;
            cfg.heads = mode.expected_heads();
            cfg.seed = seed;
            cfg.out_dir = config.out_dir.join(format!("{mode}-seed{seed}"));
            if mode == Mode::Single {
                cfg.gamma = defaults.gamma;
                cfg.epsilon = defaults.epsilon;
                cfg.fixed_weight = defaults.fixed_weight;
                cfg.alpha_update = defaults.alpha_update;
            }
            let outcome = train_with_split(&cfg, Some(split.clone()))?;
            let report = evaluate_params(&outcome.params, &test_samples, config.threshold)?;
            report.write_csv(&cfg.out_dir.join("test_metrics.csv"))?;
            per_seed.push((seed, report.mean_dice, report.mean_iou));
        }
        let mut dices: Vec<f64> = per_seed.iter().map(|r| r.1).collect();
        let mut ious: Vec<f64> = per_seed.iter().map(|r| r.2).collect();
        scores.push(ModeScores {
            mode,
            median_dice: median(&mut dices),
            median_iou: median(&mut ious),
            per_seed,
        });
    }

    let csv_path = config.out_dir.join("comparison.csv");
    let mut csv = String::from("mode,dice,iou\n");
    for s in &scores {
        let _ = writeln!(csv, "{},{},{}", s.mode, s.median_dice, s.median_iou);
    }
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;

    let manifest_path = config.out_dir.join("protocol.txt");
    let mut manifest = String::new();
    let _ = writeln!(manifest, "benchmark=synthetic tubular curves");
    let _ = writeln!(
        manifest,
        "images={} train={} val={} test={}",
        ids.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let _ = writeln!(manifest, "epochs={}", config.epochs);
    let _ = writeln!(manifest, "batch_size={}", config.batch_size);
    let _ = writeln!(manifest, "threshold={}", config.threshold);
    let _ = writeln!(
        manifest,
        "model: base_channels={} depth={}",
        config.base_channels, config.depth
    );
    let _ = writeln!(
        manifest,
        "seeds={}",
        seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(manifest, "split_hash={hash}");
    let _ = writeln!(
        manifest,
        "aggregation=median over seeds; scores are unweighted means over test images"
    );
    for s in &scores {
        for (seed, d, i) in &s.per_seed {
            let _ = writeln!(manifest, "score mode={} seed={seed} dice={d} iou={i}", s.mode);
        }
    }
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(Comparison {
        scores,
        split_hash: hash,
        csv_path,
        manifest_path,
    })
}
