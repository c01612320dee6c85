//! AdamW training with best-by-validation checkpointing and exact resume.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ndarray::{s, Array2};

use hifi_core::detect::{assign_targets, detection_loss, Anchors, BBox, LossConfig, LossParts, Targets};
use hifi_core::evalkit::{evaluate, EvalReport, SceneEval};
use hifi_core::hifinet::ModelInput;
use hifi_core::kv::KvMap;
use hifi_core::nncore::{AdamW, Graph, Grads};
use hifi_core::{Error, Result};

use crate::config::{Augment, LrSchedule, RunConfig, Split};
use crate::dataset::{load_split, mix_seed, Manifest, Sample};
use crate::model::{self, Detector};
use crate::pool::Pool;

pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";
pub const LOG: &str = "train.log";
pub const STEPS: &str = "steps.csv";

/// Loss of one optimizer step, averaged over its batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub total: f64,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
    /// Fractions in `[0, 1]`.
    pub val_map50: Option<f64>,
    pub val_map50_95: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_map50: Option<f64>,
    pub steps_done: usize,
    pub best: PathBuf,
    pub last: PathBuf,
}

/// Takes the class list from the dataset and checks the spectrogram size.
pub fn bind_to_dataset(cfg: &RunConfig, manifest: &Manifest) -> Result<RunConfig> {
    let mut cfg = cfg.clone();
    cfg.classes = manifest.classes()?;
    cfg.model.num_classes = cfg.classes.len();
    cfg.validate()?;
    let n_t: usize = manifest.header.require("n_t")?;
    let n_f: usize = manifest.header.require("n_f")?;
    if n_t != cfg.model.input_size || n_f != cfg.model.input_size {
        return Err(Error::Config(format!(
            "dataset spectrograms are {n_t}×{n_f}, model input_size is {}",
            cfg.model.input_size
        )));
    }
    Ok(cfg)
}

/// Ground truth with network-local class indices; unknown classes are an error.
pub fn local_labels(cfg: &RunConfig, s: &Sample) -> Result<Vec<(usize, BBox)>> {
    s.labels
        .iter()
        .map(|&(c, b)| {
            cfg.local_class(c)
                .map(|l| (l, b))
                .ok_or_else(|| Error::Format(format!("scene {}: class {c} not among the dataset classes", s.id)))
        })
        .collect()
}

struct Prepared {
    input: ModelInput<f32>,
    targets: Targets,
}

fn lr_at(cfg: &RunConfig, step: usize, total: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => {
            let warm = cfg.warmup_steps.min(total / 2);
            if step < warm {
                return cfg.lr * (step + 1) as f64 / warm as f64;
            }
            let span = (total - warm).max(1) as f64;
            let t = ((step - warm) as f64 / span).min(1.0);
            let floor = cfg.lr * cfg.lr_final;
            floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xE90C, epoch as u64)));
    order
}

fn prepare(det: &Detector, grids: &[usize], spec: &Array2<f32>, labels: &[(usize, BBox)]) -> Result<Prepared> {
    Ok(Prepared { input: det.input(spec)?, targets: assign_targets(labels, &det.anchors, grids) })
}

/// Bit 0 reverses frequency (columns), bit 1 reverses time (rows).
fn flip_code(seed: u64, step: usize, sample: usize) -> u64 {
    mix_seed(mix_seed(seed ^ 0xF11B, step as u64), sample as u64) & 3
}

pub fn flip(spec: &Array2<f32>, labels: &[(usize, BBox)], code: u64) -> (Array2<f32>, Vec<(usize, BBox)>) {
    let (fx, fy) = (code & 1 != 0, code & 2 != 0);
    let view = match (fx, fy) {
        (false, false) => spec.view(),
        (true, false) => spec.slice(s![.., ..;-1]),
        (false, true) => spec.slice(s![..;-1, ..]),
        (true, true) => spec.slice(s![..;-1, ..;-1]),
    };
    let boxes = labels
        .iter()
        .map(|&(c, b)| {
            let cx = if fx { 1.0 - b.cx } else { b.cx };
            let cy = if fy { 1.0 - b.cy } else { b.cy };
            (c, BBox::new(cx, cy, b.w, b.h))
        })
        .collect();
    (view.to_owned(), boxes)
}

fn sample_step(det: &Detector, p: &Prepared, loss_cfg: &LossConfig) -> Result<(LossParts, Grads<f32>)> {
    let mut g = Graph::with_params(&det.store);
    let out = det.net.forward(&mut g, &p.input)?;
    let loss = detection_loss(&mut g, &out.scales, &p.targets, &det.anchors, det.cfg().num_classes, loss_cfg)?;
    g.backward(loss.total);
    Ok((loss.parts, g.param_grads()))
}

/// Scores `samples` at the evaluation thresholds.
pub fn score(det: &Detector, cfg: &RunConfig, samples: &[Sample], inputs: &[ModelInput<f32>], pool: &Pool) -> Result<EvalReport> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let scenes = pool
        .map(&idx, |&i| -> Result<SceneEval> {
            let s = &samples[i];
            Ok(SceneEval {
                id: s.id,
                snr_db: s.snr_db,
                dets: det.detect(&inputs[i], cfg.eval_conf, cfg.eval_iou)?,
                gts: local_labels(cfg, s)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&scenes, cfg.classes.len()))
}

struct Log {
    file: fs::File,
    echo: Option<Box<dyn Write>>,
}

impl Log {
    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}")?;
        if let Some(e) = self.echo.as_mut() {
            writeln!(e, "{s}")?;
        }
        Ok(())
    }
}

/// Runs `train` for a config already bound to its dataset. Progress lines
/// also go to `echo` when given.
pub fn train(cfg: &RunConfig, echo: Option<Box<dyn Write>>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let manifest = Manifest::read(&cfg.data_dir)?;
    let pool = Pool::new(cfg.workers);
    fs::create_dir_all(&cfg.run_dir)?;
    let mut log = Log {
        file: fs::OpenOptions::new().create(true).append(cfg.resume).write(true).truncate(!cfg.resume).open(cfg.run_dir.join(LOG))?,
        echo,
    };
    let mut steps_csv = fs::OpenOptions::new()
        .create(true)
        .append(cfg.resume)
        .write(true)
        .truncate(!cfg.resume)
        .open(cfg.run_dir.join(STEPS))?;
    if cfg.resume {
        log.line("# resuming from last.ckpt")?;
    } else {
        log.line(cfg.echo().trim_end())?;
        writeln!(steps_csv, "step,lr,total,box,obj,cls")?;
    }
    let best_path = cfg.run_dir.join(BEST);
    let last_path = cfg.run_dir.join(LAST);

    let mut train_samples = load_split(&cfg.data_dir, &manifest, Split::Train, cfg.workers)?;
    if train_samples.is_empty() {
        return Err(Error::InvalidInput("the train split is empty".into()));
    }
    if cfg.overfit {
        train_samples.truncate(1);
    }
    let val_samples =
        if cfg.overfit { Vec::new() } else { load_split(&cfg.data_dir, &manifest, Split::Val, cfg.workers)? };

    let loaded = if cfg.resume { Some(model::load(&last_path)?) } else { None };
    let mut det = match &loaded {
        Some(l) => {
            if l.detector.cfg() != &cfg.model || l.detector.classes != cfg.classes {
                return Err(Error::Config(format!(
                    "{} was written with a different model configuration",
                    last_path.display()
                )));
            }
            let mut d = Detector::new(cfg.model.clone(), l.detector.anchors.clone(), cfg.classes.clone(), cfg.seed)?;
            d.store = l.detector.store.clone();
            d
        }
        None => {
            let mut shapes = Vec::new();
            for s in &train_samples {
                shapes.extend(s.labels.iter().map(|(_, b)| (b.w, b.h)));
            }
            let anchors = Anchors::fit(&shapes, cfg.model.strides().len(), cfg.model.num_anchors, cfg.seed)?;
            Detector::new(cfg.model.clone(), anchors, cfg.classes.clone(), cfg.seed)?
        }
    };
    let mut opt = AdamW::new(&det.store, cfg.lr, cfg.weight_decay);
    let (start, mut best) = match &loaded {
        Some(l) => {
            l.restore_optimizer(&mut opt)?;
            (l.meta.require::<usize>("step")?, l.meta.parse_value::<f64>("best_map50")?)
        }
        None => (0, None),
    };
    drop(loaded);

    let grids = cfg.model.grid_sizes();
    let train_labels = train_samples.iter().map(|s| local_labels(cfg, s)).collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..train_samples.len()).collect();
    let prepared = pool
        .map(&idx, |&i| prepare(&det, &grids, &train_samples[i].spectrogram, &train_labels[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let augment = cfg.augment == Augment::Flip && !cfg.overfit;
    let val_inputs =
        pool.map(&val_samples, |s| det.input(&s.spectrogram)).into_iter().collect::<Result<Vec<_>>>()?;

    let n = prepared.len();
    let (batch, per_epoch, total) = if cfg.overfit {
        (1, 1, cfg.overfit_steps)
    } else {
        let b = cfg.batch_size.min(n);
        let per = n.div_ceil(b);
        (b, per, cfg.epochs * per)
    };
    let stop = cfg.max_steps.map_or(total, |m| m.min(total));

    log.line(&format!(
        "# {} train scenes, {} val scenes, batch {batch}, {per_epoch} steps/epoch, steps {start}..{stop} of {total}, {} parameters",
        n,
        val_samples.len(),
        det.store.numel()
    ))?;
    log.line(&format!("# anchors {}", det.anchors))?;

    let loss_cfg = cfg.loss_config();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut order = Vec::new();
    let mut epoch_acc = [0.0f64; 4];
    let mut epoch_steps = 0;
    let mut epoch_clock = Instant::now();
    let mut best_saved = best_path.is_file() && cfg.resume;

    let save = |det: &Detector, opt: &AdamW<f32>, path: &PathBuf, step: usize, best: Option<f64>| -> Result<()> {
        let mut extra = KvMap::new();
        extra.set("step", step);
        extra.set("steps_per_epoch", per_epoch);
        extra.set("seed", cfg.seed);
        if let Some(b) = best {
            extra.set("best_map50", b);
        }
        det.save(path, Some(opt), &extra)
    };

    for step in start..stop {
        let epoch = step / per_epoch;
        let pos = step % per_epoch;
        if pos == 0 || step == start {
            order = epoch_order(n, cfg.seed, epoch);
        }
        let picks: Vec<usize> = order[pos * batch..((pos + 1) * batch).min(n)].to_vec();
        let results = pool.map(&picks, |&i| {
            let code = if augment { flip_code(cfg.seed, step, i) } else { 0 };
            if code == 0 {
                return sample_step(&det, &prepared[i], &loss_cfg);
            }
            let (spec, labels) = flip(&train_samples[i].spectrogram, &train_labels[i], code);
            sample_step(&det, &prepare(&det, &grids, &spec, &labels)?, &loss_cfg)
        });
        let mut grads = Grads::zeros_like(&det.store);
        let mut sums = [0.0f64; 4];
        for r in results {
            let (parts, g) = r.map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
                other => other,
            })?;
            grads.add_assign(&g);
            sums[0] += parts.total;
            sums[1] += parts.box_loss();
            sums[2] += parts.obj_loss();
            sums[3] += parts.cls_loss();
        }
        let b = picks.len() as f64;
        grads.scale(1.0 / b as f32);
        let rec = StepRecord {
            step,
            lr: lr_at(cfg, step, total),
            total: sums[0] / b,
            box_loss: sums[1] / b,
            obj_loss: sums[2] / b,
            cls_loss: sums[3] / b,
        };
        if !rec.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        opt.lr = rec.lr;
        opt.step(&mut det.store, &grads);
        writeln!(steps_csv, "{},{},{},{},{},{}", rec.step, rec.lr, rec.total, rec.box_loss, rec.obj_loss, rec.cls_loss)?;
        steps.push(rec);
        for (a, v) in epoch_acc.iter_mut().zip([rec.total, rec.box_loss, rec.obj_loss, rec.cls_loss]) {
            *a += v;
        }
        epoch_steps += 1;

        if cfg.overfit {
            if step % 25 == 0 || step + 1 == stop {
                log.line(&format!("step {step} loss {:.5} box {:.5} obj {:.5} cls {:.5}", rec.total, rec.box_loss, rec.obj_loss, rec.cls_loss))?;
            }
            continue;
        }
        if pos + 1 == per_epoch {
            let report = if val_samples.is_empty() { None } else { Some(score(&det, cfg, &val_samples, &val_inputs, &pool)?) };
            let m = epoch_steps as f64;
            let er = EpochRecord {
                epoch,
                steps: epoch_steps,
                total: epoch_acc[0] / m,
                box_loss: epoch_acc[1] / m,
                obj_loss: epoch_acc[2] / m,
                cls_loss: epoch_acc[3] / m,
                val_map50: report.as_ref().map(|r| r.map_50 / 100.0),
                val_map50_95: report.as_ref().map(|r| r.map_50_95 / 100.0),
                seconds: epoch_clock.elapsed().as_secs_f64(),
            };
            let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            log.line(&format!(
                "epoch {}/{} loss {:.5} box {:.5} obj {:.5} cls {:.5} val_map50 {} val_map50_95 {} lr {:.6} time {:.1}s",
                epoch + 1,
                cfg.epochs,
                er.total,
                er.box_loss,
                er.obj_loss,
                er.cls_loss,
                fmt_opt(er.val_map50),
                fmt_opt(er.val_map50_95),
                rec.lr,
                er.seconds
            ))?;
            let improved = match (er.val_map50, best) {
                (Some(v), Some(b)) => v > b,
                (Some(_), None) => true,
                (None, _) => !best_saved,
            };
            if improved {
                best = er.val_map50.or(best);
                save(&det, &opt, &best_path, step + 1, best)?;
                best_saved = true;
            }
            save(&det, &opt, &last_path, step + 1, best)?;
            epochs.push(er);
            epoch_acc = [0.0; 4];
            epoch_steps = 0;
            epoch_clock = Instant::now();
        }
    }
    let steps_done = stop.max(start);
    if stop % per_epoch != 0 || cfg.overfit || stop == start {
        save(&det, &opt, &last_path, steps_done, best)?;
    }
    if !best_saved {
        fs::copy(&last_path, &best_path)?;
        fs::copy(model::meta_path(&last_path), model::meta_path(&best_path))?;
    }
    log.line(&format!(
        "# done: {steps_done} steps, best val_map50 {}, {:.1}s",
        best.map_or("n/a".to_string(), |b| format!("{b:.4}")),
        started.elapsed().as_secs_f64()
    ))?;
    Ok(TrainOutcome { steps, epochs, best_map50: best, steps_done, best: best_path, last: last_path })
}
