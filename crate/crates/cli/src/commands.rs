//! Command bodies and the error-to-exit-code mapping.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use hifi_core::detect::{format_detections, parse_detections, BBox, Detection};
use hifi_core::evalkit::{evaluate, EvalReport, SceneEval};
use hifi_core::sigsynth::io::read_iq;
use hifi_core::sigsynth::ModScheme;
use hifi_core::tfr::{write_pgm, Spectrogram};
use hifi_core::{Error, Result};

use crate::config::{Command, RunConfig};
use crate::dataset::{self, load_split, scene_name, GenerateReport, Manifest};
use crate::model;
use crate::pool::Pool;
use crate::train::{self, bind_to_dataset, local_labels, TrainOutcome};

/// 1 for problems the user can fix (configuration, inputs, files), 2 for
/// internal failures.
pub fn exit_code(e: &Error) -> i32 {
    use std::io::ErrorKind;
    match e {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidInput(_) | Error::Format(_) | Error::Generation(_) => 1,
        Error::Io(io) if matches!(io.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::AlreadyExists) => 1,
        _ => 2,
    }
}

pub enum Outcome {
    Generated(GenerateReport),
    Trained(TrainOutcome),
    Evaluated(EvalReport),
    Inferred(Vec<(String, Vec<Detection>)>),
}

/// Runs `cfg.command`, echoing the resolved configuration to `out` first.
pub fn run(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    match cfg.command {
        Command::Generate => {
            out.write_all(cfg.echo().as_bytes())?;
            let report = dataset::generate(cfg)?;
            writeln!(
                out,
                "wrote {} of {} scenes to {}{}",
                report.written,
                report.manifest.entries.len(),
                cfg.data_dir.display(),
                if cfg.plan_only { " (plan only)" } else { "" }
            )?;
            out.write_all(report.table().as_bytes())?;
            Ok(Outcome::Generated(report))
        }
        Command::Train => {
            let manifest = Manifest::read(&cfg.data_dir)?;
            let bound = bind_to_dataset(cfg, &manifest)?;
            let outcome = train::train(&bound, Some(Box::new(std::io::stdout())))?;
            Ok(Outcome::Trained(outcome))
        }
        Command::Eval => eval(cfg, out).map(Outcome::Evaluated),
        Command::Infer => infer(cfg, out).map(Outcome::Inferred),
    }
}

fn class_name(classes: &[ModScheme]) -> impl Fn(usize) -> String + '_ {
    move |c| classes.get(c).map_or(format!("class{c}"), |m| m.name().to_string())
}

fn read_predictions(dir: &Path, name: &str, cfg: &RunConfig) -> Result<Vec<Detection>> {
    let path = dir.join(format!("{name}.det"));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidInput(format!("missing predictions {}: {e}", path.display())))?;
    parse_detections(&text)?
        .into_iter()
        .map(|mut d| {
            d.class_id = cfg
                .local_class(d.class_id)
                .ok_or_else(|| Error::Format(format!("{}: class {} is not a dataset class", path.display(), d.class_id)))?;
            Ok(d)
        })
        .collect()
}

/// Scores the `eval_split` with a checkpoint, or with stored predictions
/// when `predictions_dir` is set.
pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvalReport> {
    let manifest = Manifest::read(&cfg.data_dir)?;
    let mut cfg = bind_to_dataset(cfg, &manifest)?;
    let loaded = match &cfg.predictions_dir {
        Some(_) => None,
        None => {
            let l = model::load(&cfg.checkpoint_path())?;
            if l.detector.classes != cfg.classes {
                return Err(Error::Config("checkpoint classes differ from the dataset classes".into()));
            }
            cfg.model = l.detector.cfg().clone();
            Some(l)
        }
    };
    out.write_all(cfg.echo().as_bytes())?;
    if manifest.split(cfg.eval_split).next().is_none() {
        return Err(Error::InvalidInput(format!("the {} split is empty; nothing to evaluate", cfg.eval_split)));
    }
    let samples = load_split(&cfg.data_dir, &manifest, cfg.eval_split, cfg.workers)?;
    let pool = Pool::new(cfg.workers);
    let report = match (&loaded, &cfg.predictions_dir) {
        (Some(l), _) => {
            let inputs = pool
                .map(&samples, |s| l.detector.input(&s.spectrogram))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            train::score(&l.detector, &cfg, &samples, &inputs, &pool)?
        }
        (None, Some(dir)) => {
            let scenes = samples
                .iter()
                .map(|s| {
                    Ok(SceneEval {
                        id: s.id,
                        snr_db: s.snr_db,
                        dets: read_predictions(dir, &scene_name(s.id), &cfg)?,
                        gts: local_labels(&cfg, s)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate(&scenes, cfg.classes.len())
        }
        (None, None) => unreachable!("either a checkpoint or predictions are loaded"),
    };
    let dir = cfg.output_path();
    fs::create_dir_all(&dir)?;
    let table = report.to_table(&class_name(&cfg.classes));
    fs::write(dir.join("report.txt"), &table)?;
    fs::write(dir.join("report.kv"), report.to_kv().to_text())?;
    fs::write(dir.join("snr.csv"), report.snr_csv())?;
    out.write_all(table.as_bytes())?;
    writeln!(out, "report written to {}", dir.display())?;
    Ok(report)
}

/// Draws a one-pixel outline of each box (value 1) into `img`.
pub fn burn_boxes(img: &mut Array2<f32>, boxes: &[BBox]) {
    let (rows, cols) = img.dim();
    if rows == 0 || cols == 0 {
        return;
    }
    let px = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    for b in boxes {
        let (x1, y1, x2, y2) = b.corners();
        let (c1, c2) = (px(x1, cols), px(x2, cols));
        let (r1, r2) = (px(y1, rows), px(y2, rows));
        for c in c1..=c2 {
            img[[r1, c]] = 1.0;
            img[[r2, c]] = 1.0;
        }
        for r in r1..=r2 {
            img[[r, c1]] = 1.0;
            img[[r, c2]] = 1.0;
        }
    }
}

/// Detects on one I/Q file (`input`) or on every scene of `eval_split`,
/// writing `<name>.det` and `<name>.pgm` per scene.
pub fn infer(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<(String, Vec<Detection>)>> {
    let loaded = model::load(&cfg.checkpoint_path())?;
    let det = &loaded.detector;
    let mut cfg = cfg.clone();
    cfg.model = det.cfg().clone();
    cfg.classes = det.classes.clone();
    out.write_all(cfg.echo().as_bytes())?;

    let sources: Vec<(String, Array2<f32>)> = match &cfg.input {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| Error::InvalidInput(format!("cannot open input {}: {e}", path.display())))?;
            let samples = read_iq(std::io::BufReader::new(file))?;
            let spec = Spectrogram::from_recording(&samples, cfg.scene.f_s, &cfg.stft, cfg.floor_db)?;
            let name = path.file_stem().map_or("input".to_string(), |s| s.to_string_lossy().into_owned());
            vec![(name, spec.values)]
        }
        None => {
            let manifest = Manifest::read(&cfg.data_dir)?;
            let samples = load_split(&cfg.data_dir, &manifest, cfg.eval_split, cfg.workers)?;
            if samples.is_empty() {
                return Err(Error::InvalidInput(format!("the {} split is empty; nothing to infer", cfg.eval_split)));
            }
            samples.into_iter().map(|s| (scene_name(s.id), s.spectrogram)).collect()
        }
    };
    let dir: PathBuf = cfg.output_path();
    fs::create_dir_all(&dir)?;
    let pool = Pool::new(cfg.workers);
    let results = pool.map(&sources, |(name, values)| -> Result<(String, Vec<Detection>)> {
        let dets = det.to_scheme_ids(det.detect(&det.input(values)?, cfg.conf, cfg.iou)?);
        fs::write(dir.join(format!("{name}.det")), format_detections(&dets))?;
        let mut img = values.clone();
        burn_boxes(&mut img, &dets.iter().map(|d| d.bbox).collect::<Vec<_>>());
        write_pgm(std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}.pgm")))?), &img)?;
        Ok((name.clone(), dets))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let total: usize = results.iter().map(|(_, d)| d.len()).sum();
    writeln!(out, "{} detections over {} inputs written to {}", total, results.len(), dir.display())?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outlines_are_burned_at_box_edges() {
        let mut img = Array2::<f32>::zeros((10, 10));
        burn_boxes(&mut img, &[BBox::from_corners(0.2, 0.3, 0.6, 0.8)]);
        assert_eq!(img[[3, 2]], 1.0);
        assert_eq!(img[[8, 6]], 1.0);
        assert_eq!(img[[5, 4]], 0.0);
        let lit = img.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(lit, 2 * 5 + 2 * 6 - 4);
    }

    #[test]
    fn user_errors_map_to_one() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 1);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 2);
        assert_eq!(exit_code(&Error::Shape("x".into())), 2);
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Error::Io(missing)), 1);
    }
}
