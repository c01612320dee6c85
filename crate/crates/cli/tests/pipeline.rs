use std::fs;
use std::path::Path;

use hifi_cli::config::{Command, RunConfig};
use hifi_cli::dataset::{scene_name, Manifest};
use hifi_cli::{exit_code, run, Outcome};
use hifi_core::detect::{format_detections, Detection};
use hifi_core::sigsynth::io::parse_labels;
use hifi_core::Error;

fn config(command: Command, root: &Path, extra: &[&str]) -> RunConfig {
    let mut sets = vec![
        format!("data_dir={}", root.join("data").display()),
        format!("run_dir={}", root.join("run").display()),
        "workers=2".to_string(),
    ];
    sets.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::resolve(command, None, &sets).unwrap()
}

fn go(cfg: &RunConfig) -> hifi_core::Result<Outcome> {
    run(cfg, &mut Vec::new())
}

fn small_dataset(root: &Path, extra: &[&str]) {
    let mut sets = vec!["num_scenes=20", "classes=BPSK,4FSK,AM-DSB", "snr_grid=10", "seed=5"];
    sets.extend_from_slice(extra);
    go(&config(Command::Generate, root, &sets)).unwrap();
}

fn trained(root: &Path, extra: &[&str]) -> hifi_cli::train::TrainOutcome {
    match go(&config(Command::Train, root, extra)).unwrap() {
        Outcome::Trained(t) => t,
        _ => unreachable!(),
    }
}

#[test]
fn desk_preset_counts_nine_strata() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Command::Generate, tmp.path(), &["plan_only=true"]);
    let Outcome::Generated(report) = go(&cfg).unwrap() else { unreachable!() };
    assert_eq!(report.manifest.entries.len(), 600);
    assert_eq!(report.written, 0);
    assert_eq!(report.per_snr.len(), 9);
    for (snr, counts) in &report.per_snr {
        let n: usize = counts.iter().sum();
        assert!(n == 66 || n == 67, "stratum {snr}: {n}");
        assert!(counts[1] > 0 && counts[2] > 0);
    }
    let manifest = Manifest::read(&tmp.path().join("data")).unwrap();
    assert!(!manifest.materialized());
}

#[test]
fn paper_preset_declares_36000_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Command::Generate, tmp.path(), &["preset=paper", "plan_only=true"]);
    assert_eq!(cfg.model.input_size, 640);
    go(&cfg).unwrap();
    let manifest = Manifest::read(&tmp.path().join("data")).unwrap();
    assert_eq!(manifest.header.require::<usize>("scenes").unwrap(), 36_000);
    assert_eq!(manifest.entries.len(), 36_000);
    assert_eq!(manifest.header.get("n_t"), Some("640"));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generation_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_dataset(a.path(), &[]);
    small_dataset(b.path(), &["workers=1"]);
    let read = |p: &Path| fs::read_to_string(p.join("data/manifest.txt")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let (fa, fb) = (dir_bytes(&a.path().join("data/scenes")), dir_bytes(&b.path().join("data/scenes")));
    assert_eq!(fa.len(), 80);
    assert!(fa == fb, "scene files differ between runs");

    let c = tempfile::tempdir().unwrap();
    small_dataset(c.path(), &["seed=6"]);
    assert_ne!(dir_bytes(&c.path().join("data/scenes")), fa);
}

#[test]
fn refuses_non_empty_output_without_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &["num_scenes=3"]);
    let again = config(Command::Generate, tmp.path(), &["num_scenes=3"]);
    let err = go(&again).err().unwrap();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    assert_eq!(exit_code(&err), 1);
    let forced = config(Command::Generate, tmp.path(), &["num_scenes=4", "overwrite=true"]);
    go(&forced).unwrap();
    assert_eq!(Manifest::read(&tmp.path().join("data")).unwrap().entries.len(), 4);
}

#[test]
fn overfit_one_scene() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    let out = trained(tmp.path(), &["overfit=true", "overfit_steps=300"]);
    let losses: Vec<f64> = out.steps.iter().map(|s| s.total).collect();
    assert_eq!(losses.len(), 300);
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last < 0.1 * first, "final loss {last} vs initial {first}");

    // Ten-step block means fall over the first 200 steps.
    let blocks: Vec<f64> = losses[..200].chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
    for (i, w) in blocks.windows(2).enumerate() {
        assert!(w[1] < w[0], "block {} mean {} not below {}", i + 1, w[1], w[0]);
    }
}

#[test]
fn lfe_toggle_changes_checkpoint_and_log_header() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    let mut ckpts = Vec::new();
    for mode in ["off", "gaussian"] {
        let run_dir = tmp.path().join(format!("run-{mode}"));
        let run_set = format!("run_dir={}", run_dir.display());
        let lfe = format!("lfe_mode={mode}");
        trained(tmp.path(), &[&run_set, &lfe, "max_steps=2", "batch_size=4"]);
        let log = fs::read_to_string(run_dir.join("train.log")).unwrap();
        assert!(log.starts_with("# resolved configuration"));
        assert!(log.lines().any(|l| l == lfe), "log header lacks {lfe}");
        ckpts.push(fs::read(run_dir.join("last.ckpt")).unwrap());
    }
    assert_ne!(ckpts[0], ckpts[1]);
}

#[test]
fn resume_reproduces_the_uninterrupted_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    // 12 train scenes in batches of 5: 3 steps per epoch, so step 4 is mid-epoch.
    let common = ["batch_size=5", "epochs=3", "lr_schedule=cosine", "warmup_steps=2"];
    let full_dir = format!("run_dir={}", tmp.path().join("full").display());
    let part_dir = format!("run_dir={}", tmp.path().join("part").display());

    let mut full = common.to_vec();
    full.extend([full_dir.as_str(), "max_steps=7"]);
    let whole = trained(tmp.path(), &full);

    let mut first = common.to_vec();
    first.extend([part_dir.as_str(), "max_steps=4"]);
    let head = trained(tmp.path(), &first);
    let mut second = common.to_vec();
    second.extend([part_dir.as_str(), "max_steps=7", "resume=true"]);
    let tail = trained(tmp.path(), &second);

    assert_eq!(head.steps.len(), 4);
    assert_eq!(tail.steps.first().unwrap().step, 4);
    let joined: Vec<_> = head.steps.iter().chain(&tail.steps).collect();
    assert_eq!(joined.len(), whole.steps.len());
    for (a, b) in joined.iter().zip(&whole.steps) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.total.to_bits(), b.total.to_bits(), "step {}", a.step);
    }
    let a = fs::read(tmp.path().join("full/last.ckpt")).unwrap();
    let b = fs::read(tmp.path().join("part/last.ckpt")).unwrap();
    assert!(a == b, "final parameters differ after resume");
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    let err = go(&config(Command::Train, tmp.path(), &["lr=1e30", "lr_schedule=constant", "batch_size=4", "max_steps=6"]))
        .err()
        .unwrap();
    match &err {
        Error::NonFinite(what) => assert!(what.contains("at step 1"), "{what}"),
        other => panic!("expected a non-finite error, got {other}"),
    }
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn eval_of_ground_truth_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    let data = tmp.path().join("data");
    let preds = tmp.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    let manifest = Manifest::read(&data).unwrap();
    for e in &manifest.entries {
        let name = scene_name(e.id);
        let labels = parse_labels(&fs::read_to_string(data.join(format!("scenes/{name}.txt"))).unwrap()).unwrap();
        let dets: Vec<Detection> = labels.into_iter().map(|(c, b)| Detection { bbox: b, class_id: c, score: 1.0 }).collect();
        fs::write(preds.join(format!("{name}.det")), format_detections(&dets)).unwrap();
    }
    let set = format!("predictions_dir={}", preds.display());
    let Outcome::Evaluated(r) = go(&config(Command::Eval, tmp.path(), &[&set])).unwrap() else { unreachable!() };
    assert!((r.map_50_95 - 100.0).abs() < 1e-9, "mAP50:95 = {}", r.map_50_95);
    assert!((r.f1 - 1.0).abs() < 1e-12);
    assert!(tmp.path().join("run/eval/report.kv").is_file());
    assert!(tmp.path().join("run/eval/snr.csv").is_file());
}

#[test]
fn eval_rejects_an_empty_split_and_a_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &["split=0.5,0.5,0"]);
    let preds = format!("predictions_dir={}", tmp.path().display());
    let err = go(&config(Command::Eval, tmp.path(), &[&preds])).err().unwrap();
    assert!(matches!(&err, Error::InvalidInput(m) if m.contains("empty")), "{err}");

    let err = go(&config(Command::Eval, tmp.path(), &["eval_split=val"])).err().unwrap();
    assert!(matches!(&err, Error::InvalidInput(m) if m.contains("checkpoint not found")), "{err}");
    assert_eq!(exit_code(&err), 1);
    let err = go(&config(Command::Infer, tmp.path(), &[])).err().unwrap();
    assert!(matches!(&err, Error::InvalidInput(m) if m.contains("checkpoint not found")), "{err}");
}

#[test]
fn infer_writes_detections_and_annotated_images() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), &[]);
    trained(tmp.path(), &["max_steps=2", "batch_size=4"]);
    let Outcome::Inferred(res) = go(&config(Command::Infer, tmp.path(), &["conf=0.01"])).unwrap() else {
        unreachable!()
    };
    let out = tmp.path().join("run/infer");
    assert_eq!(res.len(), 4);
    for (name, _) in &res {
        let pgm = fs::read(out.join(format!("{name}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n160 160\n255\n"));
        assert!(out.join(format!("{name}.det")).is_file());
    }

    let iq = tmp.path().join("data/scenes/000000.iq");
    let set = format!("input={}", iq.display());
    let Outcome::Inferred(one) = go(&config(Command::Infer, tmp.path(), &[&set])).unwrap() else { unreachable!() };
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].0, "000000");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hifi");
    let code = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["generate", "--set", "no_such_key=1"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let missing = format!("checkpoint={}", tmp.path().join("nope.ckpt").display());
    let data = format!("data_dir={}", tmp.path().join("data").display());
    assert_eq!(code(&["generate", "--set", &data, "--set", "num_scenes=2"]), Some(0));
    let out = std::process::Command::new(bin).args(["eval", "--set", &data, "--set", &missing]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint not found"));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("# resolved configuration") || out.stdout.is_empty());
}
