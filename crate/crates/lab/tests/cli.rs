use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use clap::Parser;
use crst_lab::cli::{self, run, Cli, Command};
use crst_lab::csvio;
use crst_lab::error::exit;
use crst_lab::manifest::RunManifest;

const TINY: &str = r#"
[data]
seed = 5
strong = 6
weak = 4
unlabeled = 6
validation = 4

[data.synthetic]
clip_len = 2.0
durations = [[0.2, 0.6], [0.4, 1.0], [0.5, 1.5]]

[data.real]
clip_len = 2.0
durations = [[0.2, 0.6], [0.4, 1.0], [0.5, 1.5]]

[train]
variant = "crst"
epochs = 2
steps_per_epoch = 3
channels = [4, 6]
hidden = 6
batch = { strong = 2, weak = 2, unlabeled = 2 }
"#;

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("crst").chain(args.iter().copied())).unwrap().command
}

fn run_args(args: &[&str]) -> crst_lab::Result<RunManifest> {
    run(&parse(args))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Lab {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn lab_with(config_text: &str) -> Lab {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, config_text).unwrap();
    let data = root.join("data");
    run_args(&["gen-data", "--config", s(&config), "--out", s(&data)]).unwrap();
    Lab { _dir: dir, root, config, data }
}

fn lab() -> Lab {
    lab_with(TINY)
}

fn binary(args: &[&str]) -> i32 {
    Proc::new(env!("CARGO_BIN_EXE_crst")).args(args).env_remove(cli::DATA_ROOT_ENV).output().unwrap().status.code().unwrap()
}

#[test]
fn variant_flag_accepts_exactly_the_seven_names() {
    for v in ["supervised-strong", "supervised-sw", "mt", "ict", "srst", "srst-aug", "crst"] {
        let c = Cli::try_parse_from(["crst", "train", "--data", "d", "--out", "o", "--variant", v]);
        assert!(c.is_ok(), "{v}");
    }
    for v in ["CRST", "supervised", "teacher", ""] {
        assert!(Cli::try_parse_from(["crst", "train", "--data", "d", "--out", "o", "--variant", v]).is_err(), "{v}");
    }
}

#[test]
fn args_round_trip_through_the_parser() {
    let c = parse(&["postproc", "--data", "/d", "--checkpoint", "/c", "--mode", "sweep", "--alpha", "0.05", "--out", "/o"]);
    let back = parse(&c.to_args().iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(back.to_args(), c.to_args());
}

#[test]
fn zero_clip_config_gives_empty_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("z.toml");
    fs::write(&cfg, "[data]\nstrong = 0\nweak = 0\nunlabeled = 0\nvalidation = 0\n").unwrap();
    let out = dir.path().join("data");
    let m = run_args(&["gen-data", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    assert_eq!(fs::read_to_string(out.join("manifest.jsonl")).unwrap(), "");
    assert!(crst_lab::dataset::read_manifest(&out).unwrap().is_empty());
    let ds = crst_lab::dataset::read_dataset(&out).unwrap();
    assert!(ds.strong.is_empty() && ds.validation.is_empty());
    assert!(m.dataset_hash.is_some());
}

#[test]
fn same_seed_gives_same_dataset_hash() {
    let a = lab();
    let other = a.root.join("again");
    let m = run_args(&["gen-data", "--config", s(&a.config), "--out", s(&other)]).unwrap();
    assert_eq!(Some(crst_lab::dataset::dataset_hash(&a.data).unwrap()), m.dataset_hash);
    let third = a.root.join("reseeded");
    let m2 = run_args(&["gen-data", "--config", s(&a.config), "--seed", "6", "--out", s(&third)]).unwrap();
    assert_ne!(m.dataset_hash, m2.dataset_hash);
}

#[test]
fn train_writes_one_history_line_per_step() {
    let l = lab();
    let out = l.root.join("run");
    run_args(&["train", "--config", s(&l.config), "--data", s(&l.data), "--variant", "srst", "--out", s(&out)]).unwrap();
    let history = fs::read_to_string(out.join(cli::HISTORY)).unwrap();
    assert_eq!(history.lines().count(), 2 * 3);
    let ck = crst_lab::checkpoint::load(&out.join(cli::BEST_CHECKPOINT), None).unwrap();
    assert_eq!(ck.header.variant.to_string(), "srst");
    let plot = csvio::read_plot(&out.join(cli::PLOT)).unwrap();
    assert_eq!(plot.iter().filter(|r| r.series == "validation_macro_f").count(), 2);
    assert_eq!(plot.iter().filter(|r| r.series == "omega").count(), 6);
}

#[test]
fn crst_without_unlabeled_split_is_a_config_error() {
    let no_unlabeled = TINY.replace("unlabeled = 6", "unlabeled = 0").replace("weak = 4", "weak = 0");
    let l = lab_with(&no_unlabeled);
    let out = l.root.join("run");
    let err = run_args(&["train", "--config", s(&l.config), "--data", s(&l.data), "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), exit::CONFIG, "{err}");
    let code = binary(&["train", "--config", s(&l.config), "--data", s(&l.data), "--out", s(&out)]);
    assert_eq!(code, exit::CONFIG);
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let l = lab();
    let missing = l.root.join("nope");
    assert_eq!(binary(&["train", "--data", s(&missing), "--out", s(&l.root.join("o"))]), exit::DATA);
    let bad = l.root.join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 0.5\n").unwrap();
    assert_eq!(binary(&["train", "--config", s(&bad), "--data", s(&l.data), "--out", s(&l.root.join("o"))]), exit::CONFIG);
    let ok = binary(&["gen-data", "--config", s(&l.config), "--out", s(&l.root.join("d2"))]);
    assert_eq!(ok, exit::OK);
}

#[test]
fn data_root_comes_from_the_environment() {
    let c = Cli::try_parse_from(["crst", "train", "--out", "o"]);
    if std::env::var_os(cli::DATA_ROOT_ENV).is_none() {
        assert!(c.is_err());
    }
    let l = lab();
    let out = Proc::new(env!("CARGO_BIN_EXE_crst"))
        .args(["train", "--config", s(&l.config), "--variant", "supervised-strong", "--out", s(&l.root.join("envrun"))])
        .env(cli::DATA_ROOT_ENV, &l.data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn postproc_eval_and_rerun() {
    let l = lab();
    let run_dir = l.root.join("run");
    run_args(&["train", "--config", s(&l.config), "--data", s(&l.data), "--out", s(&run_dir)]).unwrap();
    let ck = run_dir.join(cli::BEST_CHECKPOINT);

    let g = l.root.join("global");
    run_args(&["postproc", "--data", s(&l.data), "--checkpoint", s(&ck), "--mode", "global", "--out", s(&g)]).unwrap();
    let report: cli::PostprocReport = serde_json::from_slice(&fs::read(g.join(cli::PARAMS)).unwrap()).unwrap();
    assert!(report.params.classes.iter().all(|c| c.threshold == 0.5));
    let len = crst_core::postproc::global_filter_len(report.fps);
    assert!(report.params.classes.iter().all(|c| c.filter_len == len));
    assert_eq!(report.fps, 10.0);

    let sw = l.root.join("sweep");
    run_args(&["postproc", "--data", s(&l.data), "--checkpoint", s(&ck), "--mode", "sweep", "--out", s(&sw)]).unwrap();
    let points = csvio::read_sweep(&sw.join(cli::SWEEP)).unwrap();
    assert_eq!(points.len(), 200);

    let ev = l.root.join("eval");
    run_args(&["eval", "--data", s(&l.data), "--detections", s(&g.join(cli::INTERVALS)), "--out", s(&ev)]).unwrap();
    let scores = csvio::read_scores(&ev.join(cli::SCORES)).unwrap();
    assert_eq!(scores.classes.len(), 3);
    let confusion = csvio::read_confusion(&ev.join(cli::CONFUSION)).unwrap();
    let reference = csvio::read_intervals(&l.data.join("reference_validation.csv")).unwrap();
    for (c, row) in confusion.iter().enumerate() {
        let refs = reference.values().flatten().filter(|e| e.class == c).count() as u64;
        assert_eq!(row.iter().sum::<u64>(), refs);
    }

    for m in [run_dir.join("run_manifest.json"), sw.join("run_manifest.json"), ev.join("run_manifest.json")] {
        let fresh = l.root.join(format!("rerun_{}", m.parent().unwrap().file_name().unwrap().to_str().unwrap()));
        let report = cli::rerun(&m, &fresh).unwrap();
        assert!(report.differing.is_empty(), "{m:?}: {:?}", report.differing);
        assert!(!report.fresh.outputs.is_empty());
    }
}

#[test]
fn eval_of_reference_against_itself_and_of_nothing() {
    let l = lab();
    let reference = l.data.join("reference_validation.csv");
    let same = l.root.join("same");
    run_args(&["eval", "--data", s(&l.data), "--detections", s(&reference), "--out", s(&same)]).unwrap();
    assert_eq!(csvio::read_scores(&same.join(cli::SCORES)).unwrap().macro_f, 1.0);

    let empty_csv = l.root.join("empty.csv");
    fs::write(&empty_csv, "clip_id,class,onset,offset\n").unwrap();
    let none = l.root.join("none");
    run_args(&["eval", "--data", s(&l.data), "--detections", s(&empty_csv), "--out", s(&none)]).unwrap();
    assert_eq!(csvio::read_scores(&none.join(cli::SCORES)).unwrap().macro_f, 0.0);
    let rows = csvio::read_concurrency(&none.join(cli::CONCURRENCY)).unwrap();
    assert_eq!(rows.last().unwrap().class, "total");
    for r in &rows {
        let sum = r.pct_k1 + r.pct_k2 + r.pct_k3plus;
        assert!(sum == 0.0 || (sum - 100.0).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn detections_on_eventless_clips_count_as_false_positives() {
    let l = lab_with(&TINY.replace("[data.real]", "[data.real]\nevent_rate = 0.0"));
    let ids = crst_lab::dataset::split_ids(&crst_lab::dataset::read_manifest(&l.data).unwrap()).remove("validation").unwrap();
    let det = l.root.join("det.csv");
    fs::write(&det, format!("clip_id,class,onset,offset\n{},1,0.5,1.0\n", ids[0])).unwrap();
    let out = l.root.join("eval");
    run_args(&["eval", "--data", s(&l.data), "--detections", s(&det), "--out", s(&out)]).unwrap();
    let scores = csvio::read_scores(&out.join(cli::SCORES)).unwrap();
    assert_eq!(scores.classes[1].counts.fp, 1);
    assert_eq!(scores.macro_f, 0.0);

    fs::write(&det, "clip_id,class,onset,offset\nnot_a_clip,1,0.5,1.0\n").unwrap();
    let err = run_args(&["eval", "--data", s(&l.data), "--detections", s(&det), "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), exit::DATA);
}

#[test]
fn schema_mismatch_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "clip_id,class,onset,offset\na,0,0.1,0.5\nb,zero,0.1,0.5\n").unwrap();
    let err = csvio::read_intervals(&bad).unwrap_err();
    match err {
        crst_lab::LabError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("{other}"),
    }
    let out = dir.path().join("o");
    let code = binary(&["eval", "--reference", s(&bad), "--detections", s(&bad), "--out", s(&out)]);
    assert_eq!(code, exit::DATA);
}

#[test]
fn compare_builds_mean_std_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare".to_string()];
    for (variant, fs_) in [("supervised-sw", [0.20, 0.22, 0.25, 0.21, 0.23]), ("crst", [0.40, 0.45, 0.43, 0.41, 0.44])] {
        for (i, f) in fs_.iter().enumerate() {
            let p = dir.path().join(format!("{variant}_{i}.csv"));
            let report = crst_core::evalkit::ScoreReport { classes: vec![], macro_f: *f };
            csvio::write_scores(&p, &report).unwrap();
            args.extend(["--run".to_string(), format!("{variant}={}", p.display())]);
        }
    }
    let out = dir.path().join("cmp");
    args.extend(["--baseline".into(), "supervised-sw".into(), "--out".into(), out.display().to_string()]);
    run(&parse(&args.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
    let rows = csvio::read_comparison(&out.join(cli::COMPARISON)).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].summary, "22.20 ± 1.92");
    assert_eq!(rows[1].runs, 5);
    assert!(rows[1].p_value.unwrap() < 1e-4);
}
