use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use encodermi_cli::studies::StudyRow;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let run = Self { _dir: dir, root };
        let out = run.cmd(&["init", "--preset", "tiny", "--name", "t", "--set", "output_dir=runs"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        run
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_encodermi"))
            .current_dir(&self.root)
            .args(args)
            .env_remove("ENCODERMI_FAULT_AFTER_JOBS")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cmd(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join("runs/t").join(rel)
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn evaluate_before_training_names_the_missing_classifier() {
    let run = Run::new();
    run.ok(&["prepare-data"]);
    run.ok(&["pretrain"]);
    let out = run.cmd(&["evaluate"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("missing asset"), "{err}");
    assert!(err.contains("encodermi-v classifier"), "{err}");
    assert!(err.contains("train-attack"), "{err}");
}

#[test]
fn pretrain_before_splits_is_reported() {
    let run = Run::new();
    let out = run.cmd(&["pretrain"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("prepare-data"));
}

#[test]
fn completed_stages_are_not_rerun() {
    let run = Run::new();
    let first = run.ok(&["prepare-data"]);
    assert!(first.contains("prepare-data: complete"));
    let splits = std::fs::read(run.path("splits.json")).unwrap();
    let second = run.ok(&["prepare-data"]);
    assert!(second.contains("prepare-data: already complete"), "{second}");
    assert_eq!(std::fs::read(run.path("splits.json")).unwrap(), splits);
}

#[test]
fn n_study_has_one_row_per_value_method_and_trial() {
    let run = Run::new();
    for stage in ["prepare-data", "pretrain"] {
        run.ok(&[stage]);
    }
    run.ok(&["study", "--axis", "n", "--values", "2,3,5", "--methods", "vector,threshold"]);
    let rows: Vec<StudyRow> =
        serde_json::from_slice(&std::fs::read(run.path("reports/studies/n.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for n in ["2", "3", "5"] {
        let for_n: Vec<&StudyRow> = rows.iter().filter(|r| r.value == n).collect();
        assert_eq!(for_n.len(), 4);
        assert!(for_n.iter().all(|r| r.accuracy.is_some_and(|a| (0.0..=1.0).contains(&a))));
    }
    let csv = std::fs::read_to_string(run.path("reports/studies/n.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + rows.len());
}

#[test]
fn unknown_study_axis_is_rejected() {
    let run = Run::new();
    let out = run.cmd(&["study", "--axis", "depth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("depth"));
}

#[test]
fn stray_files_fail_the_orphan_check() {
    let run = Run::new();
    run.ok(&["prepare-data"]);
    std::fs::write(run.path("reports/notes.txt"), "x").unwrap();
    let out = run.cmd(&["prepare-data"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("orphan artifacts"), "{}", stderr(&out));
    assert!(stderr(&out).contains("notes.txt"));
}

#[test]
fn changed_manifest_is_refused_for_an_existing_run() {
    let run = Run::new();
    run.ok(&["prepare-data"]);
    let out = run.cmd(&["--set", "trials=3", "prepare-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("different manifest"));
}

#[test]
fn bad_override_names_the_field() {
    let run = Run::new();
    let out = run.cmd(&["--set", "extraction.n=1", "prepare-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("extraction.n"), "{}", stderr(&out));
}

#[test]
fn init_refuses_to_overwrite() {
    let run = Run::new();
    let out = run.cmd(&["init", "--preset", "desk"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--force"));
}

fn audit_images(dir: &Path, run: &Run) {
    // Two target members and two non-members, as PNG files.
    use encodermi::data::loaders::write_png;
    use encodermi::data::{synthetic_dataset, Dataset, SplitManifest, SplitRole, SyntheticFamily};
    let splits = SplitManifest::load(&run.path("splits.json")).unwrap();
    let ds = synthetic_dataset(SyntheticFamily::Shapes, 120, 8, 1).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    for (role, tag) in [(SplitRole::EvalMember, "m"), (SplitRole::EvalNonmember, "n")] {
        for &id in &splits.get("shapes", role).unwrap().indices[..2] {
            write_png(&ds.image(id).unwrap(), &dir.join(format!("{tag}{id}.png"))).unwrap();
        }
    }
}

#[test]
fn audit_against_a_served_target() {
    use std::sync::Arc;

    use encodermi::encoder::{load_local, EncoderServer};

    let run = Run::new();
    for stage in ["prepare-data", "pretrain", "train-attack"] {
        run.ok(&[stage]);
    }
    let enc = load_local(&run.path("checkpoints/target/epoch-0004.ckpt")).unwrap();
    let server = EncoderServer::serve("127.0.0.1:0", Some("secret".into()), Arc::new(enc)).unwrap();
    let images = run.root.join("audit");
    audit_images(&images, &run);
    let clf = run.path("classifiers/yes-yes-yes/t0/threshold.json");
    let url = server.url();
    let args = ["audit-remote", "--endpoint", &url, "--classifier", clf.to_str().unwrap(), "--images", images.to_str().unwrap()];
    let denied = run.cmd(&args);
    assert!(!denied.status.success());
    let mut with_token = args.to_vec();
    with_token.extend(["--token", "secret"]);
    let stdout = run.ok(&with_token);
    assert!(stdout.contains("of 4 images classified as members"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.path("reports/audit.json")).unwrap()).unwrap();
    assert_eq!(report["decisions"].as_array().unwrap().len(), 4);
    assert_eq!(report["method"], "encodermi-t");
}
