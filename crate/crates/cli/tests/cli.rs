use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const TINY: &str = r#"
[data]
test_count_per_combination = 1

[data.synthetic]
image_size = 32
brightness_attribute = false
brightness_classes = 1
count_per_combination = 1

[model]
image_size = 32
base_width = 4
res_blocks = 1

[schedule]
batch_size = 4
steps = 2
critic_steps_per_gen = 1
pretrain_steps = 10
checkpoint_every = 1
log_every = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_disentangle"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

/// A trained tiny checkpoint plus evaluation classifiers, built once.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn checkpoint(&self) -> PathBuf {
        self.root.join("run/checkpoint")
    }

    fn evaluator(&self) -> PathBuf {
        self.root.join("pre/eval_classifiers")
    }

    fn image(&self, i: usize) -> PathBuf {
        self.root.join(format!("data/test/img_{i:05}.png"))
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("tiny.toml"), TINY).unwrap();
        ok(run(&root, &["synth-data", "-c", "tiny.toml", "-o", "data"]));
        ok(run(&root, &["train", "-c", "tiny.toml", "-o", "run"]));
        ok(run(&root, &["pretrain", "-c", "tiny.toml", "-o", "pre", "--eval-steps", "20"]));
        Fixture { _dir: dir, root }
    })
}

#[test]
fn empty_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let out = stdout(&ok(run(dir.path(), &["validate-config", "-c", "empty.toml"])));
    assert!(out.contains("lambda_rec = 10.0"), "{out}");
    assert!(out.contains("lambda_gp = 10.0"));
    assert!(out.contains("batch_size = 16"));
    let no_file = stdout(&ok(run(dir.path(), &["validate-config"])));
    assert_eq!(out, no_file);
}

#[test]
fn reference_file_matches_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let reference = reference_config();
    let from_file = stdout(&ok(run(dir.path(), &["validate-config", "-c", reference.to_str().unwrap()])));
    let defaults = stdout(&ok(run(dir.path(), &["validate-config"])));
    assert_eq!(from_file, defaults);
}

#[test]
fn invalid_values_are_all_reported_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[loss_weights]\nlambda_rec = -1.0\n\n[schedule]\nbatch_size = 1\n",
    )
    .unwrap();
    let o = run(dir.path(), &["validate-config", "-c", "bad.toml"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("lambda_rec"), "{err}");
    assert!(err.contains("batch_size") && err.contains("shuffl"), "{err}");
}

#[test]
fn overrides_win_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[schedule]\nsteps = 5\nseed = 4\n").unwrap();
    let out = stdout(&ok(run(
        dir.path(),
        &["validate-config", "-c", "c.toml", "--set", "schedule.steps=7", "--set", "loss_weights.lambda_dis=0"],
    )));
    assert!(out.contains("steps = 7"), "{out}");
    assert!(out.contains("seed = 4"));
    assert!(out.contains("lambda_dis = 0.0"));
    let out = stdout(&ok(run(dir.path(), &["validate-config", "--set", "schedule.classifier_mode=joint"])));
    assert!(out.contains("classifier_mode = \"joint\""));
}

#[test]
fn bad_invocations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["validate-config", "--bogus"],
        vec!["validate-config", "--set", "schedule.stepz=3"],
        vec!["validate-config", "--set", "novalue"],
        vec!["validate-config", "--set", "schedule.steps=-3"],
        vec!["validate-config", "-c", "missing.toml"],
        vec!["frobnicate"],
        vec!["eval", "--metric", "hopkins"],
        vec!["serve", "--checkpoint", "nowhere"],
    ] {
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let o = run(dir.path(), &["validate-config", "--set", "schedule.stepz=3"]);
    assert!(stderr(&o).contains("stepz"));
}

#[test]
fn relative_manifest_paths_follow_the_config_file() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg_dir = dir.path().join("configs");
    std::fs::create_dir_all(&cfg_dir).unwrap();
    let data = f.root.join("data");
    let rel = |p: &str| {
        // Copy of the fixture split beside configs/; returns the path from there.
        let target = dir.path().join(p);
        std::fs::create_dir_all(&target).unwrap();
        for e in std::fs::read_dir(data.join(p)).unwrap() {
            let e = e.unwrap();
            std::fs::copy(e.path(), target.join(e.file_name())).unwrap();
        }
        format!("../{p}/manifest.csv")
    };
    let text = TINY.replacen(
        "[data]\n",
        &format!("[data]\nmanifest = \"{}\"\ntest_manifest = \"{}\"\n", rel("train"), rel("test")),
        1,
    );
    std::fs::write(cfg_dir.join("run.toml"), text).unwrap();
    let elsewhere = dir.path().join("elsewhere");
    std::fs::create_dir_all(&elsewhere).unwrap();
    ok(run(&elsewhere, &["train", "-c", "../configs/run.toml", "--steps", "0", "-o", "out"]));
    let out = elsewhere.join("out");
    assert!(out.join("checkpoint/manifest.json").exists());
    let snapshot = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    let manifest_line = snapshot.lines().find(|l| l.starts_with("manifest =")).unwrap();
    let path = manifest_line.split('"').nth(1).unwrap();
    assert!(Path::new(path).is_absolute() && Path::new(path).exists(), "{manifest_line}");
    assert_eq!(summary(&out)["result"]["step"], 0);
    assert!(summary(&out)["result"]["pretrain"].is_null());
}

#[test]
fn snapshot_replays_the_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let snapshot = f.root.join("run/resolved_config.toml");
    ok(run(dir.path(), &["train", "-c", snapshot.to_str().unwrap(), "-o", "again"]));
    let a = std::fs::read_to_string(f.checkpoint().join("manifest.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("again/checkpoint/manifest.json")).unwrap();
    let sha = |s: &str| serde_json::from_str::<Value>(s).unwrap()["params_sha256"].clone();
    assert_eq!(sha(&a), sha(&b));
}

#[test]
fn resume_continues_to_the_new_step_count() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), &["train", "-c", f.root.join("tiny.toml").to_str().unwrap(), "-o", "r"]));
    let out = dir.path().join("r");
    assert_eq!(summary(&out)["result"]["step"], 2);
    ok(run(dir.path(), &["train", "--resume", "--steps", "3", "-o", "r"]));
    assert_eq!(summary(&out)["result"]["step"], 3);
    assert_eq!(summary(&out)["result"]["resumed"], true);
    let log = std::fs::read_to_string(out.join("loss_log.tsv")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("3\t")));
}

#[test]
fn pretrain_writes_both_classifier_sets() {
    let f = fixture();
    let s = summary(&f.root.join("pre"));
    assert_eq!(s["result"]["training_classifiers"]["accuracy"].as_array().unwrap().len(), 2);
    assert_eq!(s["result"]["evaluation_classifiers"]["test_accuracy"].as_array().unwrap().len(), 2);
    assert!(f.evaluator().join("eval_classifiers.bin").exists());
    assert!(f.root.join("pre/checkpoint/training_state.json").exists());
    assert!(f.root.join("pre/resolved_config.toml").exists());
}

#[test]
fn embeddings_feed_the_hopkins_table() {
    let f = fixture();
    let ckpt = f.checkpoint();
    ok(run(&f.root, &["export-embeddings", "--checkpoint", ckpt.to_str().unwrap(), "--code", "shape", "-o", "emb"]));
    let emb = f.root.join("emb/embeddings_z1.tsv");
    assert!(emb.exists() && f.root.join("emb/pca_z1.tsv").exists());
    let o = ok(run(
        &f.root,
        &["eval", "--metric", "hopkins", "--embeddings", emb.to_str().unwrap(), "-o", "hop"],
    ));
    let table = stdout(&o);
    assert!(table.contains("Mean Hopkins statistic per shape cluster"), "{table}");
    assert!(table.contains("per-cluster mean"));
    assert_eq!(table.lines().filter(|l| l.split_whitespace().count() == 4).count(), 4, "{table}");
    assert!(summary(&f.root.join("hop"))["result"]["report"]["rows"].is_array());

    ok(run(
        &f.root,
        &["export-embeddings", "--checkpoint", ckpt.to_str().unwrap(), "--code", "0", "--posterior-of", "hue", "-o", "post"],
    ));
    let post = f.root.join("post/posterior_hue_z0.tsv");
    let header = std::fs::read_to_string(&post).unwrap();
    assert_eq!(header.lines().next().unwrap().split('\t').count(), 2 + 6);
}

#[test]
fn entropy_transfer_and_fid_reports() {
    let f = fixture();
    let ckpt = f.checkpoint();
    let ckpt = ckpt.to_str().unwrap();
    let o = ok(run(
        &f.root,
        &["eval", "--metric", "entropy", "--checkpoint", ckpt, "--code", "shape", "--target", "hue", "-o", "ent"],
    ));
    assert!(stdout(&o).contains("ln 6 = 1.7918"), "{}", stdout(&o));
    let evaluator = f.evaluator();
    let evaluator = evaluator.to_str().unwrap();
    let o = ok(run(
        &f.root,
        &["eval", "--metric", "transfer", "--checkpoint", ckpt, "--evaluator", evaluator, "--attribute", "hue", "-o", "tr"],
    ));
    assert!(stdout(&o).contains("target hue"));
    let s = summary(&f.root.join("tr"));
    assert_eq!(s["result"]["report"]["syntheses"], 18 * 6);
    assert!(f.root.join("tr/resolved_config.toml").exists());
    let o = ok(run(
        &f.root,
        &[
            "eval", "--metric", "fid", "--checkpoint", ckpt, "--evaluator", evaluator, "--attribute", "shape", "--protocol",
            "mean-code", "-o", "fid",
        ],
    ));
    assert!(stdout(&o).starts_with("FID of shape transfers:"));
    let o = run(&f.root, &["eval", "--metric", "transfer", "--checkpoint", ckpt, "--evaluator", evaluator, "--attribute", "size"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'size'"));
}

fn write_job(dir: &Path, f: &Fixture, body: &str) -> PathBuf {
    let text = body
        .replace("IMG0", f.image(0).to_str().unwrap())
        .replace("IMG1", f.image(7).to_str().unwrap())
        .replace("IMG2", f.image(11).to_str().unwrap());
    let path = dir.join("job.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_job_attribute_exits_2_with_its_name() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let job = write_job(
        dir.path(),
        f,
        "[[transfer]]\nsource = \"IMG0\"\ndonors = { hue = \"IMG1\" }\n\n[[transfer]]\nsource = \"IMG0\"\ndonors = { colour = \"IMG1\" }\n",
    );
    let o = run(
        dir.path(),
        &["transfer", "--checkpoint", f.checkpoint().to_str().unwrap(), "--job", job.to_str().unwrap(), "-o", "out"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'colour'"), "{}", stderr(&o));
    assert!(!dir.path().join("out/transfer_000.png").exists());
}

#[test]
fn job_files_produce_images_and_a_result_manifest() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let job = write_job(
        dir.path(),
        f,
        r#"
[[transfer]]
source = "IMG0"
donors = { hue = "IMG1", shape = "IMG2" }

[[mix]]
attribute = "hue"
components = [{ image = "IMG0", weight = 0.25 }, { image = "IMG1", weight = 0.75 }]

[[mix]]
attribute = "hue"
mode = "signed"
base = "IMG2"
components = [{ image = "IMG0", weight = 1.5 }, { image = "IMG1", weight = -0.5 }]
output = "extrapolated"

[[interpolate]]
attribute = "shape"
image_i = "IMG0"
image_j = "IMG2"
steps = 4
"#,
    );
    let ckpt = f.checkpoint();
    let ckpt = ckpt.to_str().unwrap();
    let job = job.to_str().unwrap();
    for cmd in ["transfer", "mix", "interpolate"] {
        ok(run(dir.path(), &[cmd, "--checkpoint", ckpt, "--job", job, "-o", cmd]));
        let out = dir.path().join(cmd);
        assert!(out.join("results.json").exists() && out.join("job.toml").exists());
        assert!(out.join("resolved_config.toml").exists() && out.join("summary.json").exists());
    }
    let results = |cmd: &str| -> Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(cmd).join("results.json")).unwrap()).unwrap()
    };
    let t = results("transfer");
    assert_eq!(t[0]["outputs"][0], "transfer_000.png");
    assert!(t[0]["predicted"]["hue"].is_string());
    let m = results("mix");
    assert_eq!(m.as_array().unwrap().len(), 2);
    assert_eq!(m[1]["exploratory"], true);
    assert_eq!(m[1]["outputs"][0], "extrapolated.png");
    assert!(dir.path().join("mix/extrapolated.png").exists());
    let i = results("interpolate");
    assert_eq!(i[0]["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(i[0]["alphas"].as_array().unwrap().len(), 4);
    for k in 0..4 {
        assert!(dir.path().join(format!("interpolate/interpolate_000_{k:02}.png")).exists());
    }

    let bad_mix = write_job(
        dir.path(),
        f,
        "[[mix]]\nattribute = \"hue\"\ncomponents = [{ image = \"IMG0\", weight = 0.5 }, { image = \"IMG1\", weight = 0.6 }]\n",
    );
    let o = run(dir.path(), &["mix", "--checkpoint", ckpt, "--job", bad_mix.to_str().unwrap(), "-o", "bad"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(dir.path(), &["interpolate", "--checkpoint", ckpt, "--job", bad_mix.to_str().unwrap(), "-o", "bad"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("[[interpolate]]"));
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let job = dir.path().join("job.toml");
    std::fs::write(&job, "[[transfer]]\nsource = \"nope.png\"\ndonors = { hue = \"nope.png\" }\n").unwrap();
    let o = run(
        dir.path(),
        &["transfer", "--checkpoint", f.checkpoint().to_str().unwrap(), "--job", job.to_str().unwrap()],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = run(dir.path(), &["export-embeddings", "--checkpoint", "missing", "--code", "hue"]);
    assert_eq!(code(&o), 1);
}
