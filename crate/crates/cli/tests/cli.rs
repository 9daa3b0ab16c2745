use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sonoseg::tensor::read_tensor;

const TINY: &str = r#"
seed = 7

[sim]
obs_cells = 16

[dataset]
n_scenes = 10

[train]
epochs = 2
batch_size = 4

[train.net]
base_width = 4
depth = 1
blocks = 1
"#;

fn sonoseg(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sonoseg"));
    cmd.args(args);
    match workers {
        Some(n) => cmd.env("SONOSEG_WORKERS", n),
        None => cmd.env_remove("SONOSEG_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = sonoseg(args, None);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn dataset(&self) -> PathBuf {
        let ds = self.path("ds");
        if !ds.join("manifest.json").exists() {
            ok(&["make-dataset", "--config", s(&self.path("tiny.toml")), "--out", s(&ds)]);
        }
        ds
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn make_dataset_is_byte_identical_across_runs_and_workers() {
    let fx = Fixture::new();
    let cfg = fx.path("tiny.toml");
    let mut trees = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out = fx.path(name);
        let o = sonoseg(&["make-dataset", "--config", s(&cfg), "--out", s(&out)], Some(workers));
        assert!(o.status.success());
        trees.push(tree(&out));
    }
    assert_eq!(trees[0].len(), 2 + 7 * 10);
    assert!(trees[0] == trees[1] && trees[0] == trees[2]);
}

#[test]
fn identity_evaluation_matches_input_psnr() {
    let fx = Fixture::new();
    let ds = fx.dataset();
    let ev = fx.path("ev");
    let v = ok(&["evaluate", "--dataset", s(&ds), "--identity", "--split", "all", "--out", s(&ev)]);
    assert_eq!(v["summary"]["psnr_db"], v["input_psnr_db"]);

    let summary: BTreeMap<String, Value> =
        serde_json::from_str(&std::fs::read_to_string(ev.join("summary.json")).unwrap()).unwrap();
    let keys: Vec<&str> = summary.keys().map(String::as_str).collect();
    assert_eq!(keys, ["iou", "n", "psnr_db", "ssim"]);
    assert_eq!(summary["n"], 10);
    for f in ["snr_vs_psnr.csv", "area_vs_iou.csv", "report.csv"] {
        let rows = csv::Reader::from_path(ev.join(f)).unwrap().records().count();
        assert_eq!(rows, 10, "{f}");
    }
}

#[test]
fn train_infer_and_evaluate_checkpoint() {
    let fx = Fixture::new();
    let ds = fx.dataset();
    let run = fx.path("run");
    let v = ok(&["train", "--dataset", s(&ds), "--config", s(&fx.path("tiny.toml")), "--out", s(&run)]);
    assert_eq!(v["epochs"], 2);
    let rows = csv::Reader::from_path(run.join("history.csv")).unwrap().records().count();
    assert_eq!(rows, 2);
    assert!(run.join("val_summary.json").exists() && run.join("val_report.csv").exists());

    // resuming a finished run adds no epochs
    let v = ok(&["train", "--dataset", s(&ds), "--config", s(&fx.path("tiny.toml")), "--out", s(&run), "--resume"]);
    assert_eq!(v["epochs"], 2);

    let ckpt = run.join("checkpoint");
    let inf = fx.path("inf");
    let noisy = ds.join("scenes/scene_00001/noisy.sft");
    let v = ok(&["infer", "--checkpoint", s(&ckpt), "--input", s(&noisy), "--out", s(&inf)]);
    assert_eq!(v["kind"], "spectral_image");
    let (den, _) = read_tensor(inf.join("denoised.sft")).unwrap();
    assert_eq!(den.dims(), [2, 16, 16]);
    let (mask, _) = read_tensor(inf.join("mask.sft")).unwrap();
    assert_eq!(mask.dims(), [16, 16]);
    assert_eq!(png_scale(&inf.join("denoised_re.png")), (-1.0, 1.0));

    let ev = fx.path("ev");
    let v = ok(&["evaluate", "--dataset", s(&ds), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert_eq!(v["summary"]["n"], 1);
}

fn png_scale(path: &Path) -> (f64, f64) {
    let reader = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()))
        .read_info()
        .unwrap();
    let text = &reader.info().uncompressed_latin1_text;
    let get = |k: &str| text.iter().find(|c| c.keyword == k).unwrap().text.parse().unwrap();
    (get("scale_min"), get("scale_max"))
}

#[test]
fn video_inputs_keep_their_length() {
    let fx = Fixture::new();
    let ds = fx.dataset();
    let run = fx.path("run");
    ok(&["train", "--dataset", s(&ds), "--config", s(&fx.path("tiny.toml")), "--out", s(&run)]);
    let sim = fx.path("sim");
    let v = ok(&["simulate", "--config", s(&fx.path("tiny.toml")), "--index", "3", "--out", s(&sim)]);
    let frames = v["frames"].as_u64().unwrap() as usize;
    let video = sim.join("video.sft");

    let inf = fx.path("inf");
    let v = ok(&["infer", "--checkpoint", s(&run.join("checkpoint")), "--input", s(&video), "--out", s(&inf)]);
    let (den, _) = read_tensor(inf.join("denoised.sft")).unwrap();
    assert_eq!(den.dims(), [16, 16, frames]);
    assert_eq!(std::fs::read_dir(inf.join("frames")).unwrap().count(), 2 * frames);
    // one color scale for every frame
    let peak = v["scale"][1].as_f64().unwrap();
    assert_eq!(png_scale(&inf.join("frames/frame_00000.png")), (-peak, peak));
    assert_eq!(png_scale(&inf.join(format!("frames/frame_{:05}.png", frames - 1))), (-peak, peak));

    let spec = fx.path("bp.toml");
    std::fs::write(&spec, "kind = \"time_bandpass\"\ncenter_hz = 1000.0\nbandwidth_hz = 400.0\n").unwrap();
    let flt = fx.path("flt");
    ok(&["filter", "--spec", s(&spec), "--input", s(&video), "--out", s(&flt)]);
    let (den, _) = read_tensor(flt.join("denoised.sft")).unwrap();
    assert_eq!(den.dims(), [16, 16, frames]);
}

#[test]
fn add_noise_reproduces_dataset_levels() {
    let fx = Fixture::new();
    let ds = fx.dataset();
    let scene = ds.join("scenes/scene_00002");
    let out = fx.path("n.sft");
    let v = ok(&[
        "add-noise",
        "--config",
        s(&fx.path("tiny.toml")),
        "--clean",
        s(&scene.join("clean.sft")),
        "--mask",
        s(&scene.join("mask.sft")),
        "--index",
        "2",
        "--out",
        s(&out),
    ]);
    let record: Value = serde_json::from_str(&std::fs::read_to_string(scene.join("scene.json")).unwrap()).unwrap();
    assert_eq!(v["snr_sound_db"], record["noise"]["snr_sound_db"]);
    let a = v["realized_snr_sound_db"].as_f64().unwrap();
    let b = record["realized_snr_sound_db"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn failures_report_json_and_nonzero_exit() {
    let fx = Fixture::new();
    for args in [
        vec!["evaluate", "--dataset", "/nonexistent", "--identity", "--out", "x"],
        vec!["no-such-command"],
        vec!["evaluate", "--dataset", "d", "--out", "x"],
    ] {
        let out = sonoseg(&args, None);
        assert!(!out.status.success(), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert!(err["error"].is_string() && err["message"].is_string());
    }
    let out = sonoseg(&["make-dataset", "--config", s(&fx.path("tiny.toml")), "--out", "x"], Some("zero"));
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    std::fs::write(fx.path("bad.toml"), "[sim]\nobs_cells = 16\n").unwrap();
    let out = sonoseg(&["make-dataset", "--config", s(&fx.path("bad.toml")), "--out", "x"], None);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}
