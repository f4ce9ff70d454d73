use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
[model]
width = 32
height = 32
coeffs_per_channel = 16
code_per_block = 48
motion_width = 8
unet_width = 16
time_dim = 16

[train]
steps = 2
gop_size = 4
lr_start = 1e-3
lr_end = 1e-3
lr_levels = 1

[eval]
snr_db = [0.0, 10.0]
seeds = [0]
gop_size = 4
"#;

fn wvsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wvsc"))
        .args(args)
        .env_remove("WVSC_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Tiny {
    dir: TempDir,
}

impl Tiny {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        let t = Self { dir };
        let out = wvsc(&["gen", "--out", s(&t.clip()), "--frames", "6", "--size", "32x32", "--motion", "rect:1,1:gradient"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        t
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn clip(&self) -> PathBuf {
        self.path("clip.rgb")
    }

    fn config(&self) -> PathBuf {
        self.path("tiny.toml")
    }
}

#[test]
fn gen_writes_expected_payload() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("a.rgb");
    let out = wvsc(&["gen", "--out", s(&out_path), "--frames", "10", "--size", "128x128", "--motion", "rect:2,0"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "491520");
    let bytes = std::fs::read(&out_path).unwrap();
    assert_eq!(bytes.len(), 491_520);

    let again = dir.path().join("b.rgb");
    wvsc(&["gen", "--out", s(&again), "--frames", "10", "--size", "128x128", "--motion", "rect:2,0"]);
    assert_eq!(bytes, std::fs::read(&again).unwrap());
    assert!(dir.path().join("a.rgb.meta.json").is_file());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&wvsc(&["gen", "--frames", "3"])), 2);
    assert_eq!(code(&wvsc(&["gen", "--out", "x", "--size", "0x4"])), 2);
    assert_eq!(code(&wvsc(&["train", "--stage", "4", "--data", "x", "--out-weights", "w"])), 2);
    assert_eq!(code(&wvsc(&["bogus"])), 2);
}

#[test]
fn later_stage_without_weights_exits_3() {
    let t = Tiny::new();
    for stage in ["2", "3"] {
        let out = wvsc(&[
            "train", "--stage", stage, "--config", s(&t.config()), "--data", s(&t.clip()),
            "--out-weights", s(&t.path("w.json")),
        ]);
        assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn stage_order_is_enforced_through_weights() {
    let t = Tiny::new();
    let (cfg, clip) = (t.config(), t.clip());
    let w1 = t.path("w1.json");
    let out = wvsc(&["train", "--stage", "1", "--config", s(&cfg), "--data", s(&clip), "--out-weights", s(&w1)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path("w1.json.log.json")).unwrap()).unwrap();
    assert_eq!(log["losses"].as_array().unwrap().len(), 2);

    // Stage 3 needs stage 2 first.
    let w3 = t.path("w3.json");
    let args = ["--config", s(&cfg), "--data", s(&clip), "--in-weights", s(&w1), "--out-weights", s(&w3)];
    assert_eq!(code(&wvsc(&[&["train", "--stage", "3"][..], &args].concat())), 3);
    assert_eq!(code(&wvsc(&[&["train", "--stage", "2"][..], &args].concat())), 0);
}

#[test]
fn oracle_on_noiseless_channel_is_near_lossless() {
    let dir = TempDir::new().unwrap();
    let clip = dir.path().join("a.rgb");
    let csv = dir.path().join("o.csv");
    wvsc(&["gen", "--out", s(&clip), "--frames", "10", "--size", "128x128", "--motion", "rect:2,0"]);
    let out = wvsc(&["simulate", "--data", s(&clip), "--snr-db", "inf", "--oracle", "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let psnr: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(psnr.len(), 10);
    let mean = psnr.iter().sum::<f64>() / psnr.len() as f64;
    assert!(mean > 40.0, "mean PSNR {mean}");
}

#[test]
fn simulate_is_reproducible_and_honours_thread_count() {
    let t = Tiny::new();
    let run = |name: &str, jobs: &str| {
        let csv = t.path(name);
        let out = wvsc(&[
            "--jobs", jobs, "simulate", "--config", s(&t.config()), "--data", s(&t.clip()), "--snr-db", "-2",
            "--seed", "7", "--out", s(&csv),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(csv).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "3"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("gop,frame,role,psnr_db,ms_ssim,snr_db,m,lambda,k,seed"));
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn sweep_writes_blocks_and_summary() {
    let t = Tiny::new();
    let (csv, summary) = (t.path("s.csv"), t.path("s.csv.json"));
    let out = wvsc(&[
        "sweep", "--param", "m", "--values", "5,1", "--config", s(&t.config()), "--data", s(&t.clip()),
        "--snr-db", "6", "--out", s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let m: Vec<usize> = rdr.records().map(|r| r.unwrap()[6].parse().unwrap()).collect();
    assert_eq!(m, [vec![1; 6], vec![5; 6]].concat());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 2);

    let empty = wvsc(&[
        "sweep", "--param", "snr", "--values", "", "--config", s(&t.config()), "--data", s(&t.clip()),
        "--out", s(&csv),
    ]);
    assert_eq!(code(&empty), 2);
    let bad = wvsc(&[
        "sweep", "--param", "m", "--values", "1.5", "--config", s(&t.config()), "--data", s(&t.clip()),
        "--out", s(&csv),
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn bad_config_exits_2() {
    let t = Tiny::new();
    let bad = t.path("bad.toml");
    std::fs::write(&bad, "[diffusion]\nlambda = 2.0\n").unwrap();
    let out = wvsc(&["simulate", "--config", s(&bad), "--data", s(&t.clip()), "--out", s(&t.path("x.csv"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn evaluate_reports_one_row_per_snr_and_seed() {
    let t = Tiny::new();
    let out_path = t.path("eval.json");
    let out = wvsc(&["evaluate", "--config", s(&t.config()), "--data", s(&t.clip()), "--oracle", "--out", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1]["mean_psnr_db"].as_f64().unwrap() > rows[0]["mean_psnr_db"].as_f64().unwrap());
}
