use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fvsr_core::datametrics::{container, load_clip, save_clip, save_tensors, Clip};
use fvsr_core::lbg::{codec_input, TrainConfig, TrainState};
use fvsr_core::vae::{VaeConfig, VaeModel};
use fvsr_tensor::ops::interpolate_upsample;
use fvsr_tensor::{InterpMode, Tensor};

const TINY: &[&str] = &[
    "data.count=4",
    "data.frames=2",
    "data.height=32",
    "data.width=32",
    "data.val_clips=1",
    "vae.f_enc=2",
    "vae.f_dec=4",
    "vae.base_channels=3",
    "vae.latent_channels=2",
    "ref.steps=3",
    "ref.batch=2",
    "ref.crop=8",
    "train.batch=2",
    "train.crop=0",
    "train.val_every=0",
    "train.ckpt_every=0",
];

fn fvsr(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fvsr"));
    cmd.args(args).args(["--precision", "f64"]);
    for s in TINY.iter().chain(sets) {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("spawn fvsr")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "fvsr failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_data(dir: &Path) {
    ok(fvsr(&["gen-data", "--out", s(dir)], &[]));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn data_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = vec![(
        PathBuf::from("manifest.csv"),
        fs::read(dir.join("manifest.csv")).unwrap(),
    )];
    let mut clips: Vec<_> = fs::read_dir(dir.join("clips"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    clips.sort();
    out.extend(
        clips
            .into_iter()
            .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap())),
    );
    out
}

#[test]
fn gen_data_with_zero_clips_writes_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    ok(fvsr(
        &["gen-data", "--out", s(&dir)],
        &["data.count=0", "data.val_clips=0"],
    ));
    assert_eq!(read_csv(&dir.join("manifest.csv")).len(), 1);
    assert!(dir.join("config.resolved").exists());
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&a);
    gen_data(&b);
    assert_eq!(data_files(&a), data_files(&b));
    assert_eq!(read_csv(&a.join("manifest.csv")).len(), 1 + 4);
}

#[test]
fn unknown_keys_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("x");
    let out = fvsr(&["gen-data", "--out", s(&dir)], &["loss.lambda_bogus=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown configuration key"));
    assert!(!dir.exists());
}

#[test]
fn config_file_and_snapshot_reproduce_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "# tiny dataset\ndata.count = 2\ndata.val_clips = 1\nseed = 9\n",
    )
    .unwrap();
    ok(fvsr(
        &["gen-data", "--config", s(&cfg), "--out", s(&a)],
        &["data.count=2"],
    ));
    let snapshot = fs::read_to_string(a.join("config.resolved")).unwrap();
    assert!(snapshot.contains("seed = 9\n"));
    assert!(snapshot.contains("loss.lambda_b = "));
    ok(fvsr(
        &[
            "gen-data",
            "--config",
            s(&a.join("config.resolved")),
            "--out",
            s(&b),
        ],
        &["data.count=2"],
    ));
    assert_eq!(data_files(&a), data_files(&b));
}

#[test]
fn train_without_dataset_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = fvsr(
        &[
            "train",
            "--data",
            s(&tmp.path().join("missing")),
            "--out",
            s(&out_dir),
        ],
        &["train.steps=1"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
    assert!(!out_dir.exists());
}

#[test]
fn one_step_writes_one_stage_a_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data);
    let run = tmp.path().join("run");
    ok(fvsr(
        &["train", "--data", s(&data), "--out", s(&run)],
        &["train.steps=1"],
    ));
    let rows = read_csv(&run.join("train_log.csv"));
    assert_eq!(rows[0][0], "step");
    assert_eq!(rows.iter().filter(|r| r[1] == "A").count(), 1);
    assert!(run.join("checkpoint.fvsr").exists());
    assert!(run.join("reference.fvsr").exists());
    assert_eq!(read_csv(&run.join("reference_log.csv")).len(), 1 + 3);
}

#[test]
fn resume_reproduces_the_uninterrupted_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data);
    let common = ["train.a_steps=2", "train.val_every=2"];
    let (full, split) = (tmp.path().join("full"), tmp.path().join("split"));
    let with =
        |extra: &[&'static str]| -> Vec<&str> { common.iter().chain(extra).copied().collect() };

    ok(fvsr(
        &["train", "--data", s(&data), "--out", s(&full)],
        &with(&["train.steps=6", "train.ckpt_every=3"]),
    ));
    ok(fvsr(
        &["train", "--data", s(&data), "--out", s(&split)],
        &with(&["train.steps=3"]),
    ));
    // Rows written after the last checkpoint by an interrupted run.
    let log = split.join("train_log.csv");
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("4,A,1,1,1,1,1,1,1,,\n");
    fs::write(&log, text).unwrap();
    ok(fvsr(
        &["train", "--resume", "--data", s(&data), "--out", s(&split)],
        &with(&["train.steps=6"]),
    ));

    assert_eq!(
        fs::read_to_string(&log).unwrap(),
        fs::read_to_string(full.join("train_log.csv")).unwrap()
    );
    assert_eq!(
        fs::read(split.join("checkpoint.fvsr")).unwrap(),
        fs::read(full.join("checkpoint.fvsr")).unwrap()
    );
}

#[test]
fn eval_rows_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data);
    let run = tmp.path().join("run");
    ok(fvsr(
        &["train", "--data", s(&data), "--out", s(&run)],
        &["train.steps=0"],
    ));
    let ev = tmp.path().join("eval");
    ok(fvsr(
        &[
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(&run.join("checkpoint.fvsr")),
            "--split",
            "all",
            "--dump",
            "--out",
            s(&ev),
        ],
        &["eval.include_hr=true", "eval.dump_crop=16"],
    ));
    let rows = read_csv(&ev.join("eval.csv"));
    assert_eq!(rows[0].join(","), "method,clip,kind,psnr,ssim,warp_error");
    for method in ["bicubic", "model", "hr"] {
        let clips: Vec<_> = rows
            .iter()
            .filter(|r| r[0] == method && r[1] != "mean")
            .collect();
        assert_eq!(clips.len(), 4, "{method}");
        let mean: Vec<_> = rows
            .iter()
            .filter(|r| r[0] == method && r[1] == "mean")
            .collect();
        assert_eq!(mean.len(), 1);
        for col in [3, 4, 5] {
            let vals: Vec<f64> = clips.iter().map(|r| r[col].parse().unwrap()).collect();
            let want = vals.iter().sum::<f64>() / vals.len() as f64;
            let got: f64 = mean[0][col].parse().unwrap();
            if want.is_infinite() {
                assert_eq!(got, want);
            } else {
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                    "{method} col {col}: {got} vs {want}"
                );
            }
        }
    }
    for r in rows.iter().filter(|r| r[0] == "hr") {
        assert_eq!(r[3], "inf");
        assert_eq!(r[4].parse::<f64>().unwrap(), 1.0);
    }
    for suffix in ["lr", "bicubic", "sr", "hr"] {
        assert!(
            ev.join(format!("dumps/0000_{suffix}.ppm")).exists(),
            "{suffix}"
        );
    }

    let mismatch = fvsr(
        &[
            "eval",
            "--data",
            s(&data),
            "--out",
            s(&tmp.path().join("bad")),
        ],
        &["degrade.downscale=2"],
    );
    assert!(!mismatch.status.success());
}

#[test]
fn profile_reports_the_latent_divisor() {
    let tmp = tempfile::tempdir().unwrap();
    let consts = tmp.path().join("unit.txt");
    fs::write(
        &consts,
        "kappa_e = 1\nkappa_t = 1\nkappa_d = 1\nmu_e = 1\nmu_t = 1\nmu_d = 1\n",
    )
    .unwrap();
    let run = tmp.path().join("p");
    let out = ok(fvsr(
        &[
            "profile",
            "--volume",
            "33,720,1280",
            "--strides",
            "4,8",
            "--constants",
            s(&consts),
            "--out",
            s(&run),
        ],
        &[],
    ));
    assert!(String::from_utf8_lossy(&out.stdout).contains("= 256"));
    let rows = read_csv(&run.join("profile.csv"));
    let get = |k: &str| {
        rows.iter()
            .find(|r| r[0] == k)
            .unwrap_or_else(|| panic!("{k}"))[1]
            .clone()
    };
    assert_eq!(get("divisor"), "256");
    let v = 33.0 * 720.0 * 1280.0;
    assert_eq!(get("macs.encoder").parse::<f64>().unwrap(), v);
    assert_eq!(get("macs.denoiser").parse::<f64>().unwrap(), v / 256.0);
    assert_eq!(get("macs.decoder").parse::<f64>().unwrap(), v);
    assert_eq!(get("dominance_ratio"), "256");
}

#[test]
fn profile_calibrates_on_the_toy_stack() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("p");
    ok(fvsr(&["profile", "--out", s(&run)], &[]));
    let rows = read_csv(&run.join("profile.csv"));
    let get = |k: &str| -> f64 { rows.iter().find(|r| r[0] == k).unwrap()[1].parse().unwrap() };
    assert_eq!(get("measured.token_ratio"), 0.25);
    assert!(get("measured.mac_ratio") < 1.0);
    assert!(get("analytic.mac_ratio") < 1.0);
}

/// f64 checkpoint for the tiny f16 model and a 16×16 LR clip.
fn reconstruct_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let vae = VaeConfig {
        f_enc: 2,
        f_dec: 2,
        base_channels: 3,
        latent_channels: 2,
        ..Default::default()
    };
    let psi = VaeModel::<f64>::new(vae, 5).unwrap();
    let state = TrainState::new(&psi, &TrainConfig::default()).unwrap();
    let ckpt = dir.join("ckpt.fvsr");
    save_tensors(&ckpt, &state.to_entries()).unwrap();
    let frames: Vec<_> = (0..2)
        .map(|t| Tensor::from_fn([3, 16, 16], |i| ((i * 7 + t * 3) % 17) as f64 / 16.0))
        .collect();
    let lr = dir.join("lr.fvsr");
    save_clip(&lr, &Clip::from_frames(&frames, None).unwrap()).unwrap();
    (ckpt, lr)
}

fn reconstruct(ckpt: &Path, lr: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "reconstruct",
        "--checkpoint",
        s(ckpt),
        "--input",
        s(lr),
        "--out",
        s(out),
    ];
    args.extend(extra);
    ok(fvsr(&args, &[]));
}

#[test]
fn reconstruct_upscales_by_four_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, lr) = reconstruct_fixture(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    reconstruct(&ckpt, &lr, &a, &[]);
    reconstruct(&ckpt, &lr, &b, &[]);
    let sr = load_clip(a.join("sr.fvsr")).unwrap();
    assert_eq!(sr.frames.shape(), [2, 3, 64, 64]);
    for f in ["sr.fvsr", "sr_000.ppm", "sr_001.ppm"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn identity_head_outputs_nearest_upsampled_trunk() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, lr) = reconstruct_fixture(tmp.path());
    let out = tmp.path().join("id");
    reconstruct(&ckpt, &lr, &out, &["--identity-head"]);
    let sr = load_clip(out.join("sr.fvsr")).unwrap();

    let entries = container::decode(&fs::read(&ckpt).unwrap()).unwrap();
    let theta = VaeModel::<f64>::from_entries("theta", &entries).unwrap();
    let input = load_clip(&lr).unwrap();
    for t in 0..input.len() {
        let x = codec_input(&input.frame(t), 2).unwrap();
        let z = theta.encode(&x).unwrap().mean;
        let trunk = theta
            .trunk_features(&z)
            .unwrap()
            .slice_channels(0, 3)
            .unwrap();
        let want = interpolate_upsample(&trunk, 2, InterpMode::Nearest)
            .unwrap()
            .map(|v| v.clamp(0.0, 1.0));
        let got = sr.frame(t);
        let err = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "frame {t}: {err}");
    }
}
