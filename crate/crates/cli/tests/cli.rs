use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn headsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headsplat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let out = headsplat(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_SPEC: &str = r#"{"rings": 4, "segments": 6, "timestamps": 5, "width": 16, "height": 16, "focal": 20.0, "supersample": 1}"#;

/// Generates a tiny dataset and trains a short checkpoint.
fn fixture(dir: &TempDir, ablation: &str) -> (String, String) {
    let spec = dir.path().join("spec.json");
    fs::write(&spec, TINY_SPEC).unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--spec",
        p(&spec),
        "--out",
        p(&data),
        "--seed",
        "3",
    ]);
    let ckpt = dir.path().join("avatar.gavk");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--ablation",
        ablation,
        "--iterations",
        "6",
        "--seed",
        "1",
    ]);
    (p(&data).to_string(), p(&ckpt).to_string())
}

#[test]
fn full_workflow_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt) = fixture(&dir, "full");
    assert!(dir.path().join("avatar.csv").exists());
    let log = fs::read_to_string(dir.path().join("avatar.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);

    let img = dir.path().join("r.png");
    ok(&[
        "render",
        "--ckpt",
        &ckpt,
        "--t",
        "1",
        "--view",
        "0",
        "--out",
        p(&img),
    ]);
    assert!(img.exists());

    let cam = dir.path().join("cam.json");
    let cams: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&data).join("cams.json")).unwrap())
            .unwrap();
    fs::write(&cam, cams[1].to_string()).unwrap();
    let novel = dir.path().join("n.png");
    ok(&[
        "render",
        "--ckpt",
        &ckpt,
        "--t",
        "1",
        "--camera",
        p(&cam),
        "--out",
        p(&novel),
    ]);
    assert_eq!(fs::read(&novel).unwrap(), {
        let v1 = dir.path().join("v1.png");
        ok(&[
            "render",
            "--ckpt",
            &ckpt,
            "--t",
            "1",
            "--view",
            "1",
            "--out",
            p(&v1),
        ]);
        // banked corrections are view-independent, so the novel path matches the view path
        fs::read(&v1).unwrap()
    });

    let report = dir.path().join("eval/report.json");
    let stdout = ok(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &data,
        "--protocol",
        "self_reenact",
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("self_reenact"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["lpips"], "unsupported");
    assert_eq!(json["protocol"], "self_reenact");
    let csv = fs::read_to_string(report.with_extension("csv")).unwrap();
    assert_eq!(
        csv.lines().count(),
        json["frame_count"].as_u64().unwrap() as usize + 2
    );

    let bank = ok(&["inspect-bank", "--ckpt", &ckpt]);
    let mut lines = bank.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("t,inter_view_variance,mean_0"));
    assert!(lines.count() >= 1);

    let driving = dir.path().join("driving.json");
    let params: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(&data).join("params_true.json")).unwrap(),
    )
    .unwrap();
    fs::write(
        &driving,
        serde_json::Value::Array(params.as_array().unwrap()[..2].to_vec()).to_string(),
    )
    .unwrap();
    let frames = dir.path().join("frames");
    ok(&[
        "reenact",
        "--ckpt",
        &ckpt,
        "--driving",
        p(&driving),
        "--cams",
        p(&Path::new(&data).join("cams.json")),
        "--out",
        p(&frames),
    ]);
    let written = fs::read_dir(&frames).unwrap().count();
    assert_eq!(written, 2 * cams.as_array().unwrap().len());
}

#[test]
fn seeded_runs_are_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (_, ca) = fixture(&a, "multi-view-m");
    let (_, cb) = fixture(&b, "multi-view-m");
    assert_eq!(fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
    assert_eq!(
        fs::read(a.path().join("avatar.csv")).unwrap(),
        fs::read(b.path().join("avatar.csv")).unwrap()
    );
}

#[test]
fn freeze_checkpoint_has_no_bank() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = fixture(&dir, "freeze");
    assert!(ok(&["inspect-bank", "--ckpt", &ckpt]).contains("no expression bank"));
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt) = fixture(&dir, "multi-view-o");

    assert_eq!(
        code(&headsplat(&[
            "train",
            "--data",
            &data,
            "--out",
            "x",
            "--ablation",
            "nope"
        ])),
        2
    );
    assert_eq!(
        code(&headsplat(&[
            "eval",
            "--ckpt",
            &ckpt,
            "--data",
            &data,
            "--protocol",
            "cross",
            "--out",
            "r.json"
        ])),
        2
    );

    let bad_spec = dir.path().join("bad.json");
    fs::write(&bad_spec, r#"{"cameras": 0}"#).unwrap();
    let out = dir.path().join("bad");
    assert_eq!(
        code(&headsplat(&[
            "gen-data",
            "--spec",
            p(&bad_spec),
            "--out",
            p(&out)
        ])),
        2
    );

    let img = dir.path().join("x.png");
    assert_eq!(
        code(&headsplat(&[
            "render",
            "--ckpt",
            &ckpt,
            "--t",
            "99",
            "--view",
            "0",
            "--out",
            p(&img)
        ])),
        2
    );
    assert_eq!(
        code(&headsplat(&[
            "render",
            "--ckpt",
            &ckpt,
            "--t",
            "0",
            "--view",
            "9",
            "--out",
            p(&img)
        ])),
        2
    );
    assert_eq!(
        code(&headsplat(&[
            "render",
            "--ckpt",
            &ckpt,
            "--t",
            "0",
            "--out",
            p(&img)
        ])),
        2
    );

    let garbage = dir.path().join("garbage.gavk");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(
        code(&headsplat(&["inspect-bank", "--ckpt", p(&garbage)])),
        2
    );

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 5, "reanchor_interval": 0}"#).unwrap();
    assert_eq!(
        code(&headsplat(&[
            "train",
            "--data",
            &data,
            "--config",
            p(&cfg),
            "--out",
            "x"
        ])),
        2
    );

    let driving = dir.path().join("driving.json");
    fs::write(
        &driving,
        r#"[{"rigid": [0,0,0,0,0,0], "joint_rotations": [], "shape": [], "expression": []}]"#,
    )
    .unwrap();
    let cams = Path::new(&data).join("cams.json");
    assert_eq!(
        code(&headsplat(&[
            "reenact",
            "--ckpt",
            &ckpt,
            "--driving",
            p(&driving),
            "--cams",
            p(&cams),
            "--out",
            p(&out)
        ])),
        2
    );
}

#[test]
fn missing_files_are_internal_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.gavk");
    assert_eq!(
        code(&headsplat(&["inspect-bank", "--ckpt", p(&missing)])),
        1
    );
}
