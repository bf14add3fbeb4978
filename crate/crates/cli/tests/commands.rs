use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use cpdewarp_core::{build_reference_grid, AnnotationRecord, BackwardMap, ImageBuffer, Point2, ReferenceSpec};
use cpdewarp_synth::procedural_scan;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cpdewarp"));
    c.arg("--quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or_default()).unwrap_or_else(|_| panic!("stderr: {text}"))
}

fn identity_annotation(dir: &Path, size: (u32, u32), rows: usize, cols: usize) -> std::path::PathBuf {
    let spec = ReferenceSpec::new(
        (size.1 as f64 - 8.0) / (rows - 1) as f64,
        (size.0 as f64 - 8.0) / (cols - 1) as f64,
        Point2::new(4.0, 4.0),
        rows,
        cols,
    )
    .unwrap();
    let grid = build_reference_grid(&spec).unwrap();
    let record = AnnotationRecord::new("page.png", size, &grid, &spec, None).unwrap();
    let path = dir.join(format!("identity_{rows}x{cols}.json"));
    record.save(&path).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn grid_info_and_subsample() {
    let dir = tempfile::tempdir().unwrap();
    let a31 = identity_annotation(dir.path(), (200, 200), 31, 31);
    let a61 = identity_annotation(dir.path(), (200, 200), 61, 61);
    let v = stdout_json(&run(&["grid", "info", "--annotation", p(&a31)]));
    assert_eq!(v, serde_json::json!({"rows": 31, "cols": 31, "valid_steps": [1, 2, 3, 5, 6, 10, 15, 30]}));
    let v = stdout_json(&run(&["grid", "info", "--annotation", p(&a61)]));
    assert_eq!(v["valid_steps"], serde_json::json!([1, 2, 3, 4, 5, 6, 10, 12, 15, 20, 30, 60]));

    let same = dir.path().join("same.json");
    stdout_json(&run(&["grid", "subsample", "--annotation", p(&a31), "--step", "1", "--out", p(&same)]));
    assert_eq!(AnnotationRecord::load(&same).unwrap(), AnnotationRecord::load(&a31).unwrap());

    let sub = dir.path().join("sub.json");
    let v = stdout_json(&run(&["grid", "subsample", "--annotation", p(&a31), "--step", "3", "--out", p(&sub)]));
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(11), Some(11)));
    let v = stdout_json(&run(&[
        "grid", "subsample", "--annotation", p(&a31), "--step", "3", "--col-step", "2", "--out", p(&sub),
    ]));
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(11), Some(16)));

    let out = run(&["grid", "subsample", "--annotation", p(&a31), "--step", "7", "--out", p(&sub)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["valid_steps"], serde_json::json!([1, 2, 3, 5, 6, 10, 15, 30]));
}

#[test]
fn dewarp_identity_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let img = procedural_scan(200, 160, 3);
    let img_path = dir.path().join("page.png");
    img.save_png(&img_path).unwrap();
    let ann = identity_annotation(dir.path(), (200, 160), 31, 31);
    let out_path = dir.path().join("flat.png");
    let map_path = dir.path().join("flat.cpbm");

    for method in ["linear", "tps"] {
        let v = stdout_json(&run(&[
            "dewarp", "--image", p(&img_path), "--annotation", p(&ann), "--method", method, "--step", "5", "--out",
            p(&out_path), "--map-out", p(&map_path),
        ]));
        for key in ["fit_ms", "eval_ms", "remap_ms", "total_ms"] {
            assert!(v[key].as_f64().unwrap() >= 0.0, "{key}");
        }
        assert_eq!(v["sites"], 49);
        assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(192), Some(152)));
        let flat = ImageBuffer::load(&out_path).unwrap();
        assert_eq!(flat, img.crop(4, 4, 192, 152).unwrap(), "{method}");
        let map = BackwardMap::load(&map_path).unwrap();
        assert_eq!((map.width(), map.height()), (192, 152));
    }

    let out = run(&[
        "dewarp", "--image", p(&img_path), "--annotation", p(&ann), "--step", "7", "--out", p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "data");
    assert_eq!(e["valid_steps"], serde_json::json!([1, 2, 3, 5, 6, 10, 15, 30]));

    let out = run(&[
        "dewarp", "--image", p(&dir.path().join("missing.png")), "--annotation", p(&ann), "--out", p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "io");

    let out = run(&["dewarp", "--image", p(&img_path), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
    let out = run(&["dewarp", "--image", "a", "--annotation", "b", "--out", "c", "--method", "cubic"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["dewarp", "--image", "a", "--annotation", "b", "--out", "c", "--out-size", "10"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 1}"#).unwrap();
    let out = run(&["dewarp", "--image", p(&img_path), "--annotation", p(&bad), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(3));
}

fn digest_dir(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            let hash = Sha256::digest(std::fs::read(f).unwrap());
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            (f.file_name().unwrap().to_string_lossy().into_owned(), hex)
        })
        .collect()
}

#[test]
fn synth_is_reproducible_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let scans = dir.path().join("scans");
    std::fs::create_dir(&scans).unwrap();
    procedural_scan(640, 820, 4).save_png(scans.join("page.png")).unwrap();
    let config = dir.path().join("synth.json");
    std::fs::write(&config, r#"{"rows": 31, "cols": 31, "canvas": [400, 400]}"#).unwrap();

    let mut digests = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let v = stdout_json(&run(&[
            "--threads", threads, "synth", "--scans", p(&scans), "--out", p(&out), "--count", "2", "--seed", "7",
            "--config", p(&config),
        ]));
        assert_eq!((v["count"].as_u64(), v["seed"].as_u64()), (Some(2), Some(7)));
        digests.push(digest_dir(&out));
    }
    assert_eq!(digests[0].len(), 9);
    assert_eq!(digests[0], digests[1]);

    let out0 = dir.path().join("out0");
    let record = AnnotationRecord::load(out0.join("sample_00000.json")).unwrap();
    assert_eq!((record.grid.rows, record.grid.cols), (31, 31));
    let flat = out0.join("sample_00000_flat.png");
    let gt_map = out0.join("sample_00000.cpbm");
    let v = stdout_json(&run(&[
        "eval", "--pred", p(&flat), "--gt", p(&flat), "--pred-map", p(&gt_map), "--gt-map", p(&gt_map),
    ]));
    assert_eq!(v["ms_ssim"], 1.0);
    assert_eq!(v["endpoint_mean_px"], 0.0);
    assert_eq!(v["endpoint_max_px"], 0.0);

    // dewarp with the synthetic annotation recovers the ground-truth map
    let pred = dir.path().join("pred.png");
    let pred_map = dir.path().join("pred.cpbm");
    stdout_json(&run(&[
        "dewarp", "--image", p(&out0.join("sample_00000.png")), "--annotation", p(&out0.join("sample_00000.json")),
        "--method", "linear", "--out", p(&pred), "--map-out", p(&pred_map),
    ]));
    let v = stdout_json(&run(&[
        "eval", "--pred", p(&pred), "--gt", p(&flat), "--pred-map", p(&pred_map), "--gt-map", p(&gt_map),
    ]));
    assert!(v["endpoint_mean_px"].as_f64().unwrap() <= 2.0, "{v}");
    assert!(v["ms_ssim"].as_f64().unwrap() > 0.5, "{v}");
    let v = stdout_json(&run(&["eval", "--pred", p(&pred), "--gt", p(&flat)]));
    assert!(v.get("endpoint_mean_px").is_none());

    let other = out0.join("sample_00001_flat.png");
    if ImageBuffer::load(&other).unwrap().dimensions() != ImageBuffer::load(&flat).unwrap().dimensions() {
        let out = run(&["eval", "--pred", p(&other), "--gt", p(&flat)]);
        assert_eq!(out.status.code(), Some(3));
    }

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&["synth", "--scans", p(&empty), "--out", p(&dir.path().join("x")), "--count", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let none = dir.path().join("none");
    let v = stdout_json(&run(&["synth", "--scans", p(&scans), "--out", p(&none), "--count", "0"]));
    assert_eq!(v["count"], 0);
    assert_eq!(std::fs::read_to_string(none.join("manifest.jsonl")).unwrap(), "");
}

fn http_get(addr: &str, path: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn start_server(root: &Path) -> (std::process::Child, String) {
    let mut child = bin()
        .args(["serve", "--port", "0", "--root", p(root)])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let v: Value = serde_json::from_str(&line).unwrap();
    (child, v["listening"].as_str().unwrap().to_string())
}

fn terminate(child: &mut std::process::Child) -> Option<i32> {
    let ok = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(ok.success());
    child.wait().unwrap().code()
}

#[cfg(unix)]
#[test]
fn serve_lists_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (mut child, addr) = start_server(dir.path());
    let (status, body) = http_get(&addr, "/projects");
    assert_eq!((status, body.trim()), (200, "[]"));
    assert_eq!(terminate(&mut child), Some(0));

    let png = procedural_scan(120, 90, 1).encode_png().unwrap();
    let id = {
        let store = cpdewarp_service::Store::open(dir.path()).unwrap();
        let p = store
            .create(&png, Some("p.png"), cpdewarp_service::Init::Uniform { rows: 4, cols: 4 })
            .unwrap();
        store.update_points(&p.id, p.annotation.control_points.clone(), 0).unwrap();
        p.id.clone()
    };
    let (mut child, addr) = start_server(dir.path());
    let (status, body) = http_get(&addr, &format!("/projects/{id}"));
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["revision"], 1);
    assert_eq!(terminate(&mut child), Some(0));

    let blocker = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = blocker.local_addr().unwrap().port().to_string();
    let out = run(&["serve", "--port", &port, "--root", p(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}
