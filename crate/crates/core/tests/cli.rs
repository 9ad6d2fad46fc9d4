use std::path::Path;
use std::process::Command;

fn texseg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_texseg")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn synth(dir: &Path, side: &str) -> (String, String) {
    let obj = dir.join("s.obj").display().to_string();
    let gt = dir.join("s.csv").display().to_string();
    let (code, _, err) = texseg(&["synth", "--pattern", "sine", "--side", side, "--out", &obj, "--gt", &gt]);
    assert_eq!(code, 0, "{err}");
    (obj, gt)
}

#[test]
fn synth_segment_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, gt) = synth(dir.path(), "40");
    let pred = dir.path().join("p.csv").display().to_string();
    let ply = dir.path().join("p.ply").display().to_string();
    let (code, out, err) = texseg(&[
        "segment", &obj, "--out", &pred, "--ply", &ply, "--grid", "8", "--max-epochs", "3", "--generator-steps", "2",
        "--cleaner-steps", "2",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("\"texture\""));
    assert!(err.contains("epoch 1"));
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply"));
    let (code, out, err) = texseg(&["eval", "--pred", &pred, "--gt", &gt]);
    assert_eq!(code, 0, "{err}");
    let rec: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(rec["f1"].is_number() && rec["miou"].is_number());
}

#[test]
fn missing_mesh_is_a_runtime_error_naming_the_path() {
    let (code, _, err) = texseg(&["segment", "missing.obj", "--out", "x.csv"]);
    assert_eq!(code, 1);
    assert!(err.contains("missing.obj"), "{err}");
}

#[test]
fn tiny_grid_is_a_usage_error() {
    let (code, _, err) = texseg(&["segment", "m.obj", "--out", "x.csv", "--grid", "3"]);
    assert_eq!(code, 2);
    assert!(err.contains("grid size 3"), "{err}");
    let (code, _, _) = texseg(&["segment", "--grid", "3"]);
    assert_eq!(code, 2);
    let (code, _, _) = texseg(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn precomputed_features_bypass_the_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, _) = synth(dir.path(), "32");
    let feats = dir.path().join("f.bin").display().to_string();
    let (code, out, err) = texseg(&["features", &obj, "--out", &feats, "--grid", "6"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("\"dim\":256"));
    let a = dir.path().join("a.csv").display().to_string();
    let b = dir.path().join("b.csv").display().to_string();
    let common = ["--grid", "6", "--max-epochs", "2", "--generator-steps", "1", "--cleaner-steps", "1", "-q"];
    let (code, _, err) = texseg(&[&["segment", &obj, "--out", &a, "--features", &feats][..], &common].concat());
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = texseg(&[&["segment", &obj, "--out", &b][..], &common].concat());
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn baseline_and_ablate_report() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, gt) = synth(dir.path(), "32");
    let (code, out, err) = texseg(&["baseline", &obj, "--method", "kmeans2", "--gt", &gt, "--grid", "6"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("\"name\":\"kmeans2\""));
    let (code, out, err) = texseg(&[
        "ablate", &obj, "--variants", "w/o-dl,full", "--gt", &gt, "--grid", "6", "--max-epochs", "2", "--generator-steps",
        "1", "--cleaner-steps", "1", "-q",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2);
    let (code, _, _) = texseg(&["ablate", &obj, "--variants", "w/o-magic"]);
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_command_passes() {
    let (code, out, err) = texseg(&["gradcheck"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 5);
}

#[test]
fn permissive_drops_non_manifold_facets() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, _) = synth(dir.path(), "30");
    let text = std::fs::read_to_string(&obj).unwrap();
    let verts = text.lines().filter(|l| l.starts_with("v ")).count();
    let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
    // glue a fin onto an interior edge
    let mid: Vec<&str> = faces[faces.len() / 2].split_whitespace().collect();
    let bad = dir.path().join("fin.obj");
    std::fs::write(&bad, format!("{text}\nv 0 0 9\nf {} {} {}\n", mid[1], mid[2], verts + 1)).unwrap();
    let bad = bad.display().to_string();
    let pred = dir.path().join("p.csv").display().to_string();
    let fast = ["--grid", "6", "--max-epochs", "2", "--generator-steps", "1", "--cleaner-steps", "1", "-q"];

    let mut args = vec!["segment", bad.as_str(), "--out", pred.as_str()];
    args.extend(fast);
    let (code, _, err) = texseg(&args);
    assert_eq!(code, 1, "{err}");
    assert!(err.to_lowercase().contains("manifold"), "{err}");

    args.push("--permissive");
    let (code, _, err) = texseg(&args);
    assert_eq!(code, 0, "{err}");
    let labels = std::fs::read_to_string(&pred).unwrap();
    let rows: Vec<(usize, i8)> = labels
        .lines()
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), faces.len() + 1);
    // the fin has the highest index on its edge, so it is the one dropped
    assert_eq!(rows[faces.len()].1, -1);
    assert!(rows.iter().any(|r| r.1 >= 0));
}
