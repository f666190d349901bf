use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protorefine::geom::ply::{read_ply, write_cloud, PlyFormat};
use protorefine::geom::PointCloud;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protorefine"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn make_proto_level_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("proto.ply");
    let o = run(&["make-proto", "--level", "2", "--radius", "0.05", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ply = read_ply(&out).unwrap();
    assert_eq!(ply.vertices.len(), 162);
    assert_eq!(ply.faces.unwrap().len(), 320);
    assert!(stdout(&o).contains("162 vertices, 320 faces"));

    let o = run(&["make-proto", "--level", "9", "--radius", "0.05", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["synth", "--seed", "7", "--n", "3", "--out", s(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    assert!(ta.iter().any(|(p, _)| p.starts_with("train/0001")));
}

#[test]
fn eval_fixtures_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.ply");
    let gt = dir.path().join("gt.ply");
    write_cloud(&pred, &PointCloud::new(vec![[0.0; 3]]).unwrap(), PlyFormat::Ascii).unwrap();
    write_cloud(&gt, &PointCloud::new(vec![[0.0; 3], [0.01, 0.0, 0.0]]).unwrap(), PlyFormat::Ascii).unwrap();
    let o = run(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--tau", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(j["precision"], 100.0);
    assert_eq!(j["recall"], 50.0);
    assert!((j["fscore"].as_f64().unwrap() - 200.0 / 3.0).abs() < 1e-9);

    let o = run(&["eval", "--pred", s(&gt), "--gt", s(&gt)]);
    let j: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((j["dc_mm"].as_f64(), j["fscore"].as_f64()), (Some(0.0), Some(100.0)));

    let missing = dir.path().join("nowhere.ply");
    let o = run(&["eval", "--pred", s(&missing), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--pred", "x.ply"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--scale", "tiny"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for name in ["pointwise_mlp", "batchnorm_train", "chamfer", "end_to_end_tiny"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn zero_weights_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    let out = dir.path().join("run");
    let json = serde_json::json!({
        "weights": {"coarse": 0.0, "fine": 0.0, "normal": 0.0, "laplacian": 0.0},
        "data": dir.path().join("data"),
        "out": out,
    });
    fs::write(&cfg, json.to_string()).unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn train_then_infer_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["synth", "--seed", "1", "--n", "5", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cfg = dir.path().join("train.json");
    let out = dir.path().join("run");
    let json = serde_json::json!({
        "model": {
            "global_dim": 32, "extractor": [[8, 16], [16, 16], [32, 32]], "generator": [32, 32],
            "dense": [16, 8], "coarse_level": 0, "fine_level": 2, "radius": 0.05,
            "input_points": 64, "use_prototypes": true
        },
        "epochs": 2,
        "batch_size": 2,
        "seed": 3,
        "data": data,
        "out": out,
    });
    fs::write(&cfg, json.to_string()).unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "coarse", "fine", "normal", "laplacian", "total"] {
            assert!(v.get(key).is_some(), "{key} in {line}");
        }
    }

    let ckpt = out.join("final");
    let capture = data.join("val").join("0000");
    let infer = |tag: &str, frames: &str| {
        let p = |n: &str| dir.path().join(format!("{tag}_{n}.ply"));
        let o = run(&[
            "infer",
            "--ckpt",
            s(&ckpt),
            "--capture",
            s(&capture),
            "--frames",
            frames,
            "--out-coarse",
            s(&p("coarse")),
            "--out-fine",
            s(&p("fine")),
            "--out-mesh",
            s(&p("mesh")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("mesh: 162 vertices, 320 faces"), "{}", stdout(&o));
        ["coarse", "fine", "mesh"].map(|n| fs::read(p(n)).unwrap())
    };
    let a = infer("a", "0,3");
    let b = infer("b", "0,3");
    assert_eq!(a, b);
    assert_eq!(read_ply(&dir.path().join("a_coarse.ply")).unwrap().vertices.len(), 12);
    assert_eq!(read_ply(&dir.path().join("a_fine.ply")).unwrap().vertices.len(), 162);
    infer("single", "5");

    let fused = dir.path().join("fused.ply");
    let o = run(&["fuse", "--capture", s(&capture), "--frames", "0,1", "--out", s(&fused)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "infer", "--ckpt", s(&ckpt), "--input", s(&fused), "--out-coarse", s(&dir.path().join("c.ply")),
        "--out-fine", s(&dir.path().join("f.ply")), "--out-mesh", s(&dir.path().join("m.ply")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
