use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

use hgtree::config::{env_overrides, RunConfig};
use hgtree::mesh::{export_mesh, TriMesh};
use hgtree::model::Variant;
use hgtree::tree::*;
use hgtree::Error;

const BIN: &str = env!("CARGO_BIN_EXE_hgtree");

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN).current_dir(dir).args(args).env("HGTREE_LOG", "warn").output().unwrap()
}

fn vertical(r0: f64, r1: f64) -> TreeSkeleton {
    TreeSkeleton::new(vec![Branch::new(BranchPoint::new(0.0, 0.0, 0.0, r0), BranchPoint::new(0.0, 0.0, 1.0, r1)).unwrap()])
}

#[test]
fn one_branch_eight_sides_gives_16_and_16() {
    let m = export_mesh(&vertical(0.1, 0.1), 8).unwrap();
    assert_eq!((m.vertices.len(), m.triangles.len()), (16, 16));
    for v in &m.vertices {
        assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - 0.1).abs() < 1e-12);
    }
    assert!(export_mesh(&vertical(0.1, 0.1), 2).is_err());
}

#[test]
fn counts_scale_with_branches_and_zero_length_is_skipped() {
    let trees = generate_corpus(&ProceduralParams::elm(0), 0, 3, 200).unwrap();
    for t in &trees {
        for s in [3, 5, 12] {
            let m = export_mesh(t, s).unwrap();
            assert_eq!(m.vertices.len(), 2 * t.len() * s);
            assert_eq!(m.triangles.len(), 2 * t.len() * s);
        }
    }
    let mut t = vertical(0.1, 0.05);
    let p = BranchPoint::new(0.0, 0.0, 1.0, 0.05);
    t.branches.push(Branch { s: p, t: p });
    let m = export_mesh(&t, 8).unwrap();
    assert_eq!((m.vertices.len(), m.skipped), (16, 1));
}

/// Re-imports the OBJ and checks each tube: every side edge is shared by
/// exactly two triangles with opposite orientation, ring edges by one, and
/// face normals point away from the axis.
#[test]
fn exported_tubes_have_closed_rings_and_consistent_winding() {
    let t = generate_corpus(&ProceduralParams::sapling(2), 0, 1, 40).unwrap().remove(0);
    let sides = 7;
    let m = TriMesh::from_obj(&export_mesh(&t, sides).unwrap().to_obj()).unwrap();
    assert_eq!(m.triangles.len(), 2 * sides * t.len());
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &m.triangles {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&(a, b), &n) in &directed {
        assert_eq!(n, 1, "directed edge {a}->{b} repeated");
        let reverse = directed.contains_key(&(b, a));
        let same_ring = a / sides == b / sides;
        // Ring edges are boundary edges of an open tube; all others are interior.
        assert_eq!(reverse, !same_ring, "edge {a}->{b}");
    }
    for (i, b) in t.branches.iter().enumerate() {
        let (s, e) = (b.s.pos(), b.t.pos());
        let axis: Vec<f64> = (0..3).map(|k| e[k] - s[k]).collect();
        for f in &m.triangles[2 * sides * i..2 * sides * (i + 1)] {
            let [p, q, r] = f.map(|j| m.vertices[j]);
            let u: Vec<f64> = (0..3).map(|k| q[k] - p[k]).collect();
            let w: Vec<f64> = (0..3).map(|k| r[k] - p[k]).collect();
            let n = [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]];
            let c: Vec<f64> = (0..3).map(|k| (p[k] + q[k] + r[k]) / 3.0 - s[k]).collect();
            let along = (0..3).map(|k| c[k] * axis[k]).sum::<f64>() / (0..3).map(|k| axis[k] * axis[k]).sum::<f64>();
            let radial: Vec<f64> = (0..3).map(|k| c[k] - along * axis[k]).collect();
            assert!((0..3).map(|k| n[k] * radial[k]).sum::<f64>() > 0.0, "inward face in branch {i}");
        }
    }
}

#[test]
fn config_file_then_overrides() {
    let text = "ordering = \"bfs\"\n[model]\nvariant = \"HG2R\"\ndim = 64\n[train]\nepochs = 7\n";
    let c = RunConfig::from_parts(Some(text), &[("train.epochs".into(), "9".into()), ("model.variant".into(), "PT".into())])
        .unwrap();
    assert_eq!(c.train.epochs, 9);
    assert_eq!(c.model.variant, Variant::Pt);
    assert_eq!(c.model.dim, 64);
    assert_eq!(c.ordering, hgtree::ordering::OrderStrategy::Bfs);
    let back = RunConfig::from_parts(Some(&c.to_toml()), &[]).unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_errors_name_the_field() {
    let e = RunConfig::from_parts(Some("[train]\nepoch = 3\n"), &[]).unwrap_err();
    assert!(matches!(&e, Error::Usage(m) if m.contains("train.epoch")), "{e}");
    let e = RunConfig::from_parts(None, &[("model.dim".into(), "abc".into())]).unwrap_err();
    assert!(e.to_string().contains("dim"), "{e}");
    assert!(RunConfig::from_parts(None, &[("train.warmup_epochs".into(), "100".into())]).is_err());
}

#[test]
fn environment_overrides_map_to_dotted_keys() {
    let vars = [("HGTREE_TRAIN__EPOCHS", "3"), ("PATH", "/bin"), ("HGTREE_SAMPLER__TOP_K", "5"), ("HGTREE_LOG", "x")];
    let o = env_overrides(vars.iter().map(|(a, b)| (a.to_string(), b.to_string())));
    assert_eq!(o, vec![("sampler.top_k".into(), "5".into()), ("train.epochs".into(), "3".into())]);
}

#[test]
fn gen_data_is_deterministic_and_writes_manifest() {
    let d = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let o = run(d.path(), &["gen-data", "--out", name, "--seed", "1", "--count", "20", "--profile", "sapling"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(d.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(read_tree_dataset(&d.path().join("a.jsonl")).unwrap().len(), 20);
    let man: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(man["seeds"]["data"], 1);
    assert_eq!(man["artifacts"]["a.jsonl"], hgtree::io::sha256_hex(&a));
    assert_eq!(man["config"]["data"]["count"], 20);
}

#[test]
fn exit_codes_by_error_family() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["sample", "--out", "x", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["sample", "--out", "x", "--checkpoint", "missing.bin"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["--set", "train.nope=1", "gen-data", "--out", "x"]).status.code(), Some(2));
    std::fs::write(d.path().join("bad.bin"), b"not a checkpoint").unwrap();
    assert_eq!(run(d.path(), &["sample", "--out", "x", "--checkpoint", "bad.bin"]).status.code(), Some(4));
}

#[test]
fn small_pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let ok = |args: &[&str]| {
        let o = run(d.path(), args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    ok(&["gen-data", "--out", "c.jsonl", "--profile", "sapling", "--count", "6", "--n-max", "20"]);
    ok(&["fit-quantizer", "--corpus", "c.jsonl", "--out", "q.txt"]);
    let model = ["--set", "model.dim=16", "--set", "model.heads=2", "--set", "model.layers=5", "--set", "model.context=176"];
    let mut args: Vec<&str> = model.to_vec();
    args.extend(["--set", "train.epochs=2", "--set", "train.warmup_epochs=1", "train", "--corpus", "c.jsonl"]);
    args.extend(["--quantizer", "q.txt", "--out-dir", "run"]);
    ok(&args);
    assert_eq!(std::fs::read(d.path().join("q.txt")).unwrap(), std::fs::read(d.path().join("run/quantizer.txt")).unwrap());
    ok(&["sample", "--checkpoint", "run/checkpoint.bin", "--count", "2", "--out", "s.jsonl", "--obj-dir", "objs"]);
    ok(&["complete", "--checkpoint", "run/checkpoint.bin", "--prompt", "c.jsonl", "--keep", "2", "--count", "2", "--out", "k.jsonl"]);
    for t in read_tree_dataset(&d.path().join("k.jsonl")).unwrap() {
        assert!(t.len() >= 2);
    }
    let report = ok(&["eval", "--generated", "s.jsonl", "--reference", "c.jsonl", "--train", "c.jsonl", "--quantizer", "q.txt", "--out", "e.csv"]);
    assert!(report.contains("mmd_cd"));
    assert!(std::fs::read_to_string(d.path().join("e.csv")).unwrap().starts_with("connect,novel,unique"));
    ok(&["export-mesh", "--input", "c.jsonl", "--sides", "5", "--out-dir", "meshes"]);
    assert!(d.path().join("meshes/tree_00005.obj").exists());
    assert!(d.path().join("meshes/manifest.json").exists());
}

#[test]
fn bench_reports_each_variant() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["bench", "--variants", "pt,hg2", "--context", "128", "--layers", "6", "--dim", "16", "--steps", "1", "--out", "b.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<hgtree::bench::BenchResult> = serde_json::from_slice(&std::fs::read(d.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].variant, "PT");
    assert!(rows.iter().all(|r| r.peak_rss_bytes.is_some() && r.step_seconds > 0.0));
}
