use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hgtree::model::{HourglassModel, ModelConfig, Variant};
use hgtree::ordering::OrderStrategy;
use hgtree::tokenizer::Quantizer;
use hgtree::training::{normalize_corpus, train, Example, SequenceSpec, TrainConfig, TrainOutput, CHECKPOINT_FILE};
use hgtree::tree::{generate_corpus, ProceduralParams};
use hgtree_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        hgt_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn checkpoint(dir: &Path) -> PathBuf {
    let trees = normalize_corpus(&generate_corpus(&ProceduralParams::sapling(0), 0, 4, 20).unwrap()).unwrap();
    let spec = SequenceSpec::new(Quantizer::fit(&trees).unwrap(), OrderStrategy::Dfs, 20);
    let cfg = ModelConfig { variant: Variant::Hg2, dim: 16, heads: 2, layers: 5, mlp_ratio: 2, context: 176, ..ModelConfig::desk() };
    let mut m = HourglassModel::<f32>::new(cfg, 0).unwrap();
    let data: Vec<Example> = trees.into_iter().map(Example::Tree).collect();
    let out = TrainOutput { dir: Some(dir.to_path_buf()), ..Default::default() };
    train(&mut m, &data, &spec, &TrainConfig { epochs: 0, ..Default::default() }, &out).unwrap();
    dir.join(CHECKPOINT_FILE)
}

const TWO: [f64; 16] = [0.0, 0.0, -1.0, 0.1, 0.0, 0.0, 0.0, 0.08, 0.0, 0.0, 0.0, 0.05, 0.5, 0.0, 0.5, 0.03];

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(hgt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn tree_values_round_trip() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(hgt_tree_from_values(TWO.as_ptr(), 2, &mut t), HgtStatus::Ok);
        assert_eq!(hgt_tree_len(t), 2);
        let mut buf = [0.0; 16];
        assert_eq!(hgt_tree_values(t, buf.as_mut_ptr(), 8), HgtStatus::BufferTooSmall);
        assert!(last_error().contains("need 16"));
        assert_eq!(hgt_tree_values(t, buf.as_mut_ptr(), 16), HgtStatus::Ok);
        assert_eq!(buf, TWO);
        let mut d = -1.0;
        assert_eq!(hgt_chamfer(t, t, 64, 3, &mut d), HgtStatus::Ok);
        assert!((0.0..1e-2).contains(&d));
        assert_eq!(hgt_chamfer(t, t, 0, 3, &mut d), HgtStatus::InvalidArgument);
        hgt_tree_free(t);
    }
}

#[test]
fn bad_inputs_give_codes_not_crashes() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(hgt_tree_from_values(ptr::null(), 1, &mut t), HgtStatus::NullPointer);
        let zero = [0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.1];
        assert_ne!(hgt_tree_from_values(zero.as_ptr(), 1, &mut t), HgtStatus::Ok);
        let mut m = ptr::null_mut();
        let p = CString::new("/nonexistent/checkpoint.bin").unwrap();
        assert_eq!(hgt_model_load(p.as_ptr(), &mut m), HgtStatus::Io);
        assert!(m.is_null());
        assert_eq!(hgt_model_num_params(ptr::null()), 0);
        assert_eq!(hgt_sample(ptr::null(), 0, 1.0, 50, &mut t), HgtStatus::NullPointer);
        hgt_model_free(ptr::null_mut());
        hgt_tree_free(ptr::null_mut());
    }
}

#[test]
fn load_sample_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let ck = CString::new(checkpoint(dir.path()).to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(hgt_model_load(ck.as_ptr(), &mut m), HgtStatus::Ok, "{}", last_error());
        assert!(hgt_model_num_params(m) > 0);
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(hgt_sample(m, 7, 0.0, 0, &mut a), HgtStatus::Ok, "{}", last_error());
        assert_eq!(hgt_sample(m, 8, 0.0, 0, &mut b), HgtStatus::Ok);
        let n = hgt_tree_len(a);
        assert!(n >= 1);
        let (mut va, mut vb) = (vec![0.0; 8 * n], vec![0.0; 8 * n]);
        hgt_tree_values(a, va.as_mut_ptr(), va.len());
        hgt_tree_values(b, vb.as_mut_ptr(), vb.len());
        assert_eq!(va, vb, "greedy sampling ignores the seed");
        let obj = dir.path().join("t.obj");
        let p = CString::new(obj.to_str().unwrap()).unwrap();
        assert_eq!(hgt_export_obj(a, 6, p.as_ptr()), HgtStatus::Ok);
        let text = std::fs::read_to_string(&obj).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 12 * n);
        assert_eq!(hgt_export_obj(a, 2, p.as_ptr()), HgtStatus::InvalidArgument);
        hgt_tree_free(a);
        hgt_tree_free(b);
        hgt_model_free(m);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hgtree.h")).unwrap();
    for f in [
        "hgt_version", "hgt_last_error", "hgt_model_load", "hgt_model_free", "hgt_model_num_params", "hgt_sample",
        "hgt_tree_from_values", "hgt_tree_len", "hgt_tree_values", "hgt_tree_free", "hgt_chamfer", "hgt_export_obj",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct HgtModel HgtModel;"));
    assert!(h.contains("HGT_STATUS_OK = 0"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hgtree.h"
int main(void) {
    double v[8] = {0, 0, -1, 0.1, 0, 0, 0, 0.05};
    HgtTree *t = NULL;
    if (hgt_tree_from_values(v, 1, &t) != HGT_STATUS_OK) return 1;
    if (hgt_tree_len(t) != 1) return 2;
    double d = -1;
    if (hgt_chamfer(t, t, 32, 0, &d) != HGT_STATUS_OK || d < 0) return 3;
    HgtModel *m = NULL;
    if (hgt_model_load("/nonexistent", &m) != HGT_STATUS_IO) return 4;
    char buf[128];
    if (hgt_last_error(buf, sizeof buf) == 0 || strlen(buf) == 0) return 5;
    hgt_tree_free(t);
    printf("%s\n", hgt_version());
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // target/<profile>/deps/<test exe> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libhgtree_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
