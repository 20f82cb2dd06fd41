//! C ABI over the hgtree library: load a checkpoint, sample trees, read
//! branch values, compare trees and write meshes.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an [`HgtStatus`];
//! the message of the last failure on the calling thread is available from
//! [`hgt_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hgtree::generation::{sample_unconditional, SamplerConfig};
use hgtree::metrics::chamfer;
use hgtree::mesh::export_mesh;
use hgtree::model::HourglassModel;
use hgtree::tensor::Checkpoint;
use hgtree::training::{load_checkpoint, SequenceSpec};
use hgtree::tree::{sample_point_cloud, Branch, TreeSkeleton};
use hgtree::Error;

/// Result codes; zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Generation = 5,
    Internal = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A loaded model with its tokenizer settings.
pub struct HgtModel {
    model: HourglassModel<f32>,
    spec: SequenceSpec,
}

/// An owned tree skeleton.
pub struct HgtTree {
    tree: TreeSkeleton,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> HgtStatus {
    match e {
        Error::Usage(_) | Error::InvalidParams(_) | Error::InvalidSchedule(_) | Error::Shape { .. } => {
            HgtStatus::InvalidArgument
        }
        Error::Io(_) => HgtStatus::Io,
        Error::Format(_) => HgtStatus::Format,
        Error::EmptyGeneration | Error::MalformedGrowth { .. } | Error::Capacity(_) => HgtStatus::Generation,
        Error::NonFinite(_) | Error::EmptyLoss => HgtStatus::Numeric,
        _ => HgtStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic for [`hgt_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (HgtStatus, String)>) -> HgtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgtStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside hgtree".into());
            HgtStatus::Panic
        }
    }
}

fn lib(e: Error) -> (HgtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HgtStatus, String) {
    (HgtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (HgtStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HgtStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hgt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hgt_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Loads a checkpoint written by `hgtree train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hgt_model_load(path: *const c_char, out: *mut *mut HgtModel) -> HgtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let ck = Checkpoint::<f32>::load(&path).map_err(lib)?;
        let (model, spec, _) = load_checkpoint(ck).map_err(lib)?;
        *out = Box::into_raw(Box::new(HgtModel { model, spec }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`hgt_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hgt_model_free(model: *mut HgtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_model_num_params(model: *const HgtModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_params())
}

/// Samples one tree. `temperature` 0 decodes greedily; `top_k` 0 disables
/// the top-k filter.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hgt_sample(
    model: *const HgtModel,
    seed: u64,
    temperature: f64,
    top_k: usize,
    out: *mut *mut HgtTree,
) -> HgtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SamplerConfig { seed, temperature, top_k, ..Default::default() };
        let s = sample_unconditional(&m.model, &cfg).map_err(lib)?;
        let tree = s.to_tree(&m.spec).map_err(lib)?;
        *out = Box::into_raw(Box::new(HgtTree { tree }));
        Ok(())
    })
}

/// Builds a tree from `n_branches * 8` values laid out per branch as
/// `s.x s.y s.z s.r t.x t.y t.z t.r`.
///
/// # Safety
/// `values` must be valid for `n_branches * 8` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hgt_tree_from_values(
    values: *const f64,
    n_branches: usize,
    out: *mut *mut HgtTree,
) -> HgtStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return Err(null("values or out"));
        }
        let v = std::slice::from_raw_parts(values, n_branches * 8);
        let tree = TreeSkeleton::from_flat_values(v).map_err(lib)?;
        for b in &tree.branches {
            Branch::validate(b).map_err(lib)?;
        }
        *out = Box::into_raw(Box::new(HgtTree { tree }));
        Ok(())
    })
}

/// Branch count, or 0 for a null handle.
///
/// # Safety
/// `tree` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hgt_tree_len(tree: *const HgtTree) -> usize {
    tree.as_ref().map_or(0, |t| t.tree.len())
}

/// Copies the tree's `8 * len` values into `buf`.
///
/// # Safety
/// `tree` must be a live handle; `buf` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn hgt_tree_values(tree: *const HgtTree, buf: *mut f64, cap: usize) -> HgtStatus {
    guard(|| {
        let t = tree.as_ref().ok_or_else(|| null("tree"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = t.tree.flat_values();
        if v.len() > cap {
            return Err((HgtStatus::BufferTooSmall, format!("need {} values, have room for {cap}", v.len())));
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// # Safety
/// `tree` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hgt_tree_free(tree: *mut HgtTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Chamfer distance between `n_points` surface samples of each tree.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hgt_chamfer(
    a: *const HgtTree,
    b: *const HgtTree,
    n_points: usize,
    seed: u64,
    out: *mut f64,
) -> HgtStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        if n_points == 0 {
            return Err((HgtStatus::InvalidArgument, "n_points must be positive".into()));
        }
        let pa = sample_point_cloud(&a.tree, n_points, seed);
        let pb = sample_point_cloud(&b.tree, n_points, seed.wrapping_add(1));
        *out = chamfer(&pa, &pb).map_err(lib)?;
        Ok(())
    })
}

/// Writes the tree as an OBJ tube mesh with `sides` segments per ring.
///
/// # Safety
/// `tree` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hgt_export_obj(tree: *const HgtTree, sides: usize, path: *const c_char) -> HgtStatus {
    guard(|| {
        let t = tree.as_ref().ok_or_else(|| null("tree"))?;
        let path = path_arg(path)?;
        let mesh = export_mesh(&t.tree, sides).map_err(lib)?;
        hgtree::io::write_atomic(&path, mesh.to_obj().as_bytes()).map_err(lib)
    })
}
