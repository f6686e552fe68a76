//! C ABI over the dataset, embedding and model artifacts.
//!
//! Handles are opaque and owned by the caller once returned; release each
//! with its `_free` function. Every entry point returns a [`DgStatus`];
//! on failure [`dg_last_error`] describes the problem for the calling
//! thread. Matrices are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use domgen::adaptive::{adaptive_logits, argmax, ModelCheckpoint};
use domgen::benchgen::{load_external_dataset, BenchmarkSplit};
use domgen::evalharness::TrainedSystem;
use domgen::numcore::{checkpoint, Matrix, MlpParams};
use domgen::protoembed::{compute_prototype, domain_membership_probs, DomainPrototype};
use domgen::Error;

/// Result of every call. Values match the command-line exit codes where
/// both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad shapes, malformed files, or otherwise invalid input.
    InvalidInput = 2,
    Io = 3,
    Numeric = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// Which group of domains to query. Passed across the boundary as a
/// plain integer and checked on entry.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// A loaded dataset.
pub struct DgDataset(BenchmarkSplit);

/// A prototypical embedding network.
pub struct DgEmbedder(MlpParams);

/// A trained classifier with the embedder it was trained against.
pub struct DgModel(TrainedSystem);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DgStatus {
    match e {
        Error::Io { .. } => DgStatus::Io,
        Error::Numeric(_) => DgStatus::Numeric,
        _ => DgStatus::InvalidInput,
    }
}

struct Fail(DgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Fail {
    Fail(DgStatus::InvalidInput, msg)
}

/// Run `f`, recording its failure (or panic) as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DgStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn matrix_arg(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("{what} must have at least one row and column")));
    }
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what} size overflows")))?;
    Ok(Matrix::from_vec(rows, cols, std::slice::from_raw_parts(data, len).to_vec())?)
}

unsafe fn out_slice<'a, T>(data: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(invalid(format!("{what} holds {len} values, {need} needed")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, need))
}

unsafe fn put<T>(dst: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null(what));
    }
    dst.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

fn read(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

/// Message of the calling thread's most recent failure, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a JSON-lines dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_load(path: *const c_char, out: *mut *mut DgDataset) -> DgStatus {
    guard(|| {
        let p = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = load_external_dataset(p)?;
        out.write(Box::into_raw(Box::new(DgDataset(ds))));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`dg_dataset_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_free(ds: *mut DgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Input dimension and class count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_dims(ds: *const DgDataset, dim: *mut usize, classes: *mut usize) -> DgStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        put(dim, d.dim, "dim")?;
        put(classes, d.classes, "classes")
    })
}

/// Number of domains in one split (a [`DgSplit`] value).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_dataset_domain_count(ds: *const DgDataset, split: u32, count: *mut usize) -> DgStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        let n = match split {
            s if s == DgSplit::Train as u32 => d.train.len(),
            s if s == DgSplit::Val as u32 => d.val.len(),
            s if s == DgSplit::Test as u32 => d.test.len(),
            s => return Err(invalid(format!("unknown split {s}"))),
        };
        put(count, n, "count")
    })
}

/// Load an embedding checkpoint written by `domgen train-proto`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_embedder_load(path: *const c_char, out: *mut *mut DgEmbedder) -> DgStatus {
    guard(|| {
        let p = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = checkpoint::from_json(&read(p)?)?;
        out.write(Box::into_raw(Box::new(DgEmbedder(net))));
        Ok(())
    })
}

/// # Safety
/// `e` must come from [`dg_embedder_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dg_embedder_free(e: *mut DgEmbedder) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Input dimension and prototype dimension `d_D`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_embedder_dims(e: *const DgEmbedder, input_dim: *mut usize, embed_dim: *mut usize) -> DgStatus {
    guard(|| {
        let net = &handle(e, "embedder")?.0;
        put(input_dim, net.in_dim(), "input_dim")?;
        put(embed_dim, net.out_dim(), "embed_dim")
    })
}

/// Prototype (mean embedding) of `rows` points; writes `d_D` values.
///
/// # Safety
/// `points` must hold `rows * cols` doubles and `mu` at least `mu_len`.
#[no_mangle]
pub unsafe extern "C" fn dg_embedder_prototype(
    e: *const DgEmbedder,
    points: *const f64,
    rows: usize,
    cols: usize,
    mu: *mut f64,
    mu_len: usize,
) -> DgStatus {
    guard(|| {
        let net = &handle(e, "embedder")?.0;
        let x = matrix_arg(points, rows, cols, "points")?;
        let p = compute_prototype(net, &x, "")?;
        out_slice(mu, mu_len, p.mu.len(), "mu")?.copy_from_slice(&p.mu);
        Ok(())
    })
}

/// Domain membership probabilities of each query point against
/// `n_protos` prototypes (row-major, `n_protos × d_D`); writes a
/// `rows × n_protos` matrix.
///
/// # Safety
/// Buffers must hold the sizes stated.
#[no_mangle]
pub unsafe extern "C" fn dg_embedder_membership(
    e: *const DgEmbedder,
    points: *const f64,
    rows: usize,
    cols: usize,
    prototypes: *const f64,
    n_protos: usize,
    probs: *mut f64,
    probs_len: usize,
) -> DgStatus {
    guard(|| {
        let net = &handle(e, "embedder")?.0;
        let x = matrix_arg(points, rows, cols, "points")?;
        let protos = matrix_arg(prototypes, n_protos, net.out_dim(), "prototypes")?;
        let protos: Vec<DomainPrototype> = protos
            .iter_rows()
            .enumerate()
            .map(|(i, r)| DomainPrototype {
                domain_id: i.to_string(),
                mu: r.to_vec(),
                n_points: 1,
            })
            .collect();
        let p = domain_membership_probs(&net.predict(&x)?, &protos)?;
        out_slice(probs, probs_len, p.data().len(), "probs")?.copy_from_slice(p.data());
        Ok(())
    })
}

/// Load a model checkpoint written by `domgen train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_model_load(path: *const c_char, out: *mut *mut DgModel) -> DgStatus {
    guard(|| {
        let p = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sys = TrainedSystem::from_checkpoint(ModelCheckpoint::from_json(&read(p)?)?)?;
        out.write(Box::into_raw(Box::new(DgModel(sys))));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`dg_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dg_model_free(m: *mut DgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Input dimension, prototype dimension (0 for a prototype-free model)
/// and class count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_model_dims(
    m: *const DgModel,
    input_dim: *mut usize,
    embed_dim: *mut usize,
    classes: *mut usize,
) -> DgStatus {
    guard(|| {
        let sys = &handle(m, "model")?.0;
        put(input_dim, sys.model.input_dim(), "input_dim")?;
        put(embed_dim, sys.model.embed_dim, "embed_dim")?;
        put(classes, sys.model.num_classes, "classes")
    })
}

/// Prototype of a domain from `rows` of its points using the model's own
/// embedder. Writes `embed_dim` values (none for a prototype-free model).
///
/// # Safety
/// `points` must hold `rows * cols` doubles and `mu` at least `mu_len`.
#[no_mangle]
pub unsafe extern "C" fn dg_model_prototype(
    m: *const DgModel,
    points: *const f64,
    rows: usize,
    cols: usize,
    mu: *mut f64,
    mu_len: usize,
) -> DgStatus {
    guard(|| {
        let sys = &handle(m, "model")?.0;
        let x = matrix_arg(points, rows, cols, "points")?;
        if x.cols() != sys.model.input_dim() {
            return Err(invalid(format!(
                "points have {} columns, model takes {}",
                x.cols(),
                sys.model.input_dim()
            )));
        }
        let values = match &sys.embedder {
            Some(net) => compute_prototype(net, &x, "")?.mu,
            None => Vec::new(),
        };
        out_slice(mu, mu_len, values.len(), "mu")?.copy_from_slice(&values);
        Ok(())
    })
}

unsafe fn model_logits(
    sys: &TrainedSystem,
    mu: *const f64,
    mu_len: usize,
    x: *const f64,
    rows: usize,
    cols: usize,
) -> Result<Matrix, Fail> {
    if mu_len != sys.model.embed_dim {
        return Err(invalid(format!(
            "prototype has {mu_len} values, model expects {}",
            sys.model.embed_dim
        )));
    }
    let mu = if mu_len == 0 {
        Vec::new()
    } else if mu.is_null() {
        return Err(null("mu"));
    } else {
        std::slice::from_raw_parts(mu, mu_len).to_vec()
    };
    let proto = DomainPrototype {
        domain_id: String::new(),
        mu,
        n_points: 1,
    };
    let x = matrix_arg(x, rows, cols, "x")?;
    Ok(adaptive_logits(&sys.model, &proto, &x)?)
}

/// Class logits for `rows` inputs from a domain with prototype `mu`;
/// writes a `rows × classes` matrix.
///
/// # Safety
/// Buffers must hold the sizes stated.
#[no_mangle]
pub unsafe extern "C" fn dg_model_logits(
    m: *const DgModel,
    mu: *const f64,
    mu_len: usize,
    x: *const f64,
    rows: usize,
    cols: usize,
    logits: *mut f64,
    logits_len: usize,
) -> DgStatus {
    guard(|| {
        let sys = &handle(m, "model")?.0;
        let l = model_logits(sys, mu, mu_len, x, rows, cols)?;
        out_slice(logits, logits_len, l.data().len(), "logits")?.copy_from_slice(l.data());
        Ok(())
    })
}

/// Predicted class of each of `rows` inputs from a domain with
/// prototype `mu`.
///
/// # Safety
/// Buffers must hold the sizes stated.
#[no_mangle]
pub unsafe extern "C" fn dg_model_predict(
    m: *const DgModel,
    mu: *const f64,
    mu_len: usize,
    x: *const f64,
    rows: usize,
    cols: usize,
    labels: *mut usize,
    labels_len: usize,
) -> DgStatus {
    guard(|| {
        let sys = &handle(m, "model")?.0;
        let l = model_logits(sys, mu, mu_len, x, rows, cols)?;
        let out = out_slice(labels, labels_len, rows, "labels")?;
        for (o, r) in out.iter_mut().zip(l.iter_rows()) {
            *o = argmax(r);
        }
        Ok(())
    })
}
