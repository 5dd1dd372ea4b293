//! C ABI over the `recformer` library.
//!
//! Objects are opaque handles created by `rf_*_load` / `rf_*_generate` /
//! `rf_run_train` and released with the matching `rf_*_free`. Every
//! fallible call returns an [`RfStatus`]; on failure the message is available
//! from [`rf_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use recformer::cluster_eval::{evaluate, Metrics};
use recformer::data::{
    generate_mask, generate_paired_mask, load_dataset, read_mask, synth_dataset, write_mask, MaskMatrix,
    MultiViewDataset, SynthConfig,
};
use recformer::model::ModelConfig;
use recformer::training::{run_pipeline, RunArtifacts, TrainConfig};
use recformer::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    InvalidMask = 6,
    Config = 7,
    Infeasible = 8,
    /// Training produced a non-finite loss.
    Numeric = 9,
    /// Caller buffer too small; the required length was written back.
    BufferTooSmall = 10,
    Internal = 11,
}

/// Loaded or generated multi-view dataset.
pub struct RfDataset(MultiViewDataset);

/// Availability mask, `n × m`.
pub struct RfMask(MaskMatrix);

/// Finished training run.
pub struct RfRun(RunArtifacts);

/// Hyperparameters for [`rf_run_train`]. Start from
/// [`rf_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfTrainOptions {
    pub lr: f64,
    pub beta: f64,
    pub k_neighbors: usize,
    pub e1: usize,
    pub e2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
    pub reinit_stage2: bool,
    /// 0 takes the class count from the dataset.
    pub clusters: usize,
    pub d_e: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub residual: bool,
    pub ln_eps: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RfMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub purity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Shape { .. } | Error::Rank(_) => RfStatus::Shape,
        Error::InvalidMask(_) => RfStatus::InvalidMask,
        Error::Range(_) | Error::InvalidBatch(_) | Error::Protocol(_) => RfStatus::InvalidArgument,
        Error::Infeasible(_) | Error::Generation(_) => RfStatus::Infeasible,
        Error::Config(_) => RfStatus::Config,
        Error::Parse { .. } | Error::Json { .. } => RfStatus::Parse,
        Error::Io { .. } => RfStatus::Io,
        Error::NonFinite { .. } => RfStatus::Numeric,
        Error::Sequencing(_) | Error::Optimizer(_) => RfStatus::Internal,
    }
}

struct Fail(RfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfStatus::NullArgument, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            RfStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(RfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory (`meta.json`, `view_<v>.csv`, optional
/// `labels.csv`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_load(path: *const c_char, out: *mut *mut RfDataset) -> RfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(RfDataset(load_dataset(&path)?));
        Ok(())
    })
}

/// Planted-cluster dataset with `m` views of widths `dims[0..m]`.
///
/// # Safety
/// `dims` must point to `m` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_synth(
    n: usize,
    classes: usize,
    dims: *const usize,
    m: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut RfDataset,
) -> RfStatus {
    guard(|| {
        let dims = slice_arg(dims, m, "dims")?.to_vec();
        let out = out_arg(out, "out")?;
        let ds = synth_dataset(&SynthConfig {
            n,
            classes,
            dims,
            noise,
            seed,
        })?;
        *out = boxed(RfDataset(ds));
        Ok(())
    })
}

/// Sample count.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_n(ds: *const RfDataset, out: *mut usize) -> RfStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.0.n();
        Ok(())
    })
}

/// View count.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_m(ds: *const RfDataset, out: *mut usize) -> RfStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.0.m();
        Ok(())
    })
}

/// Width of view `v` (zero-based).
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_dim(ds: *const RfDataset, v: usize, out: *mut usize) -> RfStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let out = out_arg(out, "out")?;
        *out = *ds
            .dims()
            .get(v)
            .ok_or_else(|| Fail(RfStatus::InvalidArgument, format!("view {v} out of range (m = {})", ds.m())))?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_free(ds: *mut RfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Removes `round(rate · n)` rows from every view, keeping at least one
/// view per sample.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_generate(n: usize, m: usize, rate: f64, seed: u64, out: *mut *mut RfMask) -> RfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(RfMask(generate_mask(n, m, rate, seed)?));
        Ok(())
    })
}

/// Two-view mask where a `paired_rate` fraction of samples keeps both views.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_generate_paired(
    n: usize,
    paired_rate: f64,
    seed: u64,
    out: *mut *mut RfMask,
) -> RfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(RfMask(generate_paired_mask(n, 2, paired_rate, seed)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_load(path: *const c_char, out: *mut *mut RfMask) -> RfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(RfMask(read_mask(&path)?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_save(mask: *const RfMask, path: *const c_char) -> RfStatus {
    guard(|| {
        let mask = ref_arg(mask, "mask")?;
        write_mask(&path_arg(path, "path")?, &mask.0)?;
        Ok(())
    })
}

/// Writes 1 if view `v` of sample `i` is available, else 0.
///
/// # Safety
/// `mask` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_get(mask: *const RfMask, i: usize, v: usize, out: *mut u8) -> RfStatus {
    guard(|| {
        let mask = &ref_arg(mask, "mask")?.0;
        let out = out_arg(out, "out")?;
        if i >= mask.n() || v >= mask.m() {
            return Err(Fail(
                RfStatus::InvalidArgument,
                format!("({i}, {v}) outside {} x {} mask", mask.n(), mask.m()),
            ));
        }
        *out = mask.get(i, v) as u8;
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_free(mask: *mut RfMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Library defaults.
#[no_mangle]
pub extern "C" fn rf_train_options_default() -> RfTrainOptions {
    let t = TrainConfig::default();
    let m = ModelConfig::new(Vec::new());
    RfTrainOptions {
        lr: t.lr,
        beta: t.beta,
        k_neighbors: t.k_neighbors,
        e1: t.e1,
        e2: t.e2,
        batch_size: t.batch_size,
        seed: t.seed,
        kmeans_restarts: t.kmeans_restarts,
        reinit_stage2: t.reinit_stage2,
        clusters: 0,
        d_e: m.d_e,
        heads: m.heads,
        layers: m.layers,
        mlp_hidden: m.mlp_hidden,
        residual: m.residual,
        ln_eps: m.ln_eps,
    }
}

/// Runs both training stages and k-means.
///
/// # Safety
/// `ds`, `mask` and `opts` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_run_train(
    ds: *const RfDataset,
    mask: *const RfMask,
    opts: *const RfTrainOptions,
    out: *mut *mut RfRun,
) -> RfStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let mask = &ref_arg(mask, "mask")?.0;
        let o = ref_arg(opts, "options")?;
        let out = out_arg(out, "out")?;
        let train = TrainConfig {
            lr: o.lr,
            beta: o.beta,
            k_neighbors: o.k_neighbors,
            e1: o.e1,
            e2: o.e2,
            batch_size: o.batch_size,
            seed: o.seed,
            kmeans_restarts: o.kmeans_restarts,
            reinit_stage2: o.reinit_stage2,
            clusters: (o.clusters > 0).then_some(o.clusters),
        };
        let model = ModelConfig {
            d_e: o.d_e,
            heads: o.heads,
            layers: o.layers,
            mlp_hidden: o.mlp_hidden,
            residual: o.residual,
            ln_eps: o.ln_eps,
            ..ModelConfig::new(ds.dims())
        };
        *out = boxed(RfRun(run_pipeline(ds, mask, &model, &train)?));
        Ok(())
    })
}

/// Copies the `n` cluster ids into `buf`. When `cap < n` nothing is copied,
/// `*len` receives `n` and the call returns `BufferTooSmall`.
///
/// # Safety
/// `run` must be live, `buf` must hold `cap` values, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_run_predictions(run: *const RfRun, buf: *mut usize, cap: usize, len: *mut usize) -> RfStatus {
    guard(|| {
        let labels = &ref_arg(run, "run")?.0.clusters.labels;
        copy_out(labels, buf, cap, len, "predictions")
    })
}

/// Copies the row-major `n × d_e` fused representation into `buf`, with the
/// same size protocol as [`rf_run_predictions`].
///
/// # Safety
/// `run` must be live, `buf` must hold `cap` values, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_run_embeddings(run: *const RfRun, buf: *mut f64, cap: usize, len: *mut usize) -> RfStatus {
    guard(|| {
        let z = ref_arg(run, "run")?.0.fused.data();
        copy_out(z, buf, cap, len, "embeddings")
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, len: *mut usize, what: &str) -> Result<(), Fail> {
    let len = out_arg(len, "len")?;
    *len = src.len();
    if cap < src.len() {
        return Err(Fail(
            RfStatus::BufferTooSmall,
            format!("{what} need {} slots, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Metrics of the run. Writes 0 to `*has_labels` (and leaves `out`
/// untouched) when the dataset had no labels.
///
/// # Safety
/// `run` must be live; `out` and `has_labels` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_run_metrics(run: *const RfRun, out: *mut RfMetrics, has_labels: *mut u8) -> RfStatus {
    guard(|| {
        let run = &ref_arg(run, "run")?.0;
        let out = out_arg(out, "out")?;
        let has = out_arg(has_labels, "has_labels")?;
        *has = run.metrics.is_some() as u8;
        if let Some(m) = run.metrics {
            *out = to_c(m);
        }
        Ok(())
    })
}

fn to_c(m: Metrics) -> RfMetrics {
    RfMetrics {
        acc: m.acc,
        nmi: m.nmi,
        purity: m.purity,
    }
}

/// Writes the full run directory.
///
/// # Safety
/// `run` must be live and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rf_run_write(run: *const RfRun, dir: *const c_char) -> RfStatus {
    guard(|| {
        let run = &ref_arg(run, "run")?.0;
        run.write(&path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rf_run_free(run: *mut RfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// ACC, NMI and purity of `pred` against `truth`, both of length `n`.
///
/// # Safety
/// `pred` and `truth` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluate(pred: *const usize, truth: *const usize, n: usize, out: *mut RfMetrics) -> RfStatus {
    guard(|| {
        let pred = slice_arg(pred, n, "pred")?;
        let truth = slice_arg(truth, n, "truth")?;
        let out = out_arg(out, "out")?;
        *out = to_c(evaluate(pred, truth)?);
        Ok(())
    })
}
