//! C ABI for the idmix engine.
//!
//! Every function returns an [`IdmixStatus`]. On failure the message is kept
//! per thread and can be read with [`idmix_last_error_message`]. Handles are
//! opaque; free them with the matching `*_free` function.
//!
//! Pointer arguments must be null or valid for the access the function
//! documents. String arguments are NUL-terminated UTF-8. Handles must come
//! from this library and must not be used after they are freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use idmix_core::graph::{sbm_generate, FeatureMode};
use idmix_core::io::{load_node_dataset, load_params, load_tu_dataset, save_params, NodeDataset, RunConfig};
use idmix_core::numcore::Rng;
use idmix_core::pipeline::{
    embed, gradient_check, kfold_graph_probe, linear_probe, pretrain, Dataset, ModelParams, Split,
};
use idmix_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdmixStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Schema = 4,
    Numeric = 5,
    Dimension = 6,
    State = 7,
    Degenerate = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for IdmixStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => IdmixStatus::Config,
            Error::Schema(_) | Error::SchemaAt { .. } => IdmixStatus::Schema,
            Error::Numeric(_) => IdmixStatus::Numeric,
            Error::Dimension { .. } => IdmixStatus::Dimension,
            Error::State(_) => IdmixStatus::State,
            Error::DegenerateBatch(_) | Error::DegenerateLabels(_) => IdmixStatus::Degenerate,
            Error::Io { .. } => IdmixStatus::Io,
        }
    }
}

/// A loaded or generated dataset.
pub struct IdmixDataset(Dataset);

/// Trained encoder and projection head.
pub struct IdmixModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(IdmixStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(IdmixStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IdmixStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IdmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            IdmixStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IdmixStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(IdmixStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

fn run_config(config_toml: *const c_char) -> Result<RunConfig, Fail> {
    let text = if config_toml.is_null() {
        ""
    } else {
        unsafe { str_arg(config_toml, "config_toml")? }
    };
    Ok(RunConfig::from_toml(text, &[])?)
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length excluding the terminator. `buf` may be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn idmix_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn idmix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a node-classification dataset directory.
#[no_mangle]
pub unsafe extern "C" fn idmix_dataset_load_node(dir: *const c_char, out: *mut *mut IdmixDataset) -> IdmixStatus {
    guard(|| {
        let dir = PathBuf::from(unsafe { str_arg(dir, "dir")? });
        let out = unsafe { out_arg(out, "out")? };
        let NodeDataset { graph, split } = load_node_dataset(&dir)?;
        *out = Box::into_raw(Box::new(IdmixDataset(Dataset::Node { graph, split })));
        Ok(())
    })
}

/// Loads a graph-classification dataset in TU format.
#[no_mangle]
pub unsafe extern "C" fn idmix_dataset_load_tu(dir: *const c_char, out: *mut *mut IdmixDataset) -> IdmixStatus {
    guard(|| {
        let dir = PathBuf::from(unsafe { str_arg(dir, "dir")? });
        let out = unsafe { out_arg(out, "out")? };
        *out = Box::into_raw(Box::new(IdmixDataset(Dataset::Graphs(load_tu_dataset(&dir)?))));
        Ok(())
    })
}

/// Generates a stochastic block model node dataset with noisy one-hot block
/// features and a stratified split.
#[no_mangle]
pub unsafe extern "C" fn idmix_dataset_sbm(
    block_sizes: *const usize,
    num_blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
    out: *mut *mut IdmixDataset,
) -> IdmixStatus {
    guard(|| {
        if block_sizes.is_null() {
            return Err(null("block_sizes"));
        }
        let out = unsafe { out_arg(out, "out")? };
        let blocks = unsafe { std::slice::from_raw_parts(block_sizes, num_blocks) };
        if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 {
            return Err(Fail(
                IdmixStatus::Config,
                "split fractions must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        let root = Rng::new(seed);
        let graph = sbm_generate(
            blocks,
            p_in,
            p_out,
            FeatureMode::OnehotBlockNoisy,
            &mut root.split("graph"),
        )?;
        let labels = graph.node_labels().expect("generator labels nodes").to_vec();
        let split = Split::stratified(&labels, train_frac, val_frac, &mut root.split("split"));
        *out = Box::into_raw(Box::new(IdmixDataset(Dataset::Node { graph, split })));
        Ok(())
    })
}

/// Number of embedding rows: nodes for node datasets, graphs otherwise.
#[no_mangle]
pub unsafe extern "C" fn idmix_dataset_num_rows(ds: *const IdmixDataset, out: *mut usize) -> IdmixStatus {
    guard(|| {
        let ds = unsafe { ref_arg(ds, "dataset")? };
        let out = unsafe { out_arg(out, "out")? };
        *out = match &ds.0 {
            Dataset::Node { graph, .. } => graph.n(),
            Dataset::Graphs(gs) => gs.len(),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn idmix_dataset_free(ds: *mut IdmixDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Pretrains a model. `config_toml` is a run configuration in TOML; null
/// means all defaults. Only its `train` table is used. `final_loss` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn idmix_pretrain(
    ds: *const IdmixDataset,
    config_toml: *const c_char,
    out: *mut *mut IdmixModel,
    final_loss: *mut f64,
) -> IdmixStatus {
    guard(|| {
        let ds = unsafe { ref_arg(ds, "dataset")? };
        let out = unsafe { out_arg(out, "out")? };
        let cfg = run_config(config_toml)?;
        let (params, trace) = pretrain(&ds.0, &cfg.train)?;
        if let (Some(loss), Some(last)) = (unsafe { final_loss.as_mut() }, trace.records.last()) {
            *loss = last.loss;
        }
        *out = Box::into_raw(Box::new(IdmixModel(params)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn idmix_model_embedding_dim(model: *const IdmixModel, out: *mut usize) -> IdmixStatus {
    guard(|| {
        let model = unsafe { ref_arg(model, "model")? };
        *unsafe { out_arg(out, "out")? } = model.0.encoder.output_width();
        Ok(())
    })
}

/// Writes the row-major embedding matrix into `buf`, which must hold
/// `rows * cols` doubles. On `BUFFER_TOO_SMALL` the required shape is still
/// stored in `rows` and `cols`.
#[no_mangle]
pub unsafe extern "C" fn idmix_embed(
    model: *const IdmixModel,
    ds: *const IdmixDataset,
    buf: *mut f64,
    len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> IdmixStatus {
    guard(|| {
        let model = unsafe { ref_arg(model, "model")? };
        let ds = unsafe { ref_arg(ds, "dataset")? };
        let rows = unsafe { out_arg(rows, "rows")? };
        let cols = unsafe { out_arg(cols, "cols")? };
        let h = embed(&ds.0, &model.0)?;
        (*rows, *cols) = h.shape();
        let data = h.data();
        if len < data.len() {
            return Err(Fail(
                IdmixStatus::BufferTooSmall,
                format!("embedding needs {} doubles, buffer holds {len}", data.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        unsafe { ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len()) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn idmix_model_save(model: *const IdmixModel, path: *const c_char) -> IdmixStatus {
    guard(|| {
        let model = unsafe { ref_arg(model, "model")? };
        let path = PathBuf::from(unsafe { str_arg(path, "path")? });
        Ok(save_params(&path, &model.0)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn idmix_model_load(path: *const c_char, out: *mut *mut IdmixModel) -> IdmixStatus {
    guard(|| {
        let path = PathBuf::from(unsafe { str_arg(path, "path")? });
        let out = unsafe { out_arg(out, "out")? };
        *out = Box::into_raw(Box::new(IdmixModel(load_params(&path)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn idmix_model_free(model: *mut IdmixModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Linear-probe accuracy of the frozen embeddings. Node datasets use their
/// split; graph datasets use stratified k-fold. Probe settings and the seed
/// come from `config_toml` (null for defaults).
#[no_mangle]
pub unsafe extern "C" fn idmix_probe(
    model: *const IdmixModel,
    ds: *const IdmixDataset,
    config_toml: *const c_char,
    accuracy_mean: *mut f64,
    accuracy_std: *mut f64,
) -> IdmixStatus {
    guard(|| {
        let model = unsafe { ref_arg(model, "model")? };
        let ds = unsafe { ref_arg(ds, "dataset")? };
        let mean = unsafe { out_arg(accuracy_mean, "accuracy_mean")? };
        let std = unsafe { out_arg(accuracy_std, "accuracy_std")? };
        let cfg = run_config(config_toml)?;
        let h = embed(&ds.0, &model.0)?;
        let labels = ds.0.labels()?;
        let rng = Rng::new(cfg.train.seed).split("probe");
        let p = &cfg.probe;
        let report = match &ds.0 {
            Dataset::Node { split, .. } => linear_probe(&h, &labels, split, p.l2, p.runs, &rng)?,
            Dataset::Graphs(_) => kfold_graph_probe(&h, &labels, p.folds, p.cv_runs, p.l2, &rng)?,
        };
        (*mean, *std) = (report.accuracy_mean, report.accuracy_std);
        Ok(())
    })
}

/// Finite-difference check of one full training step on a small synthetic
/// problem. Stores the largest relative gradient error.
#[no_mangle]
pub unsafe extern "C" fn idmix_gradcheck(seed: u64, eps: f64, max_rel_error: *mut f64) -> IdmixStatus {
    guard(|| {
        let out = unsafe { out_arg(max_rel_error, "max_rel_error")? };
        *out = gradient_check(seed, eps)?.max_rel_error;
        Ok(())
    })
}
