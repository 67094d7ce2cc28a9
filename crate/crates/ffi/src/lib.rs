//! C ABI over `das_lab`.
//!
//! Every function returns a [`DasStatus`]. On failure the message is kept
//! per thread and can be read with [`das_last_error`]. Datasets and models
//! are opaque handles created by `*_new`/`*_load`/`*_parse` functions and
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use das_lab::data::{load_cifar10_dir, parse_cifar10_file, Dataset, ImageShape, CIFAR_CLASSES, CIFAR_SHAPE};
use das_lab::engine::ExperimentConfig;
use das_lab::nn::{read_checkpoint, write_checkpoint, Checkpoint, ModelSpec, Network};
use das_lab::strategies::{
    das_distance, das_select_one, kcenter_greedy, kcenter_radius, DasOptions, DistanceMode, OutputSource, PoolState,
};
use das_lab::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Structural = 3,
    MalformedFile = 4,
    InvalidLabel = 5,
    PoolExhausted = 6,
    Divergence = 7,
    Io = 8,
    Utf8 = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for DasStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MalformedFile(_) => DasStatus::MalformedFile,
            Error::InvalidLabel { .. } => DasStatus::InvalidLabel,
            Error::Config(_) => DasStatus::InvalidArgument,
            Error::Structural(_) => DasStatus::Structural,
            Error::PoolExhausted(_) => DasStatus::PoolExhausted,
            Error::Divergence { .. } => DasStatus::Divergence,
            Error::Io { .. } => DasStatus::Io,
        }
    }
}

/// A loaded image dataset.
pub struct DasDataset {
    inner: Dataset,
}

/// A network with its optimizer state, if any.
pub struct DasModel {
    net: Network<f32>,
    checkpoint_adam: Option<das_lab::nn::AdamState<f32>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DasStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(DasStatus::from(&e), e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> DasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside das_lab".into());
            DasStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DasStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DasStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(ptr: *const c_char, what: &str) -> FfiResult<String> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure(DasStatus::Utf8, format!("`{what}` is not valid UTF-8")))
}

fn rows(flat: &[f64], len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len).map(|i| flat[i * dim..(i + 1) * dim].to_vec()).collect()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn das_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn das_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Euclidean distance between two vectors of length `len`.
///
/// # Safety
/// `p` and `q` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_distance_f64(p: *const f64, q: *const f64, len: usize, out_distance: *mut f64) -> DasStatus {
    guard(|| {
        let (p, q) = (slice(p, len, "p")?, slice(q, len, "q")?);
        *out(out_distance, "out_distance")? = das_distance(p, q)?;
        Ok(())
    })
}

struct RowTable<'a> {
    values: &'a [f64],
    width: usize,
}

impl OutputSource for RowTable<'_> {
    fn outputs(&self, indices: &[usize]) -> das_lab::Result<Vec<Vec<f64>>> {
        Ok(indices
            .iter()
            .map(|&i| self.values[i * self.width..(i + 1) * self.width].to_vec())
            .collect())
    }
}

/// One dual-sampling pick from precomputed model outputs.
///
/// `outputs1` and `outputs2` hold `rows * classes` values, one row per pool
/// item. With `apply_softmax` nonzero the rows are logits and are
/// normalized first; otherwise they are compared as given. The candidate
/// set is `pool_sample` items drawn from `unlabeled` under `seed`.
///
/// # Safety
/// Array arguments must be readable for the stated lengths and the out
/// pointers writable.
#[no_mangle]
pub unsafe extern "C" fn das_select_one_from_outputs(
    outputs1: *const f64,
    outputs2: *const f64,
    rows: usize,
    classes: usize,
    unlabeled: *const usize,
    unlabeled_len: usize,
    pool_sample: usize,
    apply_softmax: i32,
    seed: u64,
    out_index: *mut usize,
    out_score: *mut f64,
) -> DasStatus {
    guard(|| {
        let len = rows.checked_mul(classes).ok_or_else(|| invalid("rows * classes overflows"))?;
        let (o1, o2) = (slice(outputs1, len, "outputs1")?, slice(outputs2, len, "outputs2")?);
        let unl = slice(unlabeled, unlabeled_len, "unlabeled")?;
        if classes == 0 {
            return Err(invalid("classes must be positive"));
        }
        if let Some(bad) = unl.iter().find(|&&i| i >= rows) {
            return Err(invalid(format!("unlabeled index {bad} outside {rows} rows")));
        }
        let mut is_unl = vec![false; rows];
        for &i in unl {
            is_unl[i] = true;
        }
        let labeled = (0..rows).filter(|&i| !is_unl[i]).collect();
        let pool = PoolState::from_parts(labeled, unl.to_vec())?;
        let opts = DasOptions {
            pool_sample_size: pool_sample,
            distance: if apply_softmax != 0 { DistanceMode::Probabilities } else { DistanceMode::Logits },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m1, m2) = (RowTable { values: o1, width: classes }, RowTable { values: o2, width: classes });
        let (idx, score) = das_select_one(&m1, &m2, &pool, &opts, &mut rng)?;
        *out(out_index, "out_index")? = idx;
        *out(out_score, "out_score")? = score;
        Ok(())
    })
}

/// Greedy farthest-first k-center selection over `points` (`n * dim`
/// values) given existing `centers` (`n_centers * dim`). Writes `k`
/// indices into `out_indices`. With no centers the first pick is point 0.
///
/// # Safety
/// Arrays must be valid for the stated lengths; `out_indices` must hold `k`.
#[no_mangle]
pub unsafe extern "C" fn das_kcenter_greedy(
    points: *const f64,
    n: usize,
    dim: usize,
    centers: *const f64,
    n_centers: usize,
    k: usize,
    out_indices: *mut usize,
) -> DasStatus {
    guard(|| {
        let pts = rows(slice(points, n * dim, "points")?, n, dim);
        let ctr = rows(slice(centers, n_centers * dim, "centers")?, n_centers, dim);
        let picks = kcenter_greedy(&pts, &ctr, k)?;
        slice_mut(out_indices, k, "out_indices")?.copy_from_slice(&picks);
        Ok(())
    })
}

/// Covering radius of `points` by `centers`.
///
/// # Safety
/// Arrays must be valid for the stated lengths; `out_radius` writable.
#[no_mangle]
pub unsafe extern "C" fn das_kcenter_radius(
    points: *const f64,
    n: usize,
    dim: usize,
    centers: *const f64,
    n_centers: usize,
    out_radius: *mut f64,
) -> DasStatus {
    guard(|| {
        let pts = rows(slice(points, n * dim, "points")?, n, dim);
        let ctr = rows(slice(centers, n_centers * dim, "centers")?, n_centers, dim);
        *out(out_radius, "out_radius")? = kcenter_radius(&pts, &ctr)?;
        Ok(())
    })
}

/// Parses one CIFAR-10 binary batch held in memory.
///
/// # Safety
/// `bytes` must be readable for `len` bytes; `out_dataset` writable.
#[no_mangle]
pub unsafe extern "C" fn das_dataset_parse_cifar10(bytes: *const u8, len: usize, out_dataset: *mut *mut DasDataset) -> DasStatus {
    guard(|| {
        let out = out(out_dataset, "out_dataset")?;
        let examples = parse_cifar10_file(slice(bytes, len, "bytes")?)?;
        let inner = Dataset::new(CIFAR_SHAPE, CIFAR_CLASSES, examples)?;
        *out = Box::into_raw(Box::new(DasDataset { inner }));
        Ok(())
    })
}

/// Loads the six CIFAR-10 batch files from a directory.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out_dataset` writable.
#[no_mangle]
pub unsafe extern "C" fn das_dataset_load_cifar10_dir(dir: *const c_char, out_dataset: *mut *mut DasDataset) -> DasStatus {
    guard(|| {
        let out = out(out_dataset, "out_dataset")?;
        let inner = load_cifar10_dir(&PathBuf::from(string(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(DasDataset { inner }));
        Ok(())
    })
}

/// Number of examples.
///
/// # Safety
/// `dataset` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn das_dataset_len(dataset: *const DasDataset, out_len: *mut usize) -> DasStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out(out_len, "out_len")? = d.inner.len();
        Ok(())
    })
}

/// Label and pixels (CHW order, scaled to [0, 1]) of example `index`.
/// `pixels` must hold `pixels_cap` floats, at least one image.
///
/// # Safety
/// `dataset` must be live; out pointers writable for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn das_dataset_example(
    dataset: *const DasDataset,
    index: usize,
    out_label: *mut usize,
    pixels: *mut f32,
    pixels_cap: usize,
) -> DasStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let ex = d
            .inner
            .examples
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} outside {} examples", d.inner.len())))?;
        if pixels_cap < ex.pixels.len() {
            return Err(Failure(
                DasStatus::BufferTooSmall,
                format!("need {} floats, got {pixels_cap}", ex.pixels.len()),
            ));
        }
        *out(out_label, "out_label")? = ex.label;
        slice_mut(pixels, ex.pixels.len(), "pixels")?.copy_from_slice(&ex.pixels);
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn das_dataset_free(dataset: *mut DasDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Creates a freshly initialized model. `spec` is a preset name such as
/// `small-conv` or a full model description.
///
/// # Safety
/// `spec` must be a nul-terminated string; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn das_model_new(
    spec: *const c_char,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
    out_model: *mut *mut DasModel,
) -> DasStatus {
    guard(|| {
        let out = out(out_model, "out_model")?;
        let spec = ModelSpec::resolve(&string(spec, "spec")?, ImageShape::new(channels, height, width), num_classes)?;
        let net = Network::init(spec, seed)?;
        *out = Box::into_raw(Box::new(DasModel { net, checkpoint_adam: None }));
        Ok(())
    })
}

/// Total number of parameters.
///
/// # Safety
/// `model` must be live; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn das_model_param_count(model: *const DasModel, out_count: *mut usize) -> DasStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(out_count, "out_count")? = m.net.params().len();
        Ok(())
    })
}

/// Number of output classes.
///
/// # Safety
/// `model` must be live; `out_classes` writable.
#[no_mangle]
pub unsafe extern "C" fn das_model_num_classes(model: *const DasModel, out_classes: *mut usize) -> DasStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(out_classes, "out_classes")? = m.net.num_classes();
        Ok(())
    })
}

/// Eval-mode logits for `batch_size` images laid out back to back.
/// `out_logits` must hold `batch_size * num_classes` floats.
///
/// # Safety
/// `model` must be live and the arrays valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn das_model_logits(
    model: *const DasModel,
    images: *const f32,
    batch_size: usize,
    out_logits: *mut f32,
    out_cap: usize,
) -> DasStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let input = slice(images, batch_size * m.net.input_len(), "images")?;
        let need = batch_size * m.net.num_classes();
        if out_cap < need {
            return Err(Failure(DasStatus::BufferTooSmall, format!("need {need} floats, got {out_cap}")));
        }
        let logits = m.net.logits(input)?;
        slice_mut(out_logits, need, "out_logits")?.copy_from_slice(&logits);
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must be live; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn das_model_save(model: *const DasModel, path: *const c_char) -> DasStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ck = Checkpoint {
            spec: m.net.spec().clone(),
            params: m.net.params().clone(),
            adam: m.checkpoint_adam.clone(),
        };
        write_checkpoint(&PathBuf::from(string(path, "path")?), &ck)?;
        Ok(())
    })
}

/// Loads a single-precision checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn das_model_load(path: *const c_char, out_model: *mut *mut DasModel) -> DasStatus {
    guard(|| {
        let out = out(out_model, "out_model")?;
        let ck: Checkpoint<f32> = read_checkpoint(&PathBuf::from(string(path, "path")?))?;
        let net = Network::new(ck.spec, ck.params)?;
        *out = Box::into_raw(Box::new(DasModel { net, checkpoint_adam: ck.adam }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn das_model_free(model: *mut DasModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs an experiment described by `key = value` config text and writes
/// its CSV files into `out_dir`. `out_steps` receives the number of
/// completed steps.
///
/// # Safety
/// String arguments must be nul-terminated; `out_steps` writable or null.
#[no_mangle]
pub unsafe extern "C" fn das_run_config(config_text: *const c_char, out_dir: *const c_char, out_steps: *mut usize) -> DasStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_text(&string(config_text, "config_text")?)?;
        cfg.validate()?;
        let dir = PathBuf::from(string(out_dir, "out_dir")?);
        let log = das_lab::cli::run_to_dir(&cfg, &dir, true)?;
        if let Some(s) = out_steps.as_mut() {
            *s = log.steps.len();
        }
        Ok(())
    })
}
