//! C interface to detnoise.
//!
//! Every fallible call returns a [`DnStatus`]; on failure the message is
//! available from [`dn_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned to
//! the caller are released with [`dn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use detnoise::cinj::{LossQueue, Verdict};
use detnoise::noise::{compose_corruptions, BoxNoiseSpec, LabelNoiseSpec};
use detnoise::pipeline::{self, PipelineConfig, RunInputs};
use detnoise::{cli, coco, geometry, BoundingBox, Dataset, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Invariant = 5,
    /// The loss queue is not full yet.
    NotReady = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnVerdict {
    Clean = 0,
    Noisy = 1,
    Deferred = 2,
}

/// Corner-form box in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

pub struct DnDataset(Dataset);

pub struct DnLossQueue(LossQueue);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DnStatus {
    match e {
        Error::Io { .. } => DnStatus::Io,
        Error::Parse(_) | Error::Schema { .. } => DnStatus::Parse,
        Error::Invariant { .. } | Error::Resample { .. } | Error::IdMismatch(_) => {
            DnStatus::Invariant
        }
        Error::InvalidArgument(_) | Error::Config(_) => DnStatus::InvalidArgument,
        Error::QueueNotFull { .. } => DnStatus::NotReady,
    }
}

struct Fail(DnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DnStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, record any failure, and never let a panic cross the boundary.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DnStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DnStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn to_box(b: DnBox) -> Result<BoundingBox, Fail> {
    Ok(BoundingBox::new(b.x1, b.y1, b.x2, b.y2)?)
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn dn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_load(
    path: *const c_char,
    out: *mut *mut DnDataset,
) -> DnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = coco::load_dataset(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DnDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_parse(
    json: *const c_char,
    out: *mut *mut DnDataset,
) -> DnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = coco::parse_dataset(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(DnDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_save(ds: *const DnDataset, path: *const c_char) -> DnStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        coco::save_dataset(&ds.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Serialize to JSON. Release the string with [`dn_string_free`].
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_to_json(
    ds: *const DnDataset,
    out: *mut *mut c_char,
) -> DnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = coco::dataset_to_string(&ref_arg(ds, "dataset")?.0)?;
        let c = CString::new(text).map_err(|_| Fail(DnStatus::Internal, "NUL in JSON".into()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_free(ds: *mut DnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_counts(
    ds: *const DnDataset,
    images: *mut usize,
    objects: *mut usize,
    classes: *mut usize,
) -> DnStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        *out_arg(images, "images")? = ds.images.len();
        *out_arg(objects, "objects")? = ds.object_count();
        *out_arg(classes, "classes")? = ds.class_count();
        Ok(())
    })
}

/// Corrupt `ds` into a new dataset. `label_noise` (`symmetric:<r>` /
/// `pair:<r>`) and `box_noise` (`uniform:<n>` / `gaussian:<sigma>`) may be
/// null to skip a stage; `record_path` may be null to skip the record.
///
/// # Safety
/// Pointers must be valid as described; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_dataset_corrupt(
    ds: *const DnDataset,
    label_noise: *const c_char,
    box_noise: *const c_char,
    seed: u64,
    record_path: *const c_char,
    out: *mut *mut DnDataset,
) -> DnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = &ref_arg(ds, "dataset")?.0;
        let label = opt_str_arg(label_noise, "label_noise")?
            .map(str::parse::<LabelNoiseSpec>)
            .transpose()?;
        let boxes = opt_str_arg(box_noise, "box_noise")?
            .map(str::parse::<BoxNoiseSpec>)
            .transpose()?;
        let (noisy, record) = compose_corruptions(ds, label.as_ref(), boxes.as_ref(), seed)?;
        if let Some(p) = opt_str_arg(record_path, "record_path")? {
            record.save(p)?;
        }
        *out = Box::into_raw(Box::new(DnDataset(noisy)));
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_new(
    capacity: usize,
    acceptance_rate: f64,
    out: *mut *mut DnLossQueue,
) -> DnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let q = LossQueue::new(capacity, acceptance_rate)?;
        *out = Box::into_raw(Box::new(DnLossQueue(q)));
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_free(q: *mut DnLossQueue) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// # Safety
/// `q` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_push(
    q: *mut DnLossQueue,
    object_id: u64,
    loss: f64,
) -> DnStatus {
    guard(|| {
        let q = out_arg(q, "queue")?;
        if !loss.is_finite() {
            return Err(Fail(
                DnStatus::InvalidArgument,
                format!("loss must be finite, got {loss}"),
            ));
        }
        q.0.push(object_id, loss);
        Ok(())
    })
}

/// Judge `loss` without modifying the queue. `threshold` receives NaN while
/// the verdict is deferred; it may be null.
///
/// # Safety
/// `q` must be a live handle; `verdict` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_judge(
    q: *const DnLossQueue,
    object_id: u64,
    loss: f64,
    verdict: *mut DnVerdict,
    threshold: *mut f64,
) -> DnStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        let v = out_arg(verdict, "verdict")?;
        let j = q.0.judge(object_id, loss);
        *v = match j.verdict {
            Verdict::Clean => DnVerdict::Clean,
            Verdict::Noisy => DnVerdict::Noisy,
            Verdict::Deferred => DnVerdict::Deferred,
        };
        if let Some(t) = threshold.as_mut() {
            *t = j.threshold.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Current threshold; `DN_STATUS_NOT_READY` until the queue is full.
///
/// # Safety
/// `q` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_threshold(q: *const DnLossQueue, out: *mut f64) -> DnStatus {
    guard(|| {
        let q = ref_arg(q, "queue")?;
        *out_arg(out, "out")? = q.0.threshold()?;
        Ok(())
    })
}

/// # Safety
/// `q` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_loss_queue_len(q: *const DnLossQueue, out: *mut usize) -> DnStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(q, "queue")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_iou(a: DnBox, b: DnBox, out: *mut f64) -> DnStatus {
    guard(|| {
        let v = geometry::iou(&to_box(a)?, &to_box(b)?);
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// Matching fitness of `proposal` against `annotated`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_fitness(
    annotated: DnBox,
    proposal: DnBox,
    gamma: f64,
    out: *mut f64,
) -> DnStatus {
    guard(|| {
        let v = geometry::fitness(&to_box(annotated)?, &to_box(proposal)?, gamma);
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// Run the refinement pipeline and write its outputs into `out_dir`. `clean`,
/// `record` and `config` may be null; at least one of `clean` and `record`
/// is required. `seed` overrides any seed in the config file.
///
/// # Safety
/// Non-null pointers must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn dn_refine_run(
    noisy: *const c_char,
    clean: *const c_char,
    record: *const c_char,
    config: *const c_char,
    out_dir: *const c_char,
    seed: u64,
) -> DnStatus {
    guard(|| {
        let mut cfg = match opt_str_arg(config, "config")? {
            Some(p) => cli::load_config_file(p.as_ref())?,
            None => PipelineConfig::default(),
        };
        cfg.seed = seed;
        let inputs = RunInputs {
            noisy: PathBuf::from(str_arg(noisy, "noisy")?),
            clean: opt_str_arg(clean, "clean")?.map(PathBuf::from),
            record: opt_str_arg(record, "record")?.map(PathBuf::from),
        };
        pipeline::run(&inputs, str_arg(out_dir, "out_dir")?, &cfg, None)?;
        Ok(())
    })
}
