//! C ABI over `pssl-core`.
//!
//! Every fallible call returns a [`PsslStatus`]. On failure the message is
//! kept per thread and can be read with [`pssl_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pssl_core::annotate::annotate_signal;
use pssl_core::cli::RunConfig;
use pssl_core::diffcore::{checkpoint, ParamStore};
use pssl_core::dsp::{preprocess_signal, FilterSpec, Label, ProcessedPulse, RawSignal, PULSE_LEN};
use pssl_core::nets::{Backbone, Classifier};
use pssl_core::ssl::{contrastive_loss, LossKind, LossParams};
use pssl_core::trainer::{load_classifier, predict, MetricsReport};
use pssl_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Data = 4,
    Numerics = 5,
    Shape = 6,
    Contract = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for PsslStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config { .. } | Error::FilterDesign(_) => PsslStatus::Config,
            Error::Numerics(_) => PsslStatus::Numerics,
            Error::Shape { .. } => PsslStatus::Shape,
            Error::Contract(_) => PsslStatus::Contract,
            Error::Io { .. } => PsslStatus::Io,
            _ => PsslStatus::Data,
        }
    }
}

/// Cutoffs in Hz and Butterworth order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsslFilterSpec {
    pub low_cut: f64,
    pub high_cut: f64,
    pub order: u32,
}

/// Confusion counts and derived scores, artifact as the positive class.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsslMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Preprocessed pulses of one signal.
pub struct PsslPulses {
    pulses: Vec<ProcessedPulse>,
}

/// A classifier restored from a checkpoint.
pub struct PsslClassifier {
    classifier: Classifier,
    store: ParamStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(PsslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(PsslStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsslStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside pssl".into());
            PsslStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PsslStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PsslStatus::InvalidString, format!("{what} is not valid UTF-8")))
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

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn label_from_u8(v: u8, what: &str) -> Result<Label, Fail> {
    match v {
        0 => Ok(Label::Clean),
        1 => Ok(Label::Artifact),
        _ => Err(Fail(PsslStatus::Data, format!("{what}: label {v} is neither 0 nor 1"))),
    }
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pssl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pssl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length of every pulse vector.
#[no_mangle]
pub extern "C" fn pssl_pulse_len() -> usize {
    PULSE_LEN
}

#[no_mangle]
pub extern "C" fn pssl_filter_default() -> PsslFilterSpec {
    let f = FilterSpec::default();
    PsslFilterSpec {
        low_cut: f.low_cut,
        high_cut: f.high_cut,
        order: f.order as u32,
    }
}

/// Contrastive loss of one anchor.
///
/// `kind` accepts the same spellings as the CLI (`smooth-infonce`, `nt_xent`, ...).
/// `negatives` holds `n_negatives` rows of `dim` values; all rows must be unit norm.
///
/// # Safety
/// `anchor` and `positive` must point to `dim` doubles, `negatives` to
/// `n_negatives * dim` doubles, `kind` to a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pssl_contrastive_loss(
    kind: *const c_char,
    tau: f64,
    lambda: f64,
    dim: usize,
    anchor: *const f64,
    positive: *const f64,
    negatives: *const f64,
    n_negatives: usize,
    out: *mut f64,
) -> PsslStatus {
    guard(|| {
        let kind: LossKind = str_arg(kind, "kind")?.parse()?;
        let anchor = slice_arg(anchor, dim, "anchor")?;
        let positive = slice_arg(positive, dim, "positive")?;
        let total = n_negatives
            .checked_mul(dim)
            .ok_or_else(|| Fail(PsslStatus::Shape, "n_negatives * dim overflows".into()))?;
        let negatives = slice_arg(negatives, total, "negatives")?;
        let out = out_arg(out, "out")?;
        let negs: Vec<&[f64]> = if dim == 0 { Vec::new() } else { negatives.chunks(dim).collect() };
        *out = contrastive_loss(&LossParams::new(kind, tau, lambda), anchor, positive, &negs)?;
        Ok(())
    })
}

/// Filter, segment, resample and normalize one signal.
///
/// `filter` may be NULL for the default band.
///
/// # Safety
/// `samples` must point to `n_samples` doubles and `out` to writable storage
/// for one handle.
#[no_mangle]
pub unsafe extern "C" fn pssl_preprocess(
    samples: *const f64,
    n_samples: usize,
    fs: f64,
    filter: *const PsslFilterSpec,
    out: *mut *mut PsslPulses,
) -> PsslStatus {
    guard(|| {
        let samples = slice_arg(samples, n_samples, "samples")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = match filter.as_ref() {
            Some(f) => FilterSpec {
                low_cut: f.low_cut,
                high_cut: f.high_cut,
                order: f.order as usize,
            },
            None => FilterSpec::default(),
        };
        let signal = RawSignal::new(samples.to_vec(), fs)?;
        let pulses = preprocess_signal(&signal, &spec)?;
        *out = Box::into_raw(Box::new(PsslPulses { pulses }));
        Ok(())
    })
}

/// # Safety
/// `pulses` must be a live handle from [`pssl_preprocess`] or NULL.
#[no_mangle]
pub unsafe extern "C" fn pssl_pulses_count(pulses: *const PsslPulses) -> usize {
    pulses.as_ref().map_or(0, |p| p.pulses.len())
}

/// Copy pulse `index` (normalized, 256 values) into `out`, and its source
/// sample span into `span` when `span` is not NULL.
///
/// # Safety
/// `pulses` must be a live handle, `out` must hold 256 doubles and `span`,
/// when given, two `size_t`.
#[no_mangle]
pub unsafe extern "C" fn pssl_pulses_get(
    pulses: *const PsslPulses,
    index: usize,
    out: *mut f64,
    span: *mut usize,
) -> PsslStatus {
    guard(|| {
        let p = pulses.as_ref().ok_or_else(|| null("pulses"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let pulse = p.pulses.get(index).ok_or_else(|| {
            Fail(
                PsslStatus::Shape,
                format!("pulse index {index} out of range for {} pulses", p.pulses.len()),
            )
        })?;
        std::slice::from_raw_parts_mut(out, PULSE_LEN).copy_from_slice(&pulse.pulse.values);
        if !span.is_null() {
            *span = pulse.span.0;
            *span.add(1) = pulse.span.1;
        }
        Ok(())
    })
}

/// Statistical labels (0 clean, 1 artifact) for every pulse of the signal.
///
/// # Safety
/// `pulses` must be a live handle and `labels` must hold
/// [`pssl_pulses_count`] bytes.
#[no_mangle]
pub unsafe extern "C" fn pssl_pulses_annotate(pulses: *const PsslPulses, labels: *mut u8) -> PsslStatus {
    guard(|| {
        let p = pulses.as_ref().ok_or_else(|| null("pulses"))?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        let resampled: Vec<&[f64]> = p.pulses.iter().map(|q| q.resampled.as_slice()).collect();
        let ann = annotate_signal(0, &resampled)?;
        let out = std::slice::from_raw_parts_mut(labels, ann.labels.len());
        for (o, l) in out.iter_mut().zip(&ann.labels) {
            *o = l.class_index() as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `pulses` must be a handle from [`pssl_preprocess`] not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn pssl_pulses_free(pulses: *mut PsslPulses) {
    if !pulses.is_null() {
        drop(Box::from_raw(pulses));
    }
}

/// Restore a classifier written by `pssl finetune`.
///
/// `config_path` names the TOML run config used in training, or NULL for defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pssl_classifier_load(
    backbone: *const c_char,
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut PsslClassifier,
) -> PsslStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let backbone: Backbone = str_arg(backbone, "backbone")?.parse()?;
        let ckpt = str_arg(checkpoint_path, "checkpoint_path")?;
        let config = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(Path::new(str_arg(config_path, "config_path")?))?
        };
        config.nets.validate()?;
        let saved = checkpoint::load(Path::new(ckpt))?;
        let (classifier, store) = load_classifier(backbone, &config.nets, &saved)?;
        *out = Box::into_raw(Box::new(PsslClassifier { classifier, store }));
        Ok(())
    })
}

/// Predict labels (0 clean, 1 artifact) for `n_rows` pulses of 256 values each.
///
/// # Safety
/// `clf` must be a live handle, `rows` must hold `n_rows * 256` doubles and
/// `labels` `n_rows` bytes.
#[no_mangle]
pub unsafe extern "C" fn pssl_classifier_predict(
    clf: *const PsslClassifier,
    rows: *const f64,
    n_rows: usize,
    labels: *mut u8,
) -> PsslStatus {
    guard(|| {
        let c = clf.as_ref().ok_or_else(|| null("clf"))?;
        let rows = slice_arg(rows, n_rows * PULSE_LEN, "rows")?;
        if n_rows == 0 {
            return Ok(());
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let rows: Vec<Vec<f64>> = rows.chunks(PULSE_LEN).map(<[f64]>::to_vec).collect();
        let pred = predict(&c.classifier, &c.store, &rows)?;
        let out = std::slice::from_raw_parts_mut(labels, n_rows);
        for (o, l) in out.iter_mut().zip(&pred) {
            *o = l.class_index() as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `clf` must be a handle from [`pssl_classifier_load`] not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn pssl_classifier_free(clf: *mut PsslClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Confusion-matrix metrics of `n` predictions against `truth` (bytes 0 or 1).
///
/// # Safety
/// `pred` and `truth` must hold `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pssl_metrics(pred: *const u8, truth: *const u8, n: usize, out: *mut PsslMetrics) -> PsslStatus {
    guard(|| {
        let pred = slice_arg(pred, n, "pred")?
            .iter()
            .map(|v| label_from_u8(*v, "pred"))
            .collect::<Result<Vec<_>, _>>()?;
        let truth = slice_arg(truth, n, "truth")?
            .iter()
            .map(|v| label_from_u8(*v, "truth"))
            .collect::<Result<Vec<_>, _>>()?;
        let out = out_arg(out, "out")?;
        let m = MetricsReport::from_predictions(&pred, &truth)?;
        *out = PsslMetrics {
            tp: m.tp as u64,
            fp: m.fp as u64,
            fn_: m.fn_ as u64,
            tn: m.tn as u64,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_error_kind() {
        assert_eq!(PsslStatus::from(&Error::config("tau", "x")), PsslStatus::Config);
        assert_eq!(PsslStatus::from(&Error::Numerics("x".into())), PsslStatus::Numerics);
        assert_eq!(PsslStatus::from(&Error::Imbalance("x".into())), PsslStatus::Data);
        assert_eq!(PsslStatus::from(&Error::shape("op", &[1], &[2])), PsslStatus::Shape);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, PsslStatus::Panic);
        assert!(!pssl_last_error_message().is_null());
    }

    #[test]
    fn default_filter_matches_core() {
        let f = pssl_filter_default();
        let c = FilterSpec::default();
        assert_eq!((f.low_cut, f.high_cut, f.order as usize), (c.low_cut, c.high_cut, c.order));
    }
}
