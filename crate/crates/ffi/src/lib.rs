//! C ABI over the `cdmi` library: similarity metrics, the improvement
//! factor, corpus and checkpoint handles, and single-field reconstruction.
//!
//! Every fallible function returns a [`CdmiStatus`]; on failure the message
//! is available from [`cdmi_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cdmi::attack::{AttackConfig, Attacker, ModelRunner, Role};
use cdmi::corpus::io::read_corpus;
use cdmi::corpus::{scrub, Document};
use cdmi::metrics::{improvement_factor, jaro_winkler_norm, levenshtein_norm, OneShotScores};
use cdmi::model::Checkpoint;
use cdmi::Error;

/// Result codes. `CDMI_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdmiStatus {
    CdmiOk = 0,
    CdmiNullPointer = 1,
    CdmiInvalidArgument = 2,
    CdmiIoError = 3,
    CdmiFormatError = 4,
    CdmiDataError = 5,
    CdmiNumericalError = 6,
    CdmiWrongTask = 7,
    CdmiBufferTooSmall = 8,
    CdmiPanic = 9,
}

/// The four one-shot similarity scores averaged over a set of fields.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdmiScores {
    pub pr: f64,
    pub hd: f64,
    pub ld: f64,
    pub jwd: f64,
}

impl From<CdmiScores> for OneShotScores {
    fn from(s: CdmiScores) -> Self {
        OneShotScores {
            pr: s.pr,
            hd: s.hd,
            ld: s.ld,
            jwd: s.jwd,
        }
    }
}

/// Opaque set of documents.
pub struct CdmiCorpus {
    docs: Vec<Document>,
}

/// Opaque trained model checkpoint.
pub struct CdmiCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: CdmiStatus, msg: impl Into<String>) -> CdmiStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> CdmiStatus {
    let status = match &e {
        Error::Io { .. } => CdmiStatus::CdmiIoError,
        Error::Format(_) => CdmiStatus::CdmiFormatError,
        Error::Numerical(_) => CdmiStatus::CdmiNumericalError,
        Error::WrongTask { .. } => CdmiStatus::CdmiWrongTask,
        Error::Config(_) => CdmiStatus::CdmiInvalidArgument,
        _ => CdmiStatus::CdmiDataError,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CdmiStatus>) -> CdmiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdmiStatus::CdmiOk,
        Ok(Err(s)) => s,
        Err(_) => fail(CdmiStatus::CdmiPanic, "internal panic"),
    }
}

unsafe fn tokens<'a>(ptr: *const u32, len: usize) -> Result<&'a [u32], CdmiStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(CdmiStatus::CdmiNullPointer, "token pointer is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T) -> Result<&'a mut T, CdmiStatus> {
    ptr.as_mut()
        .ok_or_else(|| fail(CdmiStatus::CdmiNullPointer, "output pointer is null"))
}

unsafe fn path(ptr: *const c_char) -> Result<PathBuf, CdmiStatus> {
    if ptr.is_null() {
        return Err(fail(CdmiStatus::CdmiNullPointer, "path is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(CdmiStatus::CdmiInvalidArgument, "path is not UTF-8"))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cdmi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Normalized Levenshtein similarity of two token sequences.
///
/// # Safety
/// `a` and `b` must point to `a_len` and `b_len` readable tokens (or be
/// NULL with length 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cdmi_levenshtein_norm(
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    out: *mut f64,
) -> CdmiStatus {
    guard(|| {
        *out_ref(out)? = levenshtein_norm(tokens(a, a_len)?, tokens(b, b_len)?);
        Ok(())
    })
}

/// Normalized Jaro-Winkler similarity of two token sequences.
///
/// # Safety
/// Same contract as [`cdmi_levenshtein_norm`].
#[no_mangle]
pub unsafe extern "C" fn cdmi_jaro_winkler_norm(
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    out: *mut f64,
) -> CdmiStatus {
    guard(|| {
        *out_ref(out)? = jaro_winkler_norm(tokens(a, a_len)?, tokens(b, b_len)?);
        Ok(())
    })
}

/// Improvement factor of attack scores over baseline scores.
///
/// # Safety
/// `attack`, `baseline` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cdmi_improvement_factor(
    attack: *const CdmiScores,
    baseline: *const CdmiScores,
    epsilon: f64,
    out: *mut f64,
) -> CdmiStatus {
    guard(|| {
        let (Some(a), Some(b)) = (attack.as_ref(), baseline.as_ref()) else {
            return Err(fail(CdmiStatus::CdmiNullPointer, "score pointer is null"));
        };
        if !(epsilon > 0.0) {
            return Err(fail(
                CdmiStatus::CdmiInvalidArgument,
                "epsilon must be positive",
            ));
        }
        *out_ref(out)? = improvement_factor(&(*a).into(), &(*b).into(), epsilon);
        Ok(())
    })
}

/// Loads a JSONL corpus file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. On
/// success `*out` owns a handle to release with [`cdmi_corpus_free`].
#[no_mangle]
pub unsafe extern "C" fn cdmi_corpus_load(
    path_ptr: *const c_char,
    out: *mut *mut CdmiCorpus,
) -> CdmiStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let docs = read_corpus(&path(path_ptr)?).map_err(from_error)?;
        *out = Box::into_raw(Box::new(CdmiCorpus { docs }));
        Ok(())
    })
}

/// Number of documents in a corpus, 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdmi_corpus_len(corpus: *const CdmiCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.docs.len())
}

/// Number of annotated fields in document `doc`.
///
/// # Safety
/// `corpus` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdmi_corpus_field_count(
    corpus: *const CdmiCorpus,
    doc: usize,
    out: *mut usize,
) -> CdmiStatus {
    guard(|| {
        let c = corpus
            .as_ref()
            .ok_or_else(|| fail(CdmiStatus::CdmiNullPointer, "corpus is null"))?;
        let d = c.docs.get(doc).ok_or_else(|| {
            fail(
                CdmiStatus::CdmiInvalidArgument,
                format!("no document {doc}"),
            )
        })?;
        *out_ref(out)? = d.fields.len();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdmi_corpus_free(corpus: *mut CdmiCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// As for [`cdmi_corpus_load`]; release with [`cdmi_checkpoint_free`].
#[no_mangle]
pub unsafe extern "C" fn cdmi_checkpoint_load(
    path_ptr: *const c_char,
    out: *mut *mut CdmiCheckpoint,
) -> CdmiStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let inner = Checkpoint::load(&path(path_ptr)?).map_err(from_error)?;
        *out = Box::into_raw(Box::new(CdmiCheckpoint { inner }));
        Ok(())
    })
}

/// Training epoch of a checkpoint, 0 for NULL.
///
/// # Safety
/// `ckpt` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdmi_checkpoint_epoch(ckpt: *const CdmiCheckpoint) -> usize {
    ckpt.as_ref().map_or(0, |c| c.inner.epoch)
}

/// Validation accuracy recorded with a checkpoint, NaN for NULL.
///
/// # Safety
/// `ckpt` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdmi_checkpoint_val_accuracy(ckpt: *const CdmiCheckpoint) -> f64 {
    ckpt.as_ref().map_or(f64::NAN, |c| c.inner.val_accuracy)
}

/// # Safety
/// `ckpt` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdmi_checkpoint_free(ckpt: *mut CdmiCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Scrubs field `field` of document `doc` and reconstructs it with the
/// default attack settings and the given seed. `baseline` selects the
/// public-model-only reconstruction. Writes the field length to `out_len`
/// and, when `buf_len` is large enough, the tokens to `buf`; otherwise
/// returns `CDMI_BUFFER_TOO_SMALL`.
///
/// # Safety
/// Handles must be live; `buf` must hold `buf_len` tokens (or be NULL with
/// `buf_len` 0); `out_len` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cdmi_reconstruct_field(
    target: *const CdmiCheckpoint,
    public: *const CdmiCheckpoint,
    corpus: *const CdmiCorpus,
    doc: usize,
    field: usize,
    seed: u64,
    baseline: bool,
    buf: *mut u32,
    buf_len: usize,
    out_len: *mut usize,
) -> CdmiStatus {
    guard(|| {
        let (Some(t), Some(p), Some(c)) = (target.as_ref(), public.as_ref(), corpus.as_ref())
        else {
            return Err(fail(CdmiStatus::CdmiNullPointer, "handle is null"));
        };
        let out_len = out_ref(out_len)?;
        let d = c.docs.get(doc).ok_or_else(|| {
            fail(
                CdmiStatus::CdmiInvalidArgument,
                format!("no document {doc}"),
            )
        })?;
        let scrubbed = scrub(d, field).map_err(from_error)?;
        let config = AttackConfig {
            seed,
            ..AttackConfig::default()
        };
        let attacker = Attacker::new(
            ModelRunner::new(&t.inner),
            ModelRunner::new(&p.inner),
            config,
        )
        .map_err(from_error)?;
        let role = if baseline {
            Role::Baseline
        } else {
            Role::Attack
        };
        let rec = attacker
            .attempt(role, scrubbed.view(), 0)
            .map_err(from_error)?;
        *out_len = rec.tokens.len();
        if buf_len < rec.tokens.len() {
            return Err(fail(
                CdmiStatus::CdmiBufferTooSmall,
                format!(
                    "field has {} tokens, buffer holds {buf_len}",
                    rec.tokens.len()
                ),
            ));
        }
        if buf.is_null() {
            return Err(fail(CdmiStatus::CdmiNullPointer, "buffer is null"));
        }
        ptr::copy_nonoverlapping(rec.tokens.as_ptr(), buf, rec.tokens.len());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdmi::corpus::io::write_corpus;
    use cdmi::corpus::{generate_corpus, CorpusSpec};
    use cdmi::model::{train, EncoderConfig, TaskKind, TrainConfig};

    fn last_error() -> String {
        let p = cdmi_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
    }

    #[test]
    fn metrics_match_library() {
        let (a, b) = ([1u32, 2, 3, 4], [1u32, 3, 4]);
        let mut out = 0.0;
        unsafe {
            assert_eq!(
                cdmi_levenshtein_norm(a.as_ptr(), 4, b.as_ptr(), 3, &mut out),
                CdmiStatus::CdmiOk
            );
            assert_eq!(out, levenshtein_norm(&a, &b));
            assert_eq!(
                cdmi_jaro_winkler_norm(a.as_ptr(), 4, b.as_ptr(), 3, &mut out),
                CdmiStatus::CdmiOk
            );
            assert_eq!(out, jaro_winkler_norm(&a, &b));
            assert_eq!(
                cdmi_levenshtein_norm(ptr::null(), 0, ptr::null(), 0, &mut out),
                CdmiStatus::CdmiOk
            );
        }
    }

    #[test]
    fn null_pointers_reported() {
        let mut out = 0.0;
        unsafe {
            assert_eq!(
                cdmi_levenshtein_norm(ptr::null(), 2, ptr::null(), 0, &mut out),
                CdmiStatus::CdmiNullPointer
            );
            assert!(last_error().contains("null"));
            let a = [1u32];
            assert_eq!(
                cdmi_jaro_winkler_norm(a.as_ptr(), 1, a.as_ptr(), 1, ptr::null_mut()),
                CdmiStatus::CdmiNullPointer
            );
            assert_eq!(cdmi_corpus_len(ptr::null()), 0);
            assert!(cdmi_checkpoint_val_accuracy(ptr::null()).is_nan());
            cdmi_corpus_free(ptr::null_mut());
            cdmi_checkpoint_free(ptr::null_mut());
        }
    }

    #[test]
    fn improvement_factor_identity() {
        let s = CdmiScores {
            pr: 0.2,
            hd: 0.4,
            ld: 0.5,
            jwd: 0.7,
        };
        let mut out = 0.0;
        unsafe {
            assert_eq!(
                cdmi_improvement_factor(&s, &s, 0.05, &mut out),
                CdmiStatus::CdmiOk
            );
            assert_eq!(out, 1.0);
            assert_eq!(
                cdmi_improvement_factor(&s, &s, 0.0, &mut out),
                CdmiStatus::CdmiInvalidArgument
            );
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let p = CString::new("/nonexistent/corpus.jsonl").unwrap();
        let mut c: *mut CdmiCorpus = ptr::null_mut();
        let mut k: *mut CdmiCheckpoint = ptr::null_mut();
        unsafe {
            assert_eq!(
                cdmi_corpus_load(p.as_ptr(), &mut c),
                CdmiStatus::CdmiIoError
            );
            assert!(c.is_null());
            assert_eq!(
                cdmi_checkpoint_load(p.as_ptr(), &mut k),
                CdmiStatus::CdmiIoError
            );
            assert!(last_error().contains("nonexistent"));
        }
    }

    #[test]
    fn reconstruct_through_handles() {
        let dir = tempfile::tempdir().unwrap();
        let docs = generate_corpus(&CorpusSpec {
            n_docs: 3,
            seed: 4,
            ..CorpusSpec::default()
        })
        .unwrap();
        let corpus_path = dir.path().join("c.jsonl");
        write_corpus(&corpus_path, &docs).unwrap();
        let enc = EncoderConfig {
            embed_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 32,
            ..EncoderConfig::default()
        };
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::for_task(TaskKind::Mlm)
        };
        let ck = train(&tc, &enc, &docs, &docs).unwrap().pop().unwrap();
        let ck_path = dir.path().join("m.ckpt");
        ck.save(&ck_path).unwrap();

        let (cp, kp) = (
            CString::new(corpus_path.to_str().unwrap()).unwrap(),
            CString::new(ck_path.to_str().unwrap()).unwrap(),
        );
        let mut c: *mut CdmiCorpus = ptr::null_mut();
        let mut k: *mut CdmiCheckpoint = ptr::null_mut();
        unsafe {
            assert_eq!(cdmi_corpus_load(cp.as_ptr(), &mut c), CdmiStatus::CdmiOk);
            assert_eq!(
                cdmi_checkpoint_load(kp.as_ptr(), &mut k),
                CdmiStatus::CdmiOk
            );
            assert_eq!(cdmi_corpus_len(c), 3);
            assert_eq!(cdmi_checkpoint_epoch(k), 1);
            let mut n_fields = 0;
            assert_eq!(
                cdmi_corpus_field_count(c, 0, &mut n_fields),
                CdmiStatus::CdmiOk
            );
            assert!(n_fields > 0);

            let k_len = scrub(&docs[0], 0).unwrap().k();
            let mut len = 0;
            assert_eq!(
                cdmi_reconstruct_field(k, k, c, 0, 0, 9, false, ptr::null_mut(), 0, &mut len),
                CdmiStatus::CdmiBufferTooSmall
            );
            assert_eq!(len, k_len);
            let mut buf = vec![0u32; len];
            let mut again = vec![0u32; len];
            assert_eq!(
                cdmi_reconstruct_field(k, k, c, 0, 0, 9, false, buf.as_mut_ptr(), len, &mut len),
                CdmiStatus::CdmiOk
            );
            assert_eq!(
                cdmi_reconstruct_field(k, k, c, 0, 0, 9, false, again.as_mut_ptr(), len, &mut len),
                CdmiStatus::CdmiOk
            );
            assert_eq!(buf, again);
            assert_eq!(
                cdmi_reconstruct_field(k, k, c, 7, 0, 9, false, buf.as_mut_ptr(), len, &mut len),
                CdmiStatus::CdmiInvalidArgument
            );
            cdmi_corpus_free(c);
            cdmi_checkpoint_free(k);
        }
    }
}
