//! C ABI for the `lrnqs` library.
//!
//! Objects are exposed as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible function
//! returns an [`LrnqsStatus`]; on failure a message is available from
//! [`lrnqs_last_error`] until the next failing call on the same thread.
//! Spin configurations are arrays of `int8_t` with entries `+1` or `-1`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lrnqs::ansatz::{Ansatz, AnsatzSpec, AnyAnsatz};
use lrnqs::cli::commands::{cmd_train, load_trained};
use lrnqs::config::{ModelConfig, RunConfiguration};
use lrnqs::exact::ground_state;
use lrnqs::hamiltonian::TransverseFieldIsing;
use lrnqs::Error;

/// Result codes shared by every function of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrnqsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Numerical = 5,
    InsufficientData = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for LrnqsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Serde(_) | Error::Csv(_) => LrnqsStatus::InvalidArgument,
            Error::Dimension { .. } => LrnqsStatus::DimensionMismatch,
            Error::NonFinite { .. } => LrnqsStatus::NonFinite,
            Error::Numerical(_) => LrnqsStatus::Numerical,
            Error::InsufficientData(_) => LrnqsStatus::InsufficientData,
            Error::Io { .. } => LrnqsStatus::Io,
        }
    }
}

/// Opaque Hamiltonian handle.
pub struct LrnqsModel {
    inner: TransverseFieldIsing,
}

/// Opaque handle holding an ansatz together with its parameter vector.
pub struct LrnqsAnsatz {
    ansatz: AnyAnsatz,
    params: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

struct Failure(LrnqsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LrnqsStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn null(what: &str) -> Failure {
    Failure(LrnqsStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> FfiResult<()>>(body: F) -> LrnqsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LrnqsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            LrnqsStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(LrnqsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `ptr` must be null or point to `len` readable `int8_t` values.
unsafe fn read_spins<'a>(ptr: *const i8, len: usize) -> FfiResult<&'a [i8]> {
    if ptr.is_null() {
        return Err(null("spins"));
    }
    let spins = std::slice::from_raw_parts(ptr, len);
    if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
        return Err(Failure(LrnqsStatus::InvalidArgument, format!("spin value {bad} is not +1 or -1")));
    }
    Ok(spins)
}

fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: checked non-null; the caller guarantees it is writable.
    unsafe { out.write(value) };
    Ok(())
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn lrnqs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lrnqs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build the long-range transverse-field Ising Hamiltonian on a ring.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_model_new(
    size: usize,
    alpha: f64,
    coupling: f64,
    self_term: f64,
    field: f64,
    kac_on: bool,
    out: *mut *mut LrnqsModel,
) -> LrnqsStatus {
    guard(|| {
        let config = ModelConfig {
            size,
            alpha,
            coupling,
            b: self_term,
            field,
            kac_on,
        };
        let model = Box::new(LrnqsModel { inner: config.build()? });
        write_out(out, Box::into_raw(model), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`lrnqs_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_model_free(model: *mut LrnqsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_model_kac_factor(model: *const LrnqsModel, out: *mut f64) -> LrnqsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        write_out(out, model.inner.coupling.effective_kac(), "out")
    })
}

/// Diagonal (`σᶻσᶻ`) energy of one configuration.
///
/// # Safety
/// `model` must be a live handle, `spins` must point to `len` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_model_diagonal_energy(
    model: *const LrnqsModel,
    spins: *const i8,
    len: usize,
    out: *mut f64,
) -> LrnqsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let spins = read_spins(spins, len)?;
        if len != model.inner.size() {
            return Err(Error::Dimension {
                context: "spin configuration",
                expected: model.inner.size(),
                actual: len,
            }
            .into());
        }
        write_out(out, model.inner.diagonal_energy(spins), "out")
    })
}

/// Exact ground-state energy and gap for small chains.
///
/// # Safety
/// `model` must be a live handle; `energy` and `gap` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_exact_ground_state(
    model: *const LrnqsModel,
    energy: *mut f64,
    gap: *mut f64,
) -> LrnqsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if energy.is_null() || gap.is_null() {
            return Err(null("output pointer"));
        }
        let solution = ground_state(&model.inner)?;
        write_out(energy, solution.energy, "energy")?;
        write_out(gap, solution.gap, "gap")
    })
}

/// Local energy `⟨s|H|ψ⟩/⟨s|ψ⟩` of the ansatz at one configuration.
///
/// # Safety
/// Both handles must be live, `spins` must point to `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_local_energy(
    model: *const LrnqsModel,
    ansatz: *const LrnqsAnsatz,
    spins: *const i8,
    len: usize,
    out: *mut f64,
) -> LrnqsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let handle = ansatz.as_ref().ok_or_else(|| null("ansatz"))?;
        let spins = read_spins(spins, len)?;
        if len != model.inner.size() || len != handle.ansatz.input_size() {
            return Err(Error::Dimension {
                context: "spin configuration",
                expected: model.inner.size(),
                actual: len,
            }
            .into());
        }
        let value = model
            .inner
            .local_energy(spins, |s| handle.ansatz.log_psi(&handle.params, s).unwrap_or(f64::NAN))?;
        write_out(out, value, "out")
    })
}

/// Build an ansatz from a JSON description, for example
/// `{"type": "rbm", "size": 10, "density": 1}`, with freshly initialised
/// parameters.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_new(spec_json: *const c_char, seed: u64, out: *mut *mut LrnqsAnsatz) -> LrnqsStatus {
    guard(|| {
        let text = read_str(spec_json, "spec_json")?;
        let spec: AnsatzSpec = serde_json::from_str(text).map_err(Error::from)?;
        let ansatz = spec.build()?;
        let params = ansatz.initial_parameters(seed);
        write_out(out, Box::into_raw(Box::new(LrnqsAnsatz { ansatz, params })), "out")
    })
}

/// Load an ansatz and its parameters from a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_load(dir: *const c_char, out: *mut *mut LrnqsAnsatz) -> LrnqsStatus {
    guard(|| {
        let (ansatz, params) = load_trained(Path::new(read_str(dir, "dir")?))?;
        write_out(out, Box::into_raw(Box::new(LrnqsAnsatz { ansatz, params })), "out")
    })
}

/// # Safety
/// `ansatz` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_free(ansatz: *mut LrnqsAnsatz) {
    if !ansatz.is_null() {
        drop(Box::from_raw(ansatz));
    }
}

/// Number of real parameters (0 for a null handle).
///
/// # Safety
/// `ansatz` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_parameter_count(ansatz: *const LrnqsAnsatz) -> usize {
    ansatz.as_ref().map_or(0, |a| a.params.len())
}

/// Copy the parameters into `values`, which must hold exactly
/// [`lrnqs_ansatz_parameter_count`] entries.
///
/// # Safety
/// `ansatz` must be live and `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_get_parameters(ansatz: *const LrnqsAnsatz, values: *mut f64, len: usize) -> LrnqsStatus {
    guard(|| {
        let handle = ansatz.as_ref().ok_or_else(|| null("ansatz"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        check_len(len, handle.params.len(), "parameter buffer")?;
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&handle.params);
        Ok(())
    })
}

/// Replace the parameters; `len` must equal the parameter count.
///
/// # Safety
/// `ansatz` must be live and `values` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_set_parameters(ansatz: *mut LrnqsAnsatz, values: *const f64, len: usize) -> LrnqsStatus {
    guard(|| {
        let handle = ansatz.as_mut().ok_or_else(|| null("ansatz"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        check_len(len, handle.params.len(), "parameter buffer")?;
        handle.params.copy_from_slice(std::slice::from_raw_parts(values, len));
        Ok(())
    })
}

fn check_len(actual: usize, expected: usize, context: &'static str) -> FfiResult<()> {
    if actual != expected {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        }
        .into());
    }
    Ok(())
}

/// `log ψ(s)` at the current parameters.
///
/// # Safety
/// `ansatz` must be live, `spins` must point to `len` values and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_log_psi(
    ansatz: *const LrnqsAnsatz,
    spins: *const i8,
    len: usize,
    out: *mut f64,
) -> LrnqsStatus {
    guard(|| {
        let handle = ansatz.as_ref().ok_or_else(|| null("ansatz"))?;
        let spins = read_spins(spins, len)?;
        write_out(out, handle.ansatz.log_psi(&handle.params, spins)?, "out")
    })
}

/// `log ψ(s)` and its derivatives with respect to every parameter.
///
/// # Safety
/// `ansatz` must be live, `spins` must point to `len` values, `gradient` to
/// `gradient_len` writable doubles and `log_psi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_ansatz_log_psi_gradient(
    ansatz: *const LrnqsAnsatz,
    spins: *const i8,
    len: usize,
    gradient: *mut f64,
    gradient_len: usize,
    log_psi: *mut f64,
) -> LrnqsStatus {
    guard(|| {
        let handle = ansatz.as_ref().ok_or_else(|| null("ansatz"))?;
        let spins = read_spins(spins, len)?;
        if gradient.is_null() {
            return Err(null("gradient"));
        }
        check_len(gradient_len, handle.params.len(), "gradient buffer")?;
        let buffer = std::slice::from_raw_parts_mut(gradient, gradient_len);
        let value = handle.ansatz.log_psi_with_gradient(&handle.params, spins, buffer)?;
        write_out(log_psi, value, "log_psi")
    })
}

/// Train from a JSON run configuration into `run_dir`. On success
/// `summary_json` receives the run summary, to be released with
/// [`lrnqs_string_free`].
///
/// # Safety
/// `config_json` and `run_dir` must be NUL-terminated strings and
/// `summary_json` writable.
#[no_mangle]
pub unsafe extern "C" fn lrnqs_train(
    config_json: *const c_char,
    run_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> LrnqsStatus {
    guard(|| {
        let config = RunConfiguration::from_json(read_str(config_json, "config_json")?)?;
        let dir = Path::new(read_str(run_dir, "run_dir")?);
        if summary_json.is_null() {
            return Err(null("summary_json"));
        }
        let summary = cmd_train(&config, dir, None)?;
        let text = serde_json::to_string(&summary).map_err(Error::from)?;
        write_out(summary_json, into_c_string(text), "summary_json")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping_covers_error_classes() {
        assert_eq!(LrnqsStatus::from(&Error::Config("x".into())), LrnqsStatus::InvalidArgument);
        assert_eq!(LrnqsStatus::from(&Error::Numerical("x".into())), LrnqsStatus::Numerical);
        assert_eq!(
            LrnqsStatus::from(&Error::NonFinite {
                stage: "s".into(),
                config: "+".into()
            }),
            LrnqsStatus::NonFinite
        );
    }

    #[test]
    fn panics_become_status_codes() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, LrnqsStatus::Panic);
        let message = unsafe { CStr::from_ptr(lrnqs_last_error()) }.to_str().unwrap();
        assert!(message.contains("boom"), "{message}");
    }
}
