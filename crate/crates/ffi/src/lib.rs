//! C ABI over the `tslab` core.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_init`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`TslabStatus`]; on failure [`tslab_last_error`] describes the
//! problem until the next failing call on the same thread. Arrays are
//! row-major `double` buffers with explicit lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::{Array1, Array2, ArrayView1};
use tslab::model::{init_student, sample_teacher};
use tslab::spectrum::{decompose_loss, hermite_coeffs, population_gradient};
use tslab::trainer::run_two_stage;
use tslab::{Activation, Error, GradientMode, HermiteTable, StudentEnsemble, TeacherMode, TeacherNetwork, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TslabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    BufferTooSmall = 4,
    NumericAbort = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TslabActivation {
    Relu = 0,
    Abs = 1,
}

impl From<TslabActivation> for Activation {
    fn from(a: TslabActivation) -> Self {
        match a {
            TslabActivation::Relu => Activation::Relu,
            TslabActivation::Abs => Activation::Abs,
        }
    }
}

/// Opaque teacher network.
pub struct TslabTeacher(TeacherNetwork);
/// Opaque student ensemble.
pub struct TslabEnsemble(StudentEnsemble);
/// Opaque table of Hermite coefficients.
pub struct TslabTable(HermiteTable);

/// Training settings; fill with `tslab_train_config_default` first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TslabTrainConfig {
    pub d: usize,
    pub m: usize,
    pub n_samples: usize,
    pub kappa: f64,
    pub random_rotation: bool,
    pub eta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub threshold_factor: f64,
    pub t1_iters: usize,
    pub t2_iters: usize,
    pub j_max: usize,
    pub log_every: usize,
    pub seed_teacher: u64,
    pub seed_data: u64,
    pub seed_init: u64,
    pub population: bool,
    pub learner: TslabActivation,
}

impl From<&TrainConfig> for TslabTrainConfig {
    fn from(c: &TrainConfig) -> Self {
        TslabTrainConfig {
            d: c.d,
            m: c.m,
            n_samples: c.n_samples,
            kappa: c.kappa,
            random_rotation: c.teacher_mode == TeacherMode::RandomRotation,
            eta: c.eta,
            lambda0: c.lambda0,
            lambda1: c.lambda1,
            threshold_factor: c.threshold_factor,
            t1_iters: c.t1_iters,
            t2_iters: c.t2_iters,
            j_max: c.j_max,
            log_every: c.log_every,
            seed_teacher: c.seed_teacher,
            seed_data: c.seed_data,
            seed_init: c.seed_init,
            population: c.gradient_mode == GradientMode::Population,
            learner: match c.learner_activation {
                Activation::Relu => TslabActivation::Relu,
                Activation::Abs => TslabActivation::Abs,
            },
        }
    }
}

impl From<&TslabTrainConfig> for TrainConfig {
    fn from(c: &TslabTrainConfig) -> Self {
        TrainConfig {
            d: c.d,
            m: c.m,
            n_samples: c.n_samples,
            kappa: c.kappa,
            teacher_mode: if c.random_rotation { TeacherMode::RandomRotation } else { TeacherMode::Identity },
            eta: c.eta,
            lambda0: c.lambda0,
            lambda1: c.lambda1,
            threshold_factor: c.threshold_factor,
            t1_iters: c.t1_iters,
            t2_iters: c.t2_iters,
            j_max: c.j_max,
            log_every: c.log_every,
            seed_teacher: c.seed_teacher,
            seed_data: c.seed_data,
            seed_init: c.seed_init,
            gradient_mode: if c.population { GradientMode::Population } else { GradientMode::Empirical },
            learner_activation: c.learner.into(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(TslabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => TslabStatus::DimensionMismatch,
            e if e.is_numeric_abort() => TslabStatus::NumericAbort,
            _ => TslabStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TslabStatus::NullPointer, format!("`{what}` is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> TslabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TslabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TslabStatus::Internal
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn need(len: usize, have: usize) -> Result<(), Fail> {
    if have < len {
        Err(Fail(TslabStatus::BufferTooSmall, format!("buffer holds {have}, need {len}")))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread; empty if none. Valid
/// until the next failing call.
#[no_mangle]
pub extern "C" fn tslab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Teacher with `a` on the simplex and orthonormal rows of `w_star` (`d×d`,
/// row-major). Abs activation.
///
/// # Safety
/// `a` must hold `d` values, `w_star` `d*d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_teacher_new(
    d: usize,
    a: *const f64,
    w_star: *const f64,
    out: *mut *mut TslabTeacher,
) -> TslabStatus {
    guard(|| {
        let a = Array1::from(slice(a, d, "a")?.to_vec());
        let w = Array2::from_shape_vec((d, d), slice(w_star, d * d, "w_star")?.to_vec())
            .map_err(|e| Fail(TslabStatus::InvalidArgument, e.to_string()))?;
        put(out, TslabTeacher(TeacherNetwork::new(a, w, Activation::Abs)?))
    })
}

/// Random teacher: weights within ratio `kappa`, identity or Haar rotation.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_teacher_sample(
    d: usize,
    kappa: f64,
    random_rotation: bool,
    seed: u64,
    out: *mut *mut TslabTeacher,
) -> TslabStatus {
    guard(|| {
        let mode = if random_rotation { TeacherMode::RandomRotation } else { TeacherMode::Identity };
        put(out, TslabTeacher(sample_teacher(d, kappa, mode, seed)?))
    })
}

/// # Safety
/// `teacher` must come from a `tslab_teacher_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn tslab_teacher_free(teacher: *mut TslabTeacher) {
    if !teacher.is_null() {
        drop(Box::from_raw(teacher));
    }
}

/// # Safety
/// `teacher` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn tslab_teacher_dim(teacher: *const TslabTeacher) -> usize {
    teacher.as_ref().map(|t| t.0.dim()).unwrap_or(0)
}

/// `f*(x)` for one input of length `d`.
///
/// # Safety
/// `x` must hold `d` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_teacher_label(
    teacher: *const TslabTeacher,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> TslabStatus {
    guard(|| {
        let t = handle(teacher, "teacher")?;
        let x = slice(x, d, "x")?;
        let v = t.0.label(ArrayView1::from(x))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Ensemble from `m×d` row-major weights.
///
/// # Safety
/// `weights` must hold `m*d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_new(
    m: usize,
    d: usize,
    weights: *const f64,
    activation: TslabActivation,
    out: *mut *mut TslabEnsemble,
) -> TslabStatus {
    guard(|| {
        let w = Array2::from_shape_vec((m, d), slice(weights, m * d, "weights")?.to_vec())
            .map_err(|e| Fail(TslabStatus::InvalidArgument, e.to_string()))?;
        put(out, TslabEnsemble(StudentEnsemble::new(w, activation.into())?))
    })
}

/// `m` neurons drawn i.i.d. from `N(0, I/d)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_init(
    d: usize,
    m: usize,
    activation: TslabActivation,
    seed: u64,
    out: *mut *mut TslabEnsemble,
) -> TslabStatus {
    guard(|| put(out, TslabEnsemble(init_student(d, m, activation.into(), seed)?)))
}

/// # Safety
/// `ensemble` must come from a `tslab_ensemble_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_free(ensemble: *mut TslabEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_width(ensemble: *const TslabEnsemble) -> usize {
    ensemble.as_ref().map(|e| e.0.width()).unwrap_or(0)
}

/// # Safety
/// `ensemble` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_dim(ensemble: *const TslabEnsemble) -> usize {
    ensemble.as_ref().map(|e| e.0.dim()).unwrap_or(0)
}

/// Copies the `m×d` weights into `buf`.
///
/// # Safety
/// `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_weights(ensemble: *const TslabEnsemble, buf: *mut f64, len: usize) -> TslabStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let w = e.0.weights();
        need(w.len(), len)?;
        let dst = slice_mut(buf, len, "buf")?;
        for (d, s) in dst.iter_mut().zip(w.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// `f_W(x)` for one input of length `d`.
///
/// # Safety
/// `x` must hold `d` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_ensemble_predict(
    ensemble: *const TslabEnsemble,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> TslabStatus {
    guard(|| {
        let e = handle(ensemble, "ensemble")?;
        let v = e.0.predict(ArrayView1::from(slice(x, d, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Hermite coefficients of abs and ReLU through order `k_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_table_new(k_max: usize, out: *mut *mut TslabTable) -> TslabStatus {
    guard(|| put(out, TslabTable(hermite_coeffs(k_max)?)))
}

/// # Safety
/// `table` must come from `tslab_table_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn tslab_table_free(table: *mut TslabTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Normalized Hermite coefficient of order `k` for `activation`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_table_coeff(
    table: *const TslabTable,
    activation: TslabActivation,
    k: usize,
    out: *mut f64,
) -> TslabStatus {
    guard(|| {
        let t = handle(table, "table")?;
        if k > t.0.k_max() {
            return Err(Fail(TslabStatus::InvalidArgument, format!("order {k} exceeds table size {}", t.0.k_max())));
        }
        *out.as_mut().ok_or_else(|| null("out"))? = t.0.coeff(activation.into(), k);
        Ok(())
    })
}

/// Per-order losses for orders `0, 1, 2, 4, …, j_max` written to `losses`
/// (`*written` entries), plus the total and the tail bound.
///
/// # Safety
/// `losses` must hold `cap` values; the scalar outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_decompose(
    ensemble: *const TslabEnsemble,
    teacher: *const TslabTeacher,
    table: *const TslabTable,
    j_max: usize,
    losses: *mut f64,
    cap: usize,
    written: *mut usize,
    total: *mut f64,
    tail_bound: *mut f64,
) -> TslabStatus {
    guard(|| {
        let br = decompose_loss(
            &handle(ensemble, "ensemble")?.0,
            &handle(teacher, "teacher")?.0,
            j_max,
            &handle(table, "table")?.0,
        )?;
        need(br.per_order.len(), cap)?;
        slice_mut(losses, cap, "losses")?[..br.per_order.len()].copy_from_slice(&br.per_order);
        *written.as_mut().ok_or_else(|| null("written"))? = br.per_order.len();
        *total.as_mut().ok_or_else(|| null("total"))? = br.total;
        *tail_bound.as_mut().ok_or_else(|| null("tail_bound"))? = br.tail_bound;
        Ok(())
    })
}

/// Gradient of the decomposed loss through `j_max`, `m×d` row-major.
///
/// # Safety
/// `grad` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tslab_population_gradient(
    ensemble: *const TslabEnsemble,
    teacher: *const TslabTeacher,
    table: *const TslabTable,
    j_max: usize,
    grad: *mut f64,
    len: usize,
) -> TslabStatus {
    guard(|| {
        let g = population_gradient(
            &handle(ensemble, "ensemble")?.0,
            &handle(teacher, "teacher")?.0,
            j_max,
            &handle(table, "table")?.0,
        )?;
        need(g.len(), len)?;
        for (d, s) in slice_mut(grad, len, "grad")?.iter_mut().zip(g.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Library defaults for [`TslabTrainConfig`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_train_config_default(out: *mut TslabTrainConfig) -> TslabStatus {
    guard(|| {
        *out.as_mut().ok_or_else(|| null("out"))? = TslabTrainConfig::from(&TrainConfig::default());
        Ok(())
    })
}

/// Runs both training stages. On success `*ensemble` receives the trained
/// network and `*final_loss` the last logged loss.
///
/// # Safety
/// `config` must point to an initialized config; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tslab_train(
    config: *const TslabTrainConfig,
    ensemble: *mut *mut TslabEnsemble,
    final_loss: *mut f64,
) -> TslabStatus {
    guard(|| {
        let cfg = TrainConfig::from(handle(config, "config")?);
        let out = run_two_stage(&cfg)?;
        let loss = out.trace.last().map(|r| r.emp_loss).unwrap_or(f64::NAN);
        *final_loss.as_mut().ok_or_else(|| null("final_loss"))? = loss;
        put(ensemble, TslabEnsemble(out.ensemble))
    })
}
