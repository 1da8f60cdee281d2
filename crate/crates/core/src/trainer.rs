//! Two-stage truncated gradient descent.
//!
//! Every neuron takes a plain gradient step unless its squared norm exceeds
//! the stage's cap `threshold_factor / λ`, in which case it is frozen for
//! that step. Stage 1 uses `λ₀`, stage 2 the smaller `λ₁`.

use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::{init_student, sample_dataset, sample_teacher, Activation, Dataset, StudentEnsemble, TeacherMode, TeacherNetwork};
use crate::spectrum::{decompose_loss, hermite_coeffs, population_gradient, HermiteTable, DEFAULT_K_MAX};

/// Sample chunk for the empirical gradient reduction.
const SAMPLE_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Full-batch gradient of the empirical loss on the dataset.
    Empirical,
    /// Analytic gradient of the decomposed population loss (infinite data).
    Population,
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "empirical" => Ok(GradientMode::Empirical),
            "population" => Ok(GradientMode::Population),
            other => Err(Error::invalid(format!("unknown gradient mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub m: usize,
    pub n_samples: usize,
    pub kappa: f64,
    pub teacher_mode: TeacherMode,
    pub eta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Cap is `threshold_factor / λ`; 1 follows the algorithm's `‖w‖² ≤ 1/λ`.
    pub threshold_factor: f64,
    pub t1_iters: usize,
    pub t2_iters: usize,
    pub j_max: usize,
    pub log_every: usize,
    pub seed_teacher: u64,
    pub seed_data: u64,
    pub seed_init: u64,
    pub gradient_mode: GradientMode,
    pub learner_activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = 10;
        let eta = 10.0;
        let sched = default_schedule(d, eta);
        TrainConfig {
            d,
            m: 40,
            n_samples: 10_000,
            kappa: 1.0,
            teacher_mode: TeacherMode::Identity,
            eta,
            lambda0: sched.lambda0,
            lambda1: sched.lambda1,
            threshold_factor: 1.0,
            t1_iters: 1000,
            t2_iters: 1000,
            j_max: 12,
            log_every: 100,
            seed_teacher: 0,
            seed_data: 1,
            seed_init: 2,
            gradient_mode: GradientMode::Empirical,
            learner_activation: Activation::Abs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.m == 0 {
            return bad("d and m must be positive".into());
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda0 > 0.0) || !(self.lambda1 > 0.0) || self.lambda1 > self.lambda0 {
            return bad(format!(
                "need 0 < lambda1 <= lambda0, got lambda0={} lambda1={}",
                self.lambda0, self.lambda1
            ));
        }
        if !(self.threshold_factor > 0.0) {
            return bad("threshold_factor must be positive".into());
        }
        if self.j_max < 6 || self.j_max % 2 != 0 || self.j_max > DEFAULT_K_MAX {
            return bad(format!("j_max must be even and in [6, {DEFAULT_K_MAX}], got {}", self.j_max));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if self.gradient_mode == GradientMode::Empirical && self.n_samples == 0 {
            return bad("n_samples must be positive in empirical mode".into());
        }
        if !(self.kappa >= 1.0) {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        Ok(())
    }

    pub fn cap(&self, stage: u8) -> f64 {
        let lambda = if stage == 1 { self.lambda0 } else { self.lambda1 };
        self.threshold_factor / lambda
    }
}

/// One logged snapshot. Loss columns are absolute (squared-output units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub stage: u8,
    pub emp_loss: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l4: f64,
    pub l6: f64,
    pub tail: f64,
    pub max_norm_sq: f64,
    pub frac_truncated: f64,
}

impl TraceRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.emp_loss,
            self.l0,
            self.l1,
            self.l2,
            self.l4,
            self.l6,
            self.tail,
            self.max_norm_sq,
            self.frac_truncated,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t1: usize,
    pub t2: usize,
    pub lambda0: f64,
    pub lambda1: f64,
}

/// Stage lengths and truncation levels: `t1 = ⌈d²/(η C log d)⌉`,
/// `t2 = ⌈d^{1.1}/η⌉`, `λ₀ = d⁻⁴`, `λ₁ = d⁻⁸`. `C` defaults to 1.
pub fn default_schedule(d: usize, eta: f64) -> Schedule {
    schedule_with_constant(d, eta, 1.0)
}

pub fn schedule_with_constant(d: usize, eta: f64, c_kappa: f64) -> Schedule {
    let df = d as f64;
    let log_d = if d > 1 { df.ln() } else { 1.0 };
    Schedule {
        t1: (df * df / (eta * c_kappa * log_d)).ceil() as usize,
        t2: (df.powf(1.1) / eta).ceil() as usize,
        lambda0: df.powi(-4),
        lambda1: df.powi(-8),
    }
}

/// Gradient of `(1/N) Σ_j (f_W(x_j) − y_j)²` with respect to every neuron.
pub fn empirical_gradient(ensemble: &StudentEnsemble, dataset: &Dataset) -> Result<Array2<f64>> {
    Ok(empirical_loss_and_gradient(ensemble, dataset)?.1)
}

pub fn empirical_loss(ensemble: &StudentEnsemble, dataset: &Dataset) -> Result<f64> {
    check_dim(ensemble.dim(), dataset.dim())?;
    let pred = ensemble.predict_batch(&dataset.inputs)?;
    let n = dataset.len() as f64;
    Ok(pred
        .iter()
        .zip(dataset.labels.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

pub(crate) fn empirical_loss_and_gradient(ensemble: &StudentEnsemble, dataset: &Dataset) -> Result<(f64, Array2<f64>)> {
    check_dim(ensemble.dim(), dataset.dim())?;
    if dataset.labels.len() != dataset.inputs.nrows() {
        return Err(Error::invalid("dataset labels and inputs disagree in length"));
    }
    let w = ensemble.weights();
    let (m, d) = (ensemble.width(), ensemble.dim());
    let n = dataset.len();
    let act = ensemble.activation();
    let norms: Array1<f64> = ensemble.norms_sq().mapv(f64::sqrt);
    let mf = m as f64;

    // Per chunk: (Σ r², Σ_j r_j σ(z_ji), Σ_j r_j σ'(z_ji) x_j).
    let partials: Vec<(f64, Array1<f64>, Array2<f64>)> = (0..n.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * SAMPLE_CHUNK;
            let hi = (lo + SAMPLE_CHUNK).min(n);
            let x = dataset.inputs.slice(s![lo..hi, ..]);
            let mut z = x.dot(&w.t());
            let mut resid = Array1::zeros(hi - lo);
            for (j, zrow) in z.outer_iter().enumerate() {
                let f: f64 = zrow.iter().zip(norms.iter()).map(|(&zi, &ni)| ni * act.apply(zi)).sum::<f64>() / mf;
                resid[j] = f - dataset.labels[lo + j];
            }
            let sq = resid.iter().map(|r| r * r).sum::<f64>();
            let mut g1 = Array1::zeros(m);
            for (zrow, &r) in z.outer_iter().zip(resid.iter()) {
                g1.zip_mut_with(&zrow, |g, &zi| *g += r * act.apply(zi));
            }
            for (mut zrow, &r) in z.outer_iter_mut().zip(resid.iter()) {
                zrow.mapv_inplace(|zi| r * act.derivative(zi));
            }
            let g2 = z.t().dot(&x);
            (sq, g1, g2)
        })
        .collect();
    let mut sq = 0.0;
    let mut g1 = Array1::<f64>::zeros(m);
    let mut g2 = Array2::<f64>::zeros((m, d));
    for (s_, a, b) in partials {
        sq += s_;
        g1 += &a;
        g2 += &b;
    }
    let scale = 2.0 / (n as f64 * mf);
    let mut grad = g2;
    for (i, mut row) in grad.outer_iter_mut().enumerate() {
        let ni = norms[i];
        if ni == 0.0 {
            row.fill(0.0);
            continue;
        }
        row *= ni;
        row.scaled_add(g1[i] / ni, &w.row(i));
        row *= scale;
    }
    Ok((sq / n as f64, grad))
}

/// One truncated step with cap `1/λ`.
pub fn truncated_step(ensemble: &StudentEnsemble, grads: &Array2<f64>, eta: f64, lambda: f64) -> Result<StudentEnsemble> {
    truncated_step_capped(ensemble, grads, eta, 1.0 / lambda)
}

/// One truncated step: neurons with `‖w‖² > cap` (pre-step norm) stay put.
pub fn truncated_step_capped(ensemble: &StudentEnsemble, grads: &Array2<f64>, eta: f64, cap: f64) -> Result<StudentEnsemble> {
    if grads.dim() != ensemble.weights().dim() {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match ensemble {:?}",
            grads.dim(),
            ensemble.weights().dim()
        )));
    }
    let mut next = ensemble.clone();
    apply_step(&mut next, grads, eta, cap);
    Ok(next)
}

fn apply_step(ensemble: &mut StudentEnsemble, grads: &Array2<f64>, eta: f64, cap: f64) {
    if eta == 0.0 {
        return;
    }
    for (mut w, g) in ensemble.weights_mut().outer_iter_mut().zip(grads.outer_iter()) {
        if w.dot(&w) <= cap {
            w.scaled_add(-eta, &g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRecord>,
    pub ensemble: StudentEnsemble,
    pub teacher: TeacherNetwork,
}

/// Samples teacher, data and initialization from the config seeds and runs
/// both stages.
pub fn run_two_stage(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let teacher = sample_teacher(config.d, config.kappa, config.teacher_mode, config.seed_teacher)?;
    let dataset = match config.gradient_mode {
        GradientMode::Empirical => Some(sample_dataset(&teacher, config.n_samples, config.seed_data)?),
        GradientMode::Population => None,
    };
    let init = init_student(config.d, config.m, config.learner_activation, config.seed_init)?;
    let (trace, ensemble) = run_with(config, &teacher, dataset.as_ref(), init)?;
    Ok(TrainOutcome { trace, ensemble, teacher })
}

/// Runs both stages from a given initialization. `teacher` must be the abs
/// teacher the per-order losses are measured against; `dataset` is required
/// in empirical mode and may carry labels other than the teacher's (the
/// reduction pipeline trains on residual labels).
pub fn run_with(
    config: &TrainConfig,
    teacher: &TeacherNetwork,
    dataset: Option<&Dataset>,
    init: StudentEnsemble,
) -> Result<(Vec<TraceRecord>, StudentEnsemble)> {
    config.validate()?;
    check_dim(teacher.dim(), init.dim())?;
    let table = hermite_coeffs(DEFAULT_K_MAX)?;
    let dataset = match (config.gradient_mode, dataset) {
        (GradientMode::Empirical, Some(ds)) => {
            check_dim(init.dim(), ds.dim())?;
            Some(ds)
        }
        (GradientMode::Empirical, None) => return Err(Error::Config("empirical mode needs a dataset".into())),
        (GradientMode::Population, _) => None,
    };
    let total = config.t1_iters + config.t2_iters;
    let stage_of = |t: usize| if t <= config.t1_iters { 1u8 } else { 2u8 };
    let mut ensemble = init;
    let mut trace = Vec::new();

    for t in 0..=total {
        let stage = stage_of(t);
        let log_now = t % config.log_every == 0 || t == config.t1_iters || t == total;
        // Gradient for the step that leaves state t (none after the last).
        let step = if t < total {
            Some(match dataset {
                Some(ds) => empirical_loss_and_gradient(&ensemble, ds)?,
                None => (f64::NAN, population_gradient(&ensemble, teacher, config.j_max, &table)?),
            })
        } else {
            None
        };
        let grad_ok = step.as_ref().is_none_or(|(_, g)| g.iter().all(|v| v.is_finite()));
        if log_now || !grad_ok {
            let emp = match (&step, dataset) {
                (Some((l, _)), Some(_)) => *l,
                (None, Some(ds)) => empirical_loss(&ensemble, ds)?,
                (_, None) => f64::NAN,
            };
            let rec = snapshot(&ensemble, teacher, &table, config, t, stage, emp)?;
            if !rec.is_finite() || !grad_ok {
                return Err(Error::Diverged {
                    iter: t,
                    record: Box::new(rec),
                });
            }
            trace.push(rec);
        }
        if let Some((_, g)) = step {
            let step_stage = if t < config.t1_iters { 1 } else { 2 };
            apply_step(&mut ensemble, &g, config.eta, config.cap(step_stage));
        }
    }
    Ok((trace, ensemble))
}

fn snapshot(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    table: &HermiteTable,
    config: &TrainConfig,
    iter: usize,
    stage: u8,
    emp_loss: f64,
) -> Result<TraceRecord> {
    let br = decompose_loss(ensemble, teacher, config.j_max, table)?;
    let norms = ensemble.norms_sq();
    let cap = config.cap(stage);
    let max_norm_sq = norms.iter().copied().fold(0.0, f64::max);
    let truncated = norms.iter().filter(|&&n| n > cap).count();
    let get = |k| br.order(k).unwrap_or(0.0);
    Ok(TraceRecord {
        iter,
        stage,
        // Population mode has no dataset; log the loss actually being descended.
        emp_loss: if emp_loss.is_nan() && !norms.iter().any(|v| v.is_nan()) { br.total } else { emp_loss },
        l0: get(0),
        l1: get(1),
        l2: get(2),
        l4: get(4),
        l6: get(6),
        tail: br.tail_bound,
        max_norm_sq,
        frac_truncated: truncated as f64 / ensemble.width() as f64,
    })
}

/// Largest squared norm among neurons.
pub fn max_norm_sq(ensemble: &StudentEnsemble) -> f64 {
    ensemble.norms_sq().iter().copied().fold(0.0, f64::max)
}

