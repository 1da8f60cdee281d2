//! Teachers, students and Gaussian datasets.
//!
//! The teacher is `f*(x) = Σ_i a_i |⟨w_i*, x⟩|` with orthonormal rows `w_i*`
//! and simplex weights `a`. The student stores only its input weights; the
//! output coefficient of neuron `i` is its norm, so
//! `f_W(x) = (1/m) Σ_i ‖w_i‖·σ(⟨w_i, x⟩)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numeric::{dot_view, gaussian_matrix, rng};

/// Orthonormality tolerance for teacher input matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Tolerance on `Σ a_i = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;
const TEACHER_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Abs,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Abs => z.abs(),
        }
    }

    /// Subgradient, with value 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Abs => "abs",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "abs" => Ok(Activation::Abs),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    Identity,
    RandomRotation,
}

impl FromStr for TeacherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(TeacherMode::Identity),
            "random_rotation" | "rotation" => Ok(TeacherMode::RandomRotation),
            other => Err(Error::invalid(format!("unknown teacher mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNetwork {
    a: Array1<f64>,
    w_star: Array2<f64>,
    activation: Activation,
    kappa: f64,
}

impl TeacherNetwork {
    /// Builds a teacher from explicit weights. `w_star` holds one direction
    /// per row and must be orthonormal; `a` must be nonnegative and sum to 1.
    /// The recorded κ is the tightest band `[1/(κd), κ/d]` containing `a`.
    pub fn new(a: Array1<f64>, w_star: Array2<f64>, activation: Activation) -> Result<Self> {
        let d = a.len();
        if d == 0 {
            return Err(Error::invalid("teacher dimension must be positive"));
        }
        if w_star.nrows() != d || w_star.ncols() != d {
            return Err(Error::invalid(format!(
                "w_star must be {d}x{d}, got {}x{}",
                w_star.nrows(),
                w_star.ncols()
            )));
        }
        if a.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::invalid("output weights must be finite and nonnegative"));
        }
        let sum: f64 = a.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("output weights sum to {sum}, expected 1")));
        }
        let err = orthonormality_error(&w_star);
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("w_star is not orthonormal (max deviation {err:e})")));
        }
        let kappa = tightest_kappa(&a);
        Ok(TeacherNetwork {
            a,
            w_star,
            activation,
            kappa,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &Array1<f64> {
        &self.a
    }

    pub fn w_star(&self) -> &Array2<f64> {
        &self.w_star
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Same weights, different activation. Used by the reduction, which
    /// trains against the abs teacher sharing a ReLU teacher's `(a, W*)`.
    pub fn with_activation(&self, activation: Activation) -> Self {
        TeacherNetwork {
            activation,
            ..self.clone()
        }
    }

    pub fn label(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.label_unchecked(x))
    }

    #[inline]
    pub(crate) fn label_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        self.w_star
            .outer_iter()
            .zip(self.a.iter())
            .map(|(w, &a)| a * self.activation.apply(dot_view(w, x)))
            .sum()
    }
}

/// `max |WᵀW − I|` entrywise.
pub fn orthonormality_error(w: &Array2<f64>) -> f64 {
    let g = w.t().dot(w);
    g.indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

fn tightest_kappa(a: &Array1<f64>) -> f64 {
    let d = a.len() as f64;
    a.iter()
        .map(|&ai| {
            let s = ai * d;
            if s <= 0.0 {
                f64::INFINITY
            } else {
                s.max(1.0 / s)
            }
        })
        .fold(1.0, f64::max)
}

/// Samples a teacher with `a_i` uniform on `[1/(κd), κ/d]`, renormalized to
/// the simplex and re-checked against the band.
pub fn sample_teacher(d: usize, kappa: f64, mode: TeacherMode, seed: u64) -> Result<TeacherNetwork> {
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    let mut rng = rng(seed);
    let df = d as f64;
    let (lo, hi) = (1.0 / (kappa * df), kappa / df);
    // Relative slack for the re-check so that κ = 1 survives rounding.
    let slack = 1e-12;
    let mut a = None;
    for _ in 0..TEACHER_RETRIES {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let s: f64 = raw.iter().sum();
        let cand: Vec<f64> = raw.iter().map(|x| x / s).collect();
        if cand.iter().all(|&x| x >= lo * (1.0 - slack) && x <= hi * (1.0 + slack)) {
            a = Some(Array1::from(cand));
            break;
        }
    }
    let a = a.ok_or_else(|| Error::RetryBudgetExhausted {
        attempts: TEACHER_RETRIES,
        reason: format!("normalized weights left the band [{lo}, {hi}]"),
    })?;
    let w_star = match mode {
        TeacherMode::Identity => Array2::eye(d),
        TeacherMode::RandomRotation => haar_orthogonal(d, &mut rng),
    };
    let mut t = TeacherNetwork::new(a, w_star, Activation::Abs)?;
    t.kappa = kappa;
    Ok(t)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub(crate) fn haar_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Array2<f64> {
    let g = gaussian_matrix(rng, d, d, 1.0);
    let m = DMatrix::from_fn(d, d, |i, j| g[[i, j]]);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((d, d), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentEnsemble {
    weights: Array2<f64>,
    activation: Activation,
}

impl StudentEnsemble {
    /// `weights` holds one neuron per row.
    pub fn new(weights: Array2<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 {
            return Err(Error::invalid("ensemble needs at least one neuron"));
        }
        if weights.ncols() == 0 {
            return Err(Error::invalid("ensemble dimension must be positive"));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ensemble weights must be finite"));
        }
        Ok(StudentEnsemble { weights, activation })
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    /// Squared norm of every neuron.
    pub fn norms_sq(&self) -> Array1<f64> {
        self.weights.map_axis(Axis(1), |w| w.dot(&w))
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        let s: f64 = self
            .weights
            .outer_iter()
            .map(|w| {
                let n = w.dot(&w).sqrt();
                n * self.activation.apply(dot_view(w, x))
            })
            .sum();
        s / self.width() as f64
    }

    /// Predictions for every row of `inputs` (batched through a matrix product).
    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), inputs.ncols())?;
        let z = inputs.dot(&self.weights.t());
        let norms = self.norms_sq().mapv(f64::sqrt);
        let m = self.width() as f64;
        let act = self.activation;
        Ok(z.map_axis(Axis(1), |row| {
            row.iter().zip(norms.iter()).map(|(&zi, &n)| n * act.apply(zi)).sum::<f64>() / m
        }))
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Array1<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }
}

pub fn teacher_label(teacher: &TeacherNetwork, x: ArrayView1<f64>) -> Result<f64> {
    teacher.label(x)
}

pub fn student_predict(ensemble: &StudentEnsemble, x: ArrayView1<f64>) -> Result<f64> {
    ensemble.predict(x)
}

/// `n` i.i.d. `N(0, I_d)` inputs labeled by the teacher.
pub fn sample_dataset(teacher: &TeacherNetwork, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    let mut rng = rng(seed);
    let inputs = gaussian_matrix(&mut rng, n, teacher.dim(), 1.0);
    let labels = inputs.map_axis(Axis(1), |x| teacher.label_unchecked(x));
    Ok(Dataset { inputs, labels, seed })
}

/// `m` neurons i.i.d. `N(0, I_d / d)`.
pub fn init_student(d: usize, m: usize, activation: Activation, seed: u64) -> Result<StudentEnsemble> {
    if m == 0 || d == 0 {
        return Err(Error::invalid("init_student needs d >= 1 and m >= 1"));
    }
    let mut rng = rng(seed);
    let w = gaussian_matrix(&mut rng, m, d, 1.0 / (d as f64).sqrt());
    StudentEnsemble::new(w, activation)
}

/// The width-`d` abs ensemble with one neuron `√(d·a_i)·w_i*` per teacher
/// direction, which computes the teacher exactly.
pub fn exact_fit_ensemble(teacher: &TeacherNetwork) -> StudentEnsemble {
    let d = teacher.dim();
    let mut w = teacher.w_star().clone();
    for (mut row, &ai) in w.outer_iter_mut().zip(teacher.a().iter()) {
        row *= (d as f64 * ai).sqrt();
    }
    StudentEnsemble {
        weights: w,
        activation: Activation::Abs,
    }
}
