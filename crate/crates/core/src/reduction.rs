//! Reduction from a ReLU teacher to the absolute-value labeling.
//!
//! Since `relu(u) = (|u| + u)/2`, a ReLU teacher is an abs teacher plus the
//! linear map `x ↦ ½ aᵀW*x`. On symmetric inputs that linear part is exactly
//! the least-squares regressor, so `2(y − zᵀx)` recovers the abs labels.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, Dataset, TeacherNetwork};
use crate::numeric::rng;

/// Condition number above which the normal equations are abandoned for QR.
pub const COND_LIMIT: f64 = 1e8;
/// Relative tolerance on the normal-equation residual `XᵀXz − Xᵀy`.
pub const CERTIFICATE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub z: Array1<f64>,
}

impl LinearRegressor {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        self.z.dot(&x)
    }
}

/// `z* = ½ W*ᵀ a`.
pub fn closed_form_regressor(teacher: &TeacherNetwork) -> Result<LinearRegressor> {
    if teacher.activation() != Activation::Relu {
        return Err(Error::invalid("closed-form regressor needs a ReLU teacher"));
    }
    Ok(LinearRegressor {
        z: teacher.w_star().t().dot(teacher.a()) * 0.5,
    })
}

/// Least-squares fit without intercept.
///
/// Solves the normal equations by Cholesky unless their condition estimate
/// exceeds [`COND_LIMIT`], in which case a QR factorization of `X` is used.
/// The answer is accepted only if it satisfies the normal equations to
/// [`CERTIFICATE_TOL`].
pub fn fit_least_squares(dataset: &Dataset) -> Result<LinearRegressor> {
    let (n, d) = dataset.inputs.dim();
    check_dim(n, dataset.labels.len())?;
    if d == 0 || n < d {
        return Err(Error::invalid(format!("need N >= d > 0, got N={n}, d={d}")));
    }
    let x = to_na(&dataset.inputs);
    let y = DVector::from_iterator(n, dataset.labels.iter().copied());
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&y);

    let eig = xtx.clone().symmetric_eigen();
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    if !(lo > hi * f64::EPSILON * n as f64) {
        return Err(Error::Singular(format!(
            "design matrix is rank deficient (eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let z = match xtx.clone().cholesky() {
        Some(ch) if hi / lo <= COND_LIMIT => ch.solve(&xty),
        _ => {
            let qr = x.clone().qr();
            let qty = qr.q().tr_mul(&y);
            qr.r()
                .solve_upper_triangular(&qty)
                .ok_or_else(|| Error::Singular("triangular factor is singular".into()))?
        }
    };
    let resid = (&xtx * &z - &xty).norm();
    let scale = xty.norm().max(xtx.norm() * z.norm());
    if resid > CERTIFICATE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!(
            "normal equations not satisfied: residual {resid:e} against scale {scale:e}"
        )));
    }
    Ok(LinearRegressor {
        z: Array1::from_iter(z.iter().copied()),
    })
}

/// `ŷ_j = 2(y_j − zᵀx_j)`, inputs unchanged.
pub fn residual_labels(dataset: &Dataset, reg: &LinearRegressor) -> Result<Dataset> {
    check_dim(dataset.dim(), reg.z.len())?;
    let lin = dataset.inputs.dot(&reg.z);
    Ok(Dataset {
        inputs: dataset.inputs.clone(),
        labels: (&dataset.labels - &lin) * 2.0,
        seed: dataset.seed,
    })
}

/// Dataset with inputs `N(μ, I)` labeled by the teacher. Used as the
/// negative control: the reduction relies on `x` and `−x` being equally
/// likely.
pub fn shifted_dataset(teacher: &TeacherNetwork, n: usize, mu: ArrayView1<f64>, seed: u64) -> Result<Dataset> {
    let d = teacher.dim();
    check_dim(d, mu.len())?;
    let mut rng = rng(seed);
    let inputs = Array2::from_shape_fn((n, d), |(_, k)| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g + mu[k]
    });
    let labels = Array1::from_iter(inputs.outer_iter().map(|x| teacher.label_unchecked(x)));
    Ok(Dataset { inputs, labels, seed })
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, sample_teacher, TeacherMode};
    use ndarray::array;

    #[test]
    fn closed_form_examples() {
        let t = TeacherNetwork::new(array![0.5, 0.5], Array2::eye(2), Activation::Relu).unwrap();
        assert_eq!(closed_form_regressor(&t).unwrap().z, array![0.25, 0.25]);
        let abs = t.with_activation(Activation::Abs);
        assert!(closed_form_regressor(&abs).is_err());
    }

    #[test]
    fn realizable_linear() {
        let c = array![1.0, -2.0, 0.5];
        let mut r = rng(4);
        let inputs = Array2::from_shape_fn((50, 3), |_| StandardNormal.sample(&mut r));
        let labels = inputs.dot(&c);
        let ds = Dataset { inputs, labels, seed: 4 };
        let z = fit_least_squares(&ds).unwrap().z;
        assert!((&z - &c).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn square_system_interpolates() {
        let inputs = array![[2.0, 1.0], [1.0, 3.0]];
        let labels = array![1.0, -1.0];
        let ds = Dataset { inputs: inputs.clone(), labels: labels.clone(), seed: 0 };
        let z = fit_least_squares(&ds).unwrap().z;
        assert!((&inputs.dot(&z) - &labels).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_deficient_errors() {
        let inputs = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let ds = Dataset { inputs, labels: array![1.0, 2.0, 3.0], seed: 0 };
        assert!(matches!(fit_least_squares(&ds), Err(Error::Singular(_))));
    }

    #[test]
    fn residuals_recover_abs_labels() {
        let t = sample_teacher(6, 3.0, TeacherMode::RandomRotation, 8).unwrap().with_activation(Activation::Relu);
        let ds = sample_dataset(&t, 500, 1).unwrap();
        let res = residual_labels(&ds, &closed_form_regressor(&t).unwrap()).unwrap();
        let abs = t.with_activation(Activation::Abs);
        for (x, y) in res.inputs.outer_iter().zip(res.labels.iter()) {
            assert!((abs.label(x).unwrap() - y).abs() < 1e-12);
        }
        let doubled = residual_labels(&ds, &LinearRegressor { z: Array1::zeros(6) }).unwrap();
        assert_eq!(doubled.labels, &ds.labels * 2.0);
    }
}
