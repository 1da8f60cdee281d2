//! Hermite machinery for Gaussian-input losses.
//!
//! For unit vectors `u, v` and `g ~ N(0, I)`,
//! `E[σ(⟨u,g⟩) τ(⟨v,g⟩)] = Σ_k σ_k τ_k ⟨u,v⟩^k`, where `σ_k, τ_k` are the
//! normalized Hermite coefficients of the two activations. Writing the
//! student as `Σ_i β_i σ(⟨ū_i, x⟩)` with `β_i = ‖w_i‖²/m`, the population
//! loss splits into one squared tensor residual per order `k`:
//!
//! ```text
//! L_k = σ_k² Σ_{i,i'} β_i β_i' ⟨ū_i,ū_i'⟩^k − 2 σ_k τ_k Σ_{i,l} β_i a_l ⟨ū_i,w_l*⟩^k
//!       + τ_k² Σ_{l,l'} a_l a_l' ⟨w_l*,w_l'*⟩^k
//! ```
//!
//! Everything below works on these pairwise sums; no order-k tensor is ever
//! formed.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, StudentEnsemble, TeacherNetwork};
use crate::numeric::{chunk_rng, gaussian_matrix, Moments, CHUNK};

pub const DEFAULT_J_MAX: usize = 12;
pub const DEFAULT_K_MAX: usize = 40;

/// Gauss–Laguerre nodes used for the half-line coefficient integrals.
pub const QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    k_max: usize,
    abs_coeff: Vec<f64>,
    relu_coeff: Vec<f64>,
    closed_form_c: Vec<Option<f64>>,
}

impl HermiteTable {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Normalized Hermite coefficients of `|z|`.
    pub fn abs_coeff(&self) -> &[f64] {
        &self.abs_coeff
    }

    /// Normalized Hermite coefficients of `relu(z)`.
    pub fn relu_coeff(&self) -> &[f64] {
        &self.relu_coeff
    }

    /// Closed form `c_k = 2[(k−3)!!]² / (π k!)` for even `k`; `None` for odd
    /// `k`, where the formula has no meaning for this activation.
    pub fn closed_form_c(&self) -> &[Option<f64>] {
        &self.closed_form_c
    }

    pub fn coeff(&self, act: Activation, k: usize) -> f64 {
        match act {
            Activation::Abs => self.abs_coeff[k],
            Activation::Relu => self.relu_coeff[k],
        }
    }

    /// `b_0 = 4 c_0`.
    pub fn b0(&self) -> f64 {
        4.0 * self.abs_coeff[0].powi(2)
    }

    /// `b_1 = 2 σ_1²` with the ReLU coefficient `σ_1 = 1/2` standing in for
    /// the undefined `c_1`.
    pub fn b1(&self) -> f64 {
        2.0 * self.relu_coeff[1].powi(2)
    }

    /// `b_{2j} = 4j · c_{2j}` for `j ≥ 1`.
    pub fn b(&self, j: usize) -> f64 {
        4.0 * j as f64 * self.abs_coeff[2 * j].powi(2)
    }

    /// `b'_{2j} = (4j − 4) · c_{2j}` for `j ≥ 1`.
    pub fn b_prime(&self, j: usize) -> f64 {
        (4.0 * j as f64 - 4.0) * self.abs_coeff[2 * j].powi(2)
    }

    /// Envelope `Σ_{k > j_max} abs_coeff[k]²`, summed through `k_max` and
    /// extrapolated past it with the power law fitted to the last two even
    /// coefficients.
    pub fn tail_sum(&self, j_max: usize) -> f64 {
        let k = self.k_max - self.k_max % 2;
        let within: f64 = ((j_max + 1)..=self.k_max).map(|i| self.abs_coeff[i].powi(2)).sum();
        if k < 4 {
            return within;
        }
        let ck = self.abs_coeff[k].powi(2);
        let cprev = self.abs_coeff[k - 2].powi(2);
        let p = (cprev / ck).ln() / (k as f64 / (k - 2) as f64).ln();
        let beyond = if p > 1.0 {
            ck * k as f64 / (2.0 * (p - 1.0))
        } else {
            f64::INFINITY
        };
        within + beyond
    }
}

/// Hermite coefficient table through order `k_max`.
///
/// For even `k`, `E[|g| h_k(g)] = √(2/π) ∫_0^∞ h_k(√(2t)) e^{-t} dt`, and
/// the integrand is a polynomial of degree `k/2` in `t`, so Gauss–Laguerre
/// quadrature is exact up to rounding. Odd abs coefficients vanish by
/// symmetry; ReLU coefficients follow from `relu(z) = (|z| + z)/2`.
pub fn hermite_coeffs(k_max: usize) -> Result<HermiteTable> {
    if k_max < 2 {
        return Err(Error::invalid(format!("k_max must be at least 2, got {k_max}")));
    }
    if k_max > 4 * QUADRATURE_NODES - 2 {
        return Err(Error::Quadrature {
            order: k_max,
            nodes: QUADRATURE_NODES,
        });
    }
    let (nodes, weights) = gauss_laguerre(QUADRATURE_NODES);
    let mut abs_coeff = vec![0.0; k_max + 1];
    let scale = (2.0 / std::f64::consts::PI).sqrt();
    let mut h = vec![0.0; k_max + 1];
    let mut acc = vec![0.0; k_max + 1];
    for (&t, &w) in nodes.iter().zip(&weights) {
        normalized_hermite((2.0 * t).sqrt(), &mut h);
        for (a, hk) in acc.iter_mut().zip(&h) {
            *a += w * hk;
        }
    }
    for k in (0..=k_max).step_by(2) {
        abs_coeff[k] = scale * acc[k];
    }
    let relu_coeff = (0..=k_max)
        .map(|k| match k {
            1 => 0.5,
            k if k % 2 == 0 => abs_coeff[k] / 2.0,
            _ => 0.0,
        })
        .collect();
    Ok(HermiteTable {
        k_max,
        abs_coeff,
        relu_coeff,
        closed_form_c: closed_form_c(k_max),
    })
}

/// `c_k = 2[(k−3)!!]² / (π k!)` with `(−1)!! = 1` and `[(−3)!!]² = 1`,
/// built through the ratio `c_{k+2}/c_k = (k−1)² / ((k+1)(k+2))`.
fn closed_form_c(k_max: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; k_max + 1];
    let mut c = 2.0 / std::f64::consts::PI;
    let mut k = 0;
    while k <= k_max {
        out[k] = Some(c);
        let kf = k as f64;
        c *= (kf - 1.0).powi(2) / ((kf + 1.0) * (kf + 2.0));
        k += 2;
    }
    out
}

/// Orthonormal probabilists' Hermite polynomials `h_k = He_k/√(k!)` at `x`.
fn normalized_hermite(x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// Gauss–Laguerre rule (weight `e^{-t}` on `[0, ∞)`): Golub–Welsch for the
/// starting nodes, then Newton polishing and the classical weight formula.
fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (2 * i + 1) as f64
        } else if i + 1 == j {
            j as f64
        } else if j + 1 == i {
            i as f64
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let laguerre = |x: f64| {
        // (L_n(x), L_{n-1}(x))
        let (mut p0, mut p1) = (1.0, 1.0 - x);
        for k in 1..n {
            let kf = k as f64;
            let p2 = ((2.0 * kf + 1.0 - x) * p1 - kf * p0) / (kf + 1.0);
            p0 = p1;
            p1 = p2;
        }
        (p1, p0)
    };
    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (ln, lnm1) = laguerre(*x);
            let deriv = nf * (ln - lnm1) / *x;
            let step = ln / deriv;
            *x -= step;
            if step.abs() <= 1e-15 * x.abs() {
                break;
            }
        }
        let (ln, lnm1) = laguerre(*x);
        let deriv = nf * (ln - lnm1) / *x;
        weights.push(1.0 / (*x * deriv * deriv));
    }
    (nodes, weights)
}

/// Orders reported by the decomposition: 0, 1, then the even orders up to
/// `j_max`. Odd orders above 1 vanish for both activations.
pub fn reported_orders(j_max: usize) -> Vec<usize> {
    let mut v = vec![0];
    if j_max >= 1 {
        v.push(1);
    }
    v.extend((2..=j_max).step_by(2));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub orders: Vec<usize>,
    pub per_order: Vec<f64>,
    /// Order-by-order energy of the teacher alone, `τ_k² Σ a_l a_l' ⟨w_l*,w_l'*⟩^k`.
    pub teacher_energy: Vec<f64>,
    pub tail_bound: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn order(&self, k: usize) -> Option<f64> {
        self.orders.iter().position(|&o| o == k).map(|i| self.per_order[i])
    }

    /// Order-`k` loss as a fraction of the teacher's order-`k` energy.
    pub fn relative(&self, k: usize) -> Option<f64> {
        let i = self.orders.iter().position(|&o| o == k)?;
        let e = self.teacher_energy[i];
        (e > 0.0).then(|| self.per_order[i] / e)
    }
}

/// Unit directions and masses of an ensemble.
struct Geometry {
    units: Array2<f64>,
    norms: Array1<f64>,
    beta: Array1<f64>,
}

impl Geometry {
    fn new(ensemble: &StudentEnsemble) -> Self {
        let w = ensemble.weights();
        let m = ensemble.width() as f64;
        let norms = ensemble.norms_sq().mapv(f64::sqrt);
        let mut units = w.clone();
        for (mut row, &n) in units.outer_iter_mut().zip(norms.iter()) {
            if n > 0.0 {
                row /= n;
            } else {
                row.fill(0.0);
            }
        }
        let beta = norms.mapv(|n| n * n / m);
        Geometry { units, norms, beta }
    }
}

/// Per-order learner/teacher coefficient pairs for the given orders.
fn order_coeffs(
    table: &HermiteTable,
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    orders: &[usize],
) -> Vec<(usize, f64, f64)> {
    orders
        .iter()
        .map(|&k| (k, table.coeff(ensemble.activation(), k), table.coeff(teacher.activation(), k)))
        .collect()
}

fn check_inputs(ensemble: &StudentEnsemble, teacher: &TeacherNetwork, table: &HermiteTable, j: usize) -> Result<()> {
    check_dim(teacher.dim(), ensemble.dim())?;
    if j > table.k_max() {
        return Err(Error::invalid(format!("order {j} exceeds table k_max {}", table.k_max())));
    }
    Ok(())
}

/// Raw pairwise sums `(S_k, X_k, T_k)` per requested order: student–student,
/// student–teacher and teacher–teacher.
fn pairwise_sums(
    geo: &Geometry,
    teacher: &TeacherNetwork,
    orders: &[usize],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = geo.beta.len();
    let nk = orders.len();
    let kmax = orders.iter().copied().max().unwrap_or(0);
    let accumulate = |c: f64, weight: f64, out: &mut [f64], pw: &mut [f64]| {
        pw[0] = 1.0;
        for p in 1..=kmax {
            pw[p] = pw[p - 1] * c;
        }
        for (o, &k) in out.iter_mut().zip(orders) {
            *o += weight * pw[k];
        }
    };

    // Student–student, over row chunks with a deterministic combine.
    let partials: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(m);
            let gram = geo.units.slice(s![lo..hi, ..]).dot(&geo.units.t());
            let mut out = vec![0.0; nk];
            let mut pw = vec![0.0; kmax + 1];
            for (r, i) in (lo..hi).enumerate() {
                let bi = geo.beta[i];
                if bi == 0.0 {
                    continue;
                }
                for q in 0..m {
                    let bq = geo.beta[q];
                    if bq == 0.0 {
                        continue;
                    }
                    let c = if q == i { 1.0 } else { gram[[r, q]] };
                    accumulate(c, bi * bq, &mut out, &mut pw);
                }
            }
            out
        })
        .collect();
    let mut ss = vec![0.0; nk];
    for p in &partials {
        for (a, b) in ss.iter_mut().zip(p) {
            *a += b;
        }
    }

    let a = teacher.a();
    let ws = teacher.w_star();
    let mut xs = vec![0.0; nk];
    let mut pw = vec![0.0; kmax + 1];
    let cross = geo.units.dot(&ws.t());
    for i in 0..m {
        let bi = geo.beta[i];
        if bi == 0.0 {
            continue;
        }
        for (l, &al) in a.iter().enumerate() {
            accumulate(cross[[i, l]], bi * al, &mut xs, &mut pw);
        }
    }

    let mut ts = vec![0.0; nk];
    let tg = ws.dot(&ws.t());
    for (l, &al) in a.iter().enumerate() {
        for (l2, &al2) in a.iter().enumerate() {
            let c = if l == l2 { 1.0 } else { tg[[l, l2]] };
            accumulate(c, al * al2, &mut ts, &mut pw);
        }
    }
    (ss, xs, ts)
}

/// Order-`j` term of `E[(f_W − f*)²]`.
pub fn order_loss(ensemble: &StudentEnsemble, teacher: &TeacherNetwork, j: usize, table: &HermiteTable) -> Result<f64> {
    check_inputs(ensemble, teacher, table, j)?;
    let coeffs = order_coeffs(table, ensemble, teacher, &[j]);
    let (_, s, t) = coeffs[0];
    if s == 0.0 && t == 0.0 {
        return Ok(0.0);
    }
    let geo = Geometry::new(ensemble);
    let (ss, xs, ts) = pairwise_sums(&geo, teacher, &[j]);
    Ok(s * s * ss[0] - 2.0 * s * t * xs[0] + t * t * ts[0])
}

/// Per-order losses for orders `0, 1, 2, 4, …, j_max`, plus a Cauchy–Schwarz
/// envelope for everything above `j_max`.
pub fn decompose_loss(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    j_max: usize,
    table: &HermiteTable,
) -> Result<LossBreakdown> {
    if j_max % 2 != 0 {
        return Err(Error::invalid(format!("j_max must be even, got {j_max}")));
    }
    check_inputs(ensemble, teacher, table, j_max)?;
    let orders = reported_orders(j_max);
    let coeffs = order_coeffs(table, ensemble, teacher, &orders);
    let geo = Geometry::new(ensemble);
    let (ss, xs, ts) = pairwise_sums(&geo, teacher, &orders);
    let mut per_order = Vec::with_capacity(orders.len());
    let mut teacher_energy = Vec::with_capacity(orders.len());
    for (i, &(_, s, t)) in coeffs.iter().enumerate() {
        per_order.push(s * s * ss[i] - 2.0 * s * t * xs[i] + t * t * ts[i]);
        teacher_energy.push(t * t * ts[i]);
    }
    let mass = geo.beta.sum() + teacher.a().sum();
    let tail_bound = table.tail_sum(j_max) * mass * mass;
    let total = per_order.iter().sum();
    Ok(LossBreakdown {
        orders,
        per_order,
        teacher_energy,
        tail_bound,
        total,
    })
}

/// Gradient of `Σ_k L_k` over the listed orders with respect to every neuron.
///
/// With `c = ⟨ū_i, ū_q⟩` and `P(c) = Σ_k σ_k²(2−k)c^k`, `R(c) = Σ_k σ_k² k c^{k−1}`:
///
/// ```text
/// ∇_i = (2/m) [ Σ_q β_q (P(c) w_i + R(c) ‖w_i‖ ū_q) − Σ_l a_l (P̃(d) w_i + R̃(d) ‖w_i‖ w_l*) ]
/// ```
///
/// where the teacher sums use `σ_k τ_k` in place of `σ_k²` and
/// `d = ⟨ū_i, w_l*⟩`. Zero-norm neurons get a zero gradient.
pub fn gradient_for_orders(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    orders: &[usize],
    table: &HermiteTable,
) -> Result<Array2<f64>> {
    let top = orders.iter().copied().max().unwrap_or(0);
    check_inputs(ensemble, teacher, table, top)?;
    let coeffs = order_coeffs(table, ensemble, teacher, orders);
    let ss_coef: Vec<(usize, f64)> = coeffs
        .iter()
        .filter(|c| c.1 != 0.0)
        .map(|&(k, s, _)| (k, s * s))
        .collect();
    let st_coef: Vec<(usize, f64)> = coeffs
        .iter()
        .filter(|c| c.1 * c.2 != 0.0)
        .map(|&(k, s, t)| (k, s * t))
        .collect();
    let geo = Geometry::new(ensemble);
    let m = ensemble.width();
    let d = ensemble.dim();
    let a = teacher.a();
    let ws = teacher.w_star();

    let eval = |coef: &[(usize, f64)], c: f64| -> (f64, f64) {
        let mut p = 0.0;
        let mut r = 0.0;
        for &(k, w) in coef {
            let kf = k as f64;
            let ck1 = if k == 0 { 0.0 } else { c.powi(k as i32 - 1) };
            let ck = if k == 0 { 1.0 } else { ck1 * c };
            p += w * (2.0 - kf) * ck;
            r += w * kf * ck1;
        }
        (p, r)
    };

    let mut grad = Array2::zeros((m, d));
    let rows: Vec<(usize, Array2<f64>)> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(m);
            let mut block = Array2::zeros((hi - lo, d));
            let gram = geo.units.slice(s![lo..hi, ..]).dot(&geo.units.t());
            let cross = geo.units.slice(s![lo..hi, ..]).dot(&ws.t());
            // Per-row weights on the ū_q directions and on the teacher rows.
            let mut rq = Array2::zeros((hi - lo, m));
            let mut rl = Array2::zeros((hi - lo, a.len()));
            let mut radial = vec![0.0; hi - lo];
            for (r, i) in (lo..hi).enumerate() {
                if geo.norms[i] == 0.0 {
                    continue;
                }
                let mut pr = 0.0;
                for q in 0..m {
                    let bq = geo.beta[q];
                    if bq == 0.0 {
                        continue;
                    }
                    let c = if q == i { 1.0 } else { gram[[r, q]] };
                    let (p, rr) = eval(&ss_coef, c);
                    pr += bq * p;
                    rq[[r, q]] = bq * rr * geo.norms[i];
                }
                for (l, &al) in a.iter().enumerate() {
                    let (p, rr) = eval(&st_coef, cross[[r, l]]);
                    pr -= al * p;
                    rl[[r, l]] = -al * rr * geo.norms[i];
                }
                radial[r] = pr;
            }
            block += &rq.dot(&geo.units);
            block += &rl.dot(ws);
            let w = ensemble.weights();
            for (r, i) in (lo..hi).enumerate() {
                let mut row = block.row_mut(r);
                row.scaled_add(radial[r], &w.row(i));
                row *= 2.0 / m as f64;
            }
            (lo, block)
        })
        .collect();
    for (lo, block) in rows {
        let n = block.nrows();
        grad.slice_mut(s![lo..lo + n, ..]).assign(&block);
    }
    Ok(grad)
}

/// Gradient of the decomposed loss through order `j_max`.
pub fn population_gradient(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    j_max: usize,
    table: &HermiteTable,
) -> Result<Array2<f64>> {
    gradient_for_orders(ensemble, teacher, &reported_orders(j_max), table)
}

/// Gradient of the single order-`k` term.
pub fn order_gradient(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    k: usize,
    table: &HermiteTable,
) -> Result<Array2<f64>> {
    gradient_for_orders(ensemble, teacher, &[k], table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

const MC_CHUNK: usize = 4096;

/// Monte-Carlo estimate of `E[(f_W(x) − f*(x))²]` over fresh Gaussian inputs.
pub fn mc_population_loss(
    ensemble: &StudentEnsemble,
    teacher: &TeacherNetwork,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_dim(teacher.dim(), ensemble.dim())?;
    mc_squared_error(teacher, n_mc, seed, |x| ensemble.predict_batch(x))
}

/// Shared Monte-Carlo driver: `predict` maps a block of inputs to predictions.
pub(crate) fn mc_squared_error<F>(teacher: &TeacherNetwork, n_mc: usize, seed: u64, predict: F) -> Result<McEstimate>
where
    F: Fn(&Array2<f64>) -> Result<Array1<f64>> + Sync,
{
    if n_mc < 100 {
        return Err(Error::invalid(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let d = teacher.dim();
    let parts: Vec<Result<Moments>> = (0..n_mc.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut rng = chunk_rng(seed, c as u64);
            let x = gaussian_matrix(&mut rng, len, d, 1.0);
            let pred = predict(&x)?;
            let mut mom = Moments::default();
            for (row, p) in x.axis_iter(Axis(0)).zip(pred.iter()) {
                let e = p - teacher.label_unchecked(row);
                mom.push(e * e);
            }
            Ok(mom)
        })
        .collect();
    let mut total = Moments::default();
    for p in parts {
        total = total.merge(p?);
    }
    Ok(McEstimate {
        mean: total.mean,
        stderr: total.stderr(),
    })
}

/// Exact `E[(f_W − f*)²]` truncated at `j_max`, convenience wrapper used by
/// trainers and experiments.
pub fn decomposed_total(ensemble: &StudentEnsemble, teacher: &TeacherNetwork, j_max: usize, table: &HermiteTable) -> Result<f64> {
    Ok(decompose_loss(ensemble, teacher, j_max, table)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exact_fit_ensemble, init_student, sample_teacher, TeacherMode};
    use ndarray::array;
    use std::f64::consts::PI;

    fn table() -> HermiteTable {
        hermite_coeffs(DEFAULT_K_MAX).unwrap()
    }

    #[test]
    fn laguerre_rule_integrates_moments() {
        let (x, w) = gauss_laguerre(QUADRATURE_NODES);
        // ∫ t^n e^{-t} dt = n!
        let mut fact = 1.0;
        for n in 0..30 {
            if n > 0 {
                fact *= n as f64;
            }
            let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(n)).sum();
            assert!((q / fact - 1.0).abs() < 1e-11, "n={n} rel={}", q / fact - 1.0);
        }
    }

    #[test]
    fn known_coefficients() {
        let t = table();
        assert!((t.abs_coeff()[0] - (2.0 / PI).sqrt()).abs() < 1e-12);
        assert_eq!(t.abs_coeff()[1], 0.0);
        assert!((t.closed_form_c()[2].unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((t.closed_form_c()[4].unwrap() - 1.0 / (12.0 * PI)).abs() < 1e-15);
        assert!(t.closed_form_c()[3].is_none());
        for j in 0..=t.k_max() / 2 {
            let c = t.closed_form_c()[2 * j].unwrap();
            let rel = (t.abs_coeff()[2 * j].powi(2) / c - 1.0).abs();
            assert!(rel < 1e-10, "order {} rel err {rel:e}", 2 * j);
        }
    }

    #[test]
    fn relu_coefficients_follow_halving() {
        let t = table();
        assert_eq!(t.relu_coeff()[1], 0.5);
        for k in 0..=t.k_max() {
            if k % 2 == 0 {
                assert_eq!(t.relu_coeff()[k], t.abs_coeff()[k] / 2.0);
            } else if k > 1 {
                assert_eq!(t.relu_coeff()[k], 0.0);
                assert_eq!(t.abs_coeff()[k], 0.0);
            }
        }
    }

    #[test]
    fn coefficient_energy_sums_to_second_moment() {
        // Σ_k ĥ_k² = E|g|² = 1 (Parseval); the extrapolated tail closes the gap.
        let t = table();
        let head: f64 = t.abs_coeff().iter().map(|c| c * c).sum();
        let tail = t.tail_sum(t.k_max());
        assert!(head < 1.0 && head + tail >= 1.0 - 1e-6, "head {head} tail {tail}");
    }

    #[test]
    fn table_bounds() {
        assert!(hermite_coeffs(1).is_err());
        assert!(matches!(hermite_coeffs(1000), Err(Error::Quadrature { .. })));
    }

    #[test]
    fn b_coefficients() {
        let t = table();
        assert!((t.b0() - 8.0 / PI).abs() < 1e-12);
        assert!((t.b(1) - 4.0 / PI).abs() < 1e-12);
        assert_eq!(t.b_prime(1), 0.0);
        assert!((t.b(2) - 8.0 / (12.0 * PI)).abs() < 1e-12);
        assert!((t.b1() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_ensemble_leaves_teacher_terms() {
        let t = table();
        let teacher = sample_teacher(4, 2.0, TeacherMode::Identity, 2).unwrap();
        let zero = StudentEnsemble::new(Array2::zeros((3, 4)), Activation::Abs).unwrap();
        let br = decompose_loss(&zero, &teacher, 12, &t).unwrap();
        assert!((br.order(0).unwrap() - 2.0 / PI).abs() < 1e-12);
        let sum_a2: f64 = teacher.a().iter().map(|a| a * a).sum();
        assert!((br.order(2).unwrap() - sum_a2 / PI).abs() < 1e-12);
        assert_eq!(order_loss(&zero, &teacher, 0, &t).unwrap(), br.order(0).unwrap());
    }

    #[test]
    fn exact_fit_has_no_loss() {
        let t = table();
        let teacher = sample_teacher(6, 2.0, TeacherMode::RandomRotation, 5).unwrap();
        let fit = exact_fit_ensemble(&teacher);
        let br = decompose_loss(&fit, &teacher, 12, &t).unwrap();
        for &l in &br.per_order {
            assert!(l.abs() < 1e-10);
        }
        assert!(br.total <= br.tail_bound);
        let g = population_gradient(&fit, &teacher, 12, &t).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
        let mc = mc_population_loss(&fit, &teacher, 1000, 1).unwrap();
        assert!(mc.mean < 1e-20);
    }

    #[test]
    fn odd_orders_vanish_for_abs_learners() {
        let t = table();
        let teacher = sample_teacher(3, 2.0, TeacherMode::Identity, 1).unwrap();
        let s = init_student(3, 5, Activation::Abs, 1).unwrap();
        assert_eq!(order_loss(&s, &teacher, 1, &t).unwrap(), 0.0);
        assert_eq!(order_loss(&s, &teacher, 3, &t).unwrap(), 0.0);
    }

    #[test]
    fn order_one_is_first_moment_for_relu() {
        let t = table();
        let teacher = sample_teacher(3, 2.0, TeacherMode::Identity, 1).unwrap();
        let s = init_student(3, 5, Activation::Relu, 8).unwrap();
        let m = s.width() as f64;
        let mut mean = Array1::<f64>::zeros(3);
        for w in s.weights().outer_iter() {
            mean.scaled_add(w.dot(&w).sqrt() / m, &w);
        }
        let expect = 0.25 * mean.dot(&mean);
        assert!((order_loss(&s, &teacher, 1, &t).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_neurons_are_inert() {
        let t = table();
        let teacher = sample_teacher(2, 2.0, TeacherMode::Identity, 0).unwrap();
        let w = array![[0.4, -0.3], [0.0, 0.0]];
        let s = StudentEnsemble::new(w, Activation::Abs).unwrap();
        let g = population_gradient(&s, &teacher, 12, &t).unwrap();
        assert_eq!(g.row(1).to_vec(), vec![0.0, 0.0]);
        assert!(g.row(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rejects_bad_orders() {
        let t = table();
        let teacher = sample_teacher(2, 2.0, TeacherMode::Identity, 0).unwrap();
        let s = init_student(2, 2, Activation::Abs, 0).unwrap();
        assert!(decompose_loss(&s, &teacher, 11, &t).is_err());
        assert!(decompose_loss(&s, &teacher, 42, &t).is_err());
        let s3 = init_student(3, 2, Activation::Abs, 0).unwrap();
        assert!(decompose_loss(&s3, &teacher, 4, &t).is_err());
    }

    #[test]
    fn mc_of_zero_student_against_single_abs_teacher() {
        let teacher = TeacherNetwork::new(array![1.0], array![[1.0]], Activation::Abs).unwrap();
        let zero = StudentEnsemble::new(array![[0.0]], Activation::Abs).unwrap();
        let est = mc_population_loss(&zero, &teacher, 1_000_000, 3).unwrap();
        assert!((est.mean - 1.0).abs() < 3.0 * est.stderr, "{est:?}");
        assert!(mc_population_loss(&zero, &teacher, 10, 3).is_err());
    }
}
