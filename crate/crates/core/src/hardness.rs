//! Hadamard-block hardness instances, exact boolean Fourier quantities and
//! random-feature baselines.
//!
//! Sign patterns `τ ∈ {±1}^n` are encoded as bit masks: bit `k` set means
//! `τ_k = −1`, so the parity `Π τ_k` is `(−1)^{popcount}`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, Dataset, TeacherNetwork};
use crate::numeric::{det_sum, gaussian_matrix, rng};
use crate::spectrum::{mc_squared_error, McEstimate};

/// Largest block size enumerated exactly.
pub const MAX_ENUM_R: usize = 24;
/// Largest dimension for the full `2^d` Fourier table.
pub const MAX_FULL_D: usize = 22;
/// Resamples allowed per collection before giving up.
pub const FAMILY_RETRIES: usize = 1000;

/// Sylvester–Hadamard matrix scaled to orthonormal columns.
pub fn hadamard(r: usize) -> Result<Array2<f64>> {
    if r == 0 || !r.is_power_of_two() {
        return Err(Error::invalid(format!("Hadamard order must be a power of two, got {r}")));
    }
    let s = 1.0 / (r as f64).sqrt();
    Ok(Array2::from_shape_fn((r, r), |(i, j)| {
        if (i & j).count_ones() % 2 == 0 {
            s
        } else {
            -s
        }
    }))
}

/// `Q` partitions of `[d]` into `d/r` blocks of size `r`, with no block
/// shared between partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetFamily {
    pub d: usize,
    pub r: usize,
    /// `families[j][p]` is the sorted `p`-th block of collection `j`.
    pub families: Vec<Vec<Vec<usize>>>,
    /// Partitions drawn, including rejected ones.
    pub draws: usize,
    /// Partitions rejected for reusing a block.
    pub rejections: usize,
}

impl SubsetFamily {
    pub fn rejection_rate(&self) -> f64 {
        self.rejections as f64 / self.draws.max(1) as f64
    }

    /// Checks disjointness and size within each collection and uniqueness
    /// of every block across collections.
    pub fn validate(&self) -> Result<()> {
        let mut all = HashSet::new();
        for (j, coll) in self.families.iter().enumerate() {
            if coll.len() != self.d / self.r {
                return Err(Error::invalid(format!("collection {j} has {} blocks", coll.len())));
            }
            let mut used = vec![false; self.d];
            for block in coll {
                if block.len() != self.r {
                    return Err(Error::invalid(format!("collection {j} has a block of size {}", block.len())));
                }
                for &c in block {
                    if c >= self.d || used[c] {
                        return Err(Error::invalid(format!("collection {j} reuses coordinate {c}")));
                    }
                    used[c] = true;
                }
                if !all.insert(block.clone()) {
                    return Err(Error::invalid(format!("block {block:?} appears twice")));
                }
            }
        }
        Ok(())
    }
}

/// `r | d` always; `r² <= d` only matters once several collections must
/// avoid each other, so a single collection may be one block.
fn check_block_shape(d: usize, r: usize, q: usize) -> Result<()> {
    if r == 0 || d == 0 || d % r != 0 {
        return Err(Error::invalid(format!("need r | d, got d={d}, r={r}")));
    }
    if q > 1 && r * r > d {
        return Err(Error::invalid(format!("need r² <= d for Q > 1, got d={d}, r={r}")));
    }
    Ok(())
}

pub fn sample_subset_families(d: usize, r: usize, q: usize, seed: u64) -> Result<SubsetFamily> {
    if q == 0 {
        return Err(Error::invalid("Q must be at least 1"));
    }
    check_block_shape(d, r, q)?;
    let mut rng = rng(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut families = Vec::with_capacity(q);
    let mut draws = 0;
    let mut rejections = 0;
    let mut perm: Vec<usize> = (0..d).collect();
    for j in 0..q {
        let mut attempt = 0;
        let coll = loop {
            if attempt == FAMILY_RETRIES {
                return Err(Error::RetryBudgetExhausted {
                    attempts: FAMILY_RETRIES,
                    reason: format!("collection {j} of {q} keeps repeating a block (d={d}, r={r})"),
                });
            }
            attempt += 1;
            draws += 1;
            perm.shuffle(&mut rng);
            let coll: Vec<Vec<usize>> = perm
                .chunks(r)
                .map(|c| {
                    let mut b = c.to_vec();
                    b.sort_unstable();
                    b
                })
                .collect();
            if coll.iter().any(|b| seen.contains(b)) {
                rejections += 1;
                continue;
            }
            break coll;
        };
        seen.extend(coll.iter().cloned());
        families.push(coll);
    }
    let fam = SubsetFamily {
        d,
        r,
        families,
        draws,
        rejections,
    };
    fam.validate()?;
    Ok(fam)
}

/// Abs teacher whose neurons are Hadamard columns placed on the blocks of
/// one collection. Neuron `p·r + q` is column `q` on block `p`.
#[derive(Debug, Clone)]
pub struct HardnessInstance {
    pub teacher: TeacherNetwork,
    pub blocks: Vec<Vec<usize>>,
    pub r: usize,
    pub family: SubsetFamily,
}

/// Instance on a single random collection with `b_i ~ U[1, 2]`.
pub fn build_instance(d: usize, r: usize, seed: u64) -> Result<HardnessInstance> {
    build_instance_from(d, r, 1, seed)
}

/// Samples `q` collections and places the teacher on one of them chosen
/// uniformly.
pub fn build_instance_from(d: usize, r: usize, q: usize, seed: u64) -> Result<HardnessInstance> {
    let family = sample_subset_families(d, r, q, seed)?;
    let h = hadamard(r)?;
    let mut rng = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pick = rng.random_range(0..q);
    let blocks = family.families[pick].clone();
    let mut w = Array2::zeros((d, d));
    for (p, block) in blocks.iter().enumerate() {
        for qi in 0..r {
            let mut row = w.row_mut(p * r + qi);
            for (k, &c) in block.iter().enumerate() {
                row[c] = h[[k, qi]];
            }
        }
    }
    let b: Array1<f64> = (0..d).map(|_| rng.random_range(1.0..=2.0)).collect();
    let a = &b / b.sum();
    let teacher = TeacherNetwork::new(a, w, Activation::Abs)?;
    Ok(HardnessInstance {
        teacher,
        blocks,
        r,
        family,
    })
}

fn parity(mask: usize) -> f64 {
    if mask.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn check_enum(r: usize) -> Result<()> {
    if r == 0 || r > MAX_ENUM_R {
        return Err(Error::invalid(format!("enumeration needs 1 <= r <= {MAX_ENUM_R}, got {r}")));
    }
    Ok(())
}

/// `E_τ[g(τ)·Πτ]` over all `2^r` sign patterns.
fn full_parity<F>(r: usize, g: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let n = 1usize << r;
    det_sum(n, |mask| g(mask) * parity(mask)) / n as f64
}

fn signed_dot(v: &[f64], mask: usize) -> f64 {
    v.iter()
        .enumerate()
        .map(|(k, &x)| if mask >> k & 1 == 1 { -x } else { x })
        .sum()
}

/// `|E_τ[|Σ μ_i τ_i|·Πτ_i]|`.
pub fn lambda_mu(mu: ArrayView1<f64>) -> Result<f64> {
    check_enum(mu.len())?;
    let m = mu.to_vec();
    Ok(full_parity(m.len(), |mask| signed_dot(&m, mask).abs()).abs())
}

/// `E_τ[Σ_i q_i |⟨p_i ∘ μ, τ⟩|·Πτ]` before the absolute value; `p` holds
/// one vector per row.
pub fn lambda_star_signed(p: ArrayView2<f64>, q: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<f64> {
    let r = mu.len();
    check_enum(r)?;
    check_dim(r, p.ncols())?;
    check_dim(p.nrows(), q.len())?;
    let rows: Vec<(f64, Vec<f64>)> = p
        .outer_iter()
        .zip(q.iter())
        .map(|(pi, &qi)| (qi, pi.iter().zip(mu.iter()).map(|(a, b)| a * b).collect()))
        .collect();
    Ok(full_parity(r, |mask| {
        rows.iter().map(|(qi, v)| qi * signed_dot(v, mask).abs()).sum()
    }))
}

pub fn lambda_star(p: ArrayView2<f64>, q: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<f64> {
    Ok(lambda_star_signed(p, q, mu)?.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMass {
    /// Signed full-block coefficient `λ*_B`, one per block.
    pub coeffs: Vec<f64>,
    /// `Σ_B (λ*_B)²`.
    pub mass: f64,
}

/// Fourier coefficient of `τ ↦ f*(x̄∘τ)` on each block of the instance.
/// Neurons on other blocks do not depend on every sign of `B` and drop out,
/// so each coefficient only needs the block's own `2^r` patterns.
pub fn block_fourier_mass(inst: &HardnessInstance, xbar: ArrayView1<f64>) -> Result<BlockMass> {
    let d = inst.teacher.dim();
    check_dim(d, xbar.len())?;
    check_enum(inst.r)?;
    let r = inst.r;
    let w = inst.teacher.w_star();
    let a = inst.teacher.a();
    let mut coeffs = Vec::with_capacity(inst.blocks.len());
    for (p, block) in inst.blocks.iter().enumerate() {
        let rows = Array2::from_shape_fn((r, r), |(qi, k)| w[[p * r + qi, block[k]]]);
        let mu = Array1::from_iter(block.iter().map(|&c| xbar[c]));
        let q = a.slice(ndarray::s![p * r..(p + 1) * r]);
        coeffs.push(lambda_star_signed(rows.view(), q, mu.view())?);
    }
    let mass = coeffs.iter().map(|c| c * c).sum();
    Ok(BlockMass { coeffs, mass })
}

/// In-place unnormalized Walsh–Hadamard transform.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("FWHT length must be a power of two, got {n}")));
    }
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// All `2^d` Fourier coefficients of `τ ↦ f*(x̄∘τ)`, indexed by subset
/// mask, together with the table of function values.
pub fn full_fourier(teacher: &TeacherNetwork, xbar: ArrayView1<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = teacher.dim();
    check_dim(d, xbar.len())?;
    if d > MAX_FULL_D {
        return Err(Error::invalid(format!("full enumeration needs d <= {MAX_FULL_D}, got {d}")));
    }
    let n = 1usize << d;
    let mut x = Array1::zeros(d);
    let mut values = Vec::with_capacity(n);
    for mask in 0..n {
        for k in 0..d {
            x[k] = if mask >> k & 1 == 1 { -xbar[k] } else { xbar[k] };
        }
        values.push(teacher.label_unchecked(x.view()));
    }
    let mut coeffs = values.clone();
    fwht(&mut coeffs)?;
    for c in coeffs.iter_mut() {
        *c /= n as f64;
    }
    Ok((coeffs, values))
}

pub fn subset_mask(subset: &[usize]) -> usize {
    subset.iter().fold(0, |m, &c| m | 1 << c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `relu(⟨g_k, x⟩)` with `g_k ~ N(0, I/d)`.
    Relu,
    /// All monomials of degree at most 2.
    Poly,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(FeatureKind::Relu),
            "poly" => Ok(FeatureKind::Poly),
            other => Err(Error::invalid(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Relu => "relu",
            FeatureKind::Poly => "poly",
        })
    }
}

/// Linear model on a fixed feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePredictor {
    pub kind: FeatureKind,
    d: usize,
    /// Random directions, one per row (ReLU features only).
    directions: Option<Array2<f64>>,
    pub coef: Array1<f64>,
}

impl FeaturePredictor {
    /// Predictor that outputs 0 everywhere.
    pub fn zero(d: usize) -> Self {
        FeaturePredictor {
            kind: FeatureKind::Poly,
            d,
            directions: None,
            coef: Array1::zeros(poly_count(d)),
        }
    }

    pub fn n_features(&self) -> usize {
        self.coef.len()
    }

    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim(self.d, x.ncols())?;
        Ok(match &self.directions {
            Some(g) => x.dot(&g.t()).mapv(|v| v.max(0.0)),
            None => poly_features(x),
        })
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.features(x)?.dot(&self.coef))
    }
}

fn poly_count(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

fn poly_features(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, poly_count(d)));
    for (row, mut f) in x.outer_iter().zip(out.outer_iter_mut()) {
        f[0] = 1.0;
        let mut k = 1;
        for i in 0..d {
            f[k] = row[i];
            k += 1;
        }
        for i in 0..d {
            for j in i..d {
                f[k] = row[i] * row[j];
                k += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct FeatureFit {
    pub predictor: FeaturePredictor,
    pub train_loss: f64,
    pub population_loss: McEstimate,
}

/// Ridge regression `(ΦᵀΦ/N + ridge·I) c = Φᵀy/N` on a feature map, scored
/// by Monte Carlo against `teacher`. `n_features` is ignored by the
/// polynomial map, whose size is fixed by `d`.
pub fn random_feature_fit(
    dataset: &Dataset,
    teacher: &TeacherNetwork,
    n_features: usize,
    kind: FeatureKind,
    ridge: f64,
    n_mc: usize,
    seed: u64,
) -> Result<FeatureFit> {
    let d = dataset.dim();
    check_dim(teacher.dim(), d)?;
    if n_features == 0 {
        return Err(Error::invalid("n_features must be at least 1"));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let directions = match kind {
        FeatureKind::Relu => Some(gaussian_matrix(&mut rng(seed), n_features, d, 1.0 / (d as f64).sqrt())),
        FeatureKind::Poly => None,
    };
    let mut predictor = FeaturePredictor {
        kind,
        d,
        directions,
        coef: Array1::zeros(0),
    };
    let phi = predictor.features(&dataset.inputs)?;
    let n = dataset.len() as f64;
    let p = phi.ncols();
    let gram = phi.t().dot(&phi) / n;
    let rhs = phi.t().dot(&dataset.labels) / n;
    let mut g = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    for i in 0..p {
        g[(i, i)] += ridge;
    }
    let singular = || Error::Singular(format!("{p}x{p} feature system is singular at ridge {ridge}; use ridge > 0"));
    if ridge == 0.0 {
        let eig = g.clone().symmetric_eigen();
        if !(eig.eigenvalues.min() > eig.eigenvalues.max() * 1e-12) {
            return Err(singular());
        }
    }
    let chol = g.cholesky().ok_or_else(singular)?;
    let c = chol.solve(&DVector::from_iterator(p, rhs.iter().copied()));
    predictor.coef = Array1::from_iter(c.iter().copied());
    let fitted = phi.dot(&predictor.coef);
    let train_loss = (&fitted - &dataset.labels).mapv(|e| e * e).mean().unwrap_or(0.0);
    let population_loss = predictor_loss(&predictor, teacher, n_mc, seed.wrapping_add(1))?;
    Ok(FeatureFit {
        predictor,
        train_loss,
        population_loss,
    })
}

/// Monte-Carlo `E[(φ(x)ᵀc − f*(x))²]`.
pub fn predictor_loss(pred: &FeaturePredictor, teacher: &TeacherNetwork, n_mc: usize, seed: u64) -> Result<McEstimate> {
    check_dim(teacher.dim(), pred.d)?;
    mc_squared_error(teacher, n_mc, seed, |x| pred.predict_batch(x))
}
