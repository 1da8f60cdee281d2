//! Infinite-width surrogate: particle clouds with equal mass, truncated
//! Gaussian initialization, analytic-gradient dynamics and sign-orbit
//! closure.
//!
//! A cloud of `count` particles is evaluated as a student of width `count`,
//! so `β_i = ‖v_i‖²/count`. The distributional gradient of the loss at a
//! particle is `count` times the per-neuron ensemble gradient.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, StudentEnsemble, TeacherNetwork};
use crate::numeric::rng;
use crate::spectrum::{decompose_loss, population_gradient, HermiteTable};
use crate::trainer::TraceRecord;

/// Minimum acceptance rate tolerated by [`sample_truncated_init`].
pub const MIN_ACCEPTANCE: f64 = 0.01;
/// Draws before the acceptance floor is enforced.
pub const WARMUP_DRAWS: usize = 1000;
/// Default bound on the size of a symmetrized cloud.
pub const DEFAULT_ORBIT_CAP: usize = 1 << 20;

/// Coefficients of the truncated neuron space. Each polylog factor is
/// `(ln d)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgParams {
    /// `‖w‖_∞ ≤ c_inf·(ln d)²/√d`.
    pub c_inf: f64,
    /// Half-width of the norm window around 1, times `(ln d)²/√d`.
    pub c_norm: f64,
    /// At most `⌈c_big·(ln d)^{0.01}⌉` coordinates with `w_i² ≥ ln d / d`.
    pub c_big: f64,
}

impl Default for SgParams {
    fn default() -> Self {
        SgParams {
            c_inf: 0.25,
            c_norm: 0.1,
            c_big: 5.0,
        }
    }
}

impl SgParams {
    pub fn validate(&self) -> Result<()> {
        if [self.c_inf, self.c_norm, self.c_big].iter().all(|&c| c > 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("SgParams must be positive: {self:?}")))
        }
    }

    fn bounds(&self, d: usize) -> SgBounds {
        let df = d as f64;
        let ln = df.ln().max(0.0);
        let poly = ln * ln / df.sqrt();
        SgBounds {
            inf: self.c_inf * poly,
            lo: 1.0 - self.c_norm * poly,
            hi: 1.0 + self.c_norm * poly,
            big: ln / df,
            max_big: (self.c_big * ln.powf(0.01)).ceil() as usize,
        }
    }
}

struct SgBounds {
    inf: f64,
    lo: f64,
    hi: f64,
    big: f64,
    max_big: usize,
}

impl SgBounds {
    fn contains(&self, w: ArrayView1<f64>, a: ArrayView1<f64>) -> bool {
        let d = w.len() as f64;
        let mut norm = 0.0;
        let mut weighted = 0.0;
        let mut big = 0;
        for (&wi, &ai) in w.iter().zip(a.iter()) {
            if wi.abs() > self.inf {
                return false;
            }
            let sq = wi * wi;
            norm += sq;
            weighted += ai * d * sq;
            if sq >= self.big {
                big += 1;
            }
        }
        let window = self.lo..=self.hi;
        window.contains(&norm) && window.contains(&weighted) && big <= self.max_big
    }
}

/// Membership in the truncated neuron space.
pub fn is_in_sg(w: ArrayView1<f64>, a: ArrayView1<f64>, d: usize, params: &SgParams) -> Result<bool> {
    check_dim(d, w.len())?;
    check_dim(d, a.len())?;
    Ok(params.bounds(d).contains(w, a))
}

/// Finite set of equal-mass particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    particles: Array2<f64>,
    step_count: usize,
    activation: Activation,
}

impl ParticleCloud {
    pub fn new(particles: Array2<f64>, activation: Activation) -> Result<Self> {
        if particles.nrows() == 0 || particles.ncols() == 0 {
            return Err(Error::invalid("a cloud needs at least one particle of positive dimension"));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("particles must be finite"));
        }
        Ok(ParticleCloud {
            particles,
            step_count: 0,
            activation,
        })
    }

    pub fn count(&self) -> usize {
        self.particles.nrows()
    }

    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &Array2<f64> {
        &self.particles
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// The cloud viewed as a width-`count` student.
    pub fn as_ensemble(&self) -> StudentEnsemble {
        StudentEnsemble::new(self.particles.clone(), self.activation).expect("cloud is non-empty")
    }

    /// `(1/count) Σ ‖v‖ v`, the order-1 moment that sign symmetry annihilates.
    pub fn first_moment(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        for v in self.particles.outer_iter() {
            out.scaled_add(v.dot(&v).sqrt(), &v);
        }
        out / self.count() as f64
    }

    pub fn diagnostics(&self, teacher: &TeacherNetwork) -> Result<CloudDiagnostics> {
        check_dim(teacher.dim(), self.dim())?;
        let n = self.count() as f64;
        let d = self.dim();
        let big = (d as f64).ln().max(0.0) / d as f64;
        let second = self.particles.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        // Coordinate energies along the teacher directions.
        let proj = self.particles.dot(&teacher.w_star().t());
        let along = proj.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let mut delta_plus = 0.0f64;
        let mut delta_minus = 0.0f64;
        for (e, a) in along.iter().zip(teacher.a().iter()) {
            delta_plus = delta_plus.max(e - a);
            delta_minus = delta_minus.max(a - e);
        }
        let mut large = 0usize;
        let mut max_coord = 0.0f64;
        for row in proj.outer_iter() {
            let top = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            max_coord = max_coord.max(top);
            if top * top >= big {
                large += 1;
            }
        }
        Ok(CloudDiagnostics {
            delta: second.sum() - 1.0,
            delta_plus,
            delta_minus,
            large_mass: large as f64 / n,
            max_coord,
        })
    }
}

/// Read-only summary statistics of a cloud relative to a teacher. Coordinates
/// are taken in the teacher basis `⟨w_i*, v⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudDiagnostics {
    /// `E‖v‖² − 1`.
    pub delta: f64,
    /// `max_i (E v_i² − a_i)`, floored at 0.
    pub delta_plus: f64,
    /// `max_i (a_i − E v_i²)`, floored at 0.
    pub delta_minus: f64,
    /// Fraction of particles with some `v_i² ≥ ln d / d`.
    pub large_mass: f64,
    /// Largest `|v_i|` over all particles.
    pub max_coord: f64,
}

#[derive(Debug, Clone)]
pub struct TruncatedInit {
    pub cloud: ParticleCloud,
    pub acceptance_rate: f64,
    pub draws: usize,
}

/// Rejection-samples `N(0, I/d)` onto the truncated neuron space.
pub fn sample_truncated_init(
    d: usize,
    a: ArrayView1<f64>,
    count: usize,
    params: &SgParams,
    activation: Activation,
    seed: u64,
) -> Result<TruncatedInit> {
    if count == 0 || d == 0 {
        return Err(Error::invalid("count and d must be positive"));
    }
    check_dim(d, a.len())?;
    params.validate()?;
    let bounds = params.bounds(d);
    let mut rng = rng(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array2::zeros((count, d));
    let mut accepted = 0;
    let mut draws = 0;
    let mut w = Array1::zeros(d);
    while accepted < count {
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
        draws += 1;
        if bounds.contains(w.view(), a) {
            out.row_mut(accepted).assign(&w);
            accepted += 1;
        }
        if draws >= WARMUP_DRAWS {
            let rate = accepted as f64 / draws as f64;
            if rate < MIN_ACCEPTANCE {
                return Err(Error::LowAcceptance {
                    rate,
                    floor: MIN_ACCEPTANCE,
                    draws,
                });
            }
        }
    }
    Ok(TruncatedInit {
        cloud: ParticleCloud::new(out, activation)?,
        acceptance_rate: accepted as f64 / draws as f64,
        draws,
    })
}

/// Fraction of `n` plain `N(0, I/d)` draws that land in the truncated space.
pub fn acceptance_rate(d: usize, a: ArrayView1<f64>, n: usize, params: &SgParams, seed: u64) -> Result<f64> {
    check_dim(d, a.len())?;
    params.validate()?;
    let bounds = params.bounds(d);
    let mut rng = rng(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut w = Array1::zeros(d);
    let mut hits = 0usize;
    for _ in 0..n {
        for v in w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = z * scale;
        }
        if bounds.contains(w.view(), a) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n.max(1) as f64)
}

/// Cloud of `±s·w_i*` pairs representing the teacher exactly: `s² = count·a_i`
/// for the ReLU learner and `count·a_i/2` for the abs learner, `count = 2d`.
pub fn exact_fit_cloud(teacher: &TeacherNetwork, activation: Activation) -> ParticleCloud {
    let d = teacher.dim();
    let count = (2 * d) as f64;
    let mut p = Array2::zeros((2 * d, d));
    for (i, (row, &a)) in teacher.w_star().outer_iter().zip(teacher.a().iter()).enumerate() {
        let s = match activation {
            Activation::Relu => (count * a).sqrt(),
            Activation::Abs => (count * a / 2.0).sqrt(),
        };
        p.row_mut(2 * i).assign(&(&row * s));
        p.row_mut(2 * i + 1).assign(&(&row * -s));
    }
    ParticleCloud {
        particles: p,
        step_count: 0,
        activation,
    }
}

/// Distributional gradient at every particle.
pub fn particle_gradient(
    cloud: &ParticleCloud,
    teacher: &TeacherNetwork,
    j_max: usize,
    table: &HermiteTable,
) -> Result<Array2<f64>> {
    let g = population_gradient(&cloud.as_ensemble(), teacher, j_max, table)?;
    Ok(g * cloud.count() as f64)
}

/// One truncated step of the distributional dynamics; particles with
/// `‖v‖² > 1/λ` stay put.
pub fn particle_step(
    cloud: &ParticleCloud,
    teacher: &TeacherNetwork,
    eta: f64,
    lambda: f64,
    j_max: usize,
    table: &HermiteTable,
) -> Result<ParticleCloud> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let mut next = cloud.clone();
    next.step_count += 1;
    if eta == 0.0 {
        return Ok(next);
    }
    let grad = particle_gradient(cloud, teacher, j_max, table)?;
    let cap = 1.0 / lambda;
    for (mut v, g) in next.particles.outer_iter_mut().zip(grad.outer_iter()) {
        if v.dot(&v) <= cap {
            v.scaled_add(-eta, &g);
        }
    }
    if next.particles.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteParticles { step: next.step_count });
    }
    Ok(next)
}

/// Runs `steps` particle steps, logging a trace row every `log_every` steps
/// and after the last one.
pub fn run_particles(
    cloud: ParticleCloud,
    teacher: &TeacherNetwork,
    eta: f64,
    lambda: f64,
    steps: usize,
    j_max: usize,
    log_every: usize,
    table: &HermiteTable,
) -> Result<(ParticleCloud, Vec<TraceRecord>, Vec<CloudDiagnostics>)> {
    if log_every == 0 {
        return Err(Error::invalid("log_every must be positive"));
    }
    let mut cloud = cloud;
    let mut trace = Vec::new();
    let mut diags = Vec::new();
    for t in 0..=steps {
        if t % log_every == 0 || t == steps {
            trace.push(cloud_record(&cloud, teacher, lambda, j_max, table, t)?);
            diags.push(cloud.diagnostics(teacher)?);
        }
        if t < steps {
            cloud = particle_step(&cloud, teacher, eta, lambda, j_max, table)?;
        }
    }
    Ok((cloud, trace, diags))
}

fn cloud_record(
    cloud: &ParticleCloud,
    teacher: &TeacherNetwork,
    lambda: f64,
    j_max: usize,
    table: &HermiteTable,
    iter: usize,
) -> Result<TraceRecord> {
    let br = decompose_loss(&cloud.as_ensemble(), teacher, j_max, table)?;
    let norms: Vec<f64> = cloud.particles.outer_iter().map(|v| v.dot(&v)).collect();
    let get = |k| br.order(k).unwrap_or(0.0);
    Ok(TraceRecord {
        iter,
        stage: 1,
        emp_loss: br.total,
        l0: get(0),
        l1: get(1),
        l2: get(2),
        l4: get(4),
        l6: get(6),
        tail: br.tail_bound,
        max_norm_sq: norms.iter().copied().fold(0.0, f64::max),
        frac_truncated: norms.iter().filter(|&&n| n > 1.0 / lambda).count() as f64 / norms.len() as f64,
    })
}

fn key(v: ArrayView1<f64>) -> Vec<u64> {
    // -0.0 and 0.0 are the same particle.
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

/// Closure of the cloud under sign flips of each axis in `axes`, keeping
/// first-seen order. Exact duplicates are merged, so closing twice is a
/// no-op.
pub fn symmetrize(cloud: &ParticleCloud, axes: &[usize], cap: usize) -> Result<ParticleCloud> {
    let d = cloud.dim();
    let mut uniq: Vec<usize> = Vec::new();
    for &ax in axes {
        if ax >= d {
            return Err(Error::invalid(format!("axis {ax} out of range for d={d}")));
        }
        if !uniq.contains(&ax) {
            uniq.push(ax);
        }
    }
    if uniq.len() >= usize::BITS as usize - 1 {
        return Err(Error::invalid(format!("orbit of {} axes exceeds cap {cap}", uniq.len())));
    }
    let mut seen = HashSet::new();
    let mut rows: Vec<Array1<f64>> = Vec::new();
    for v in cloud.particles.outer_iter() {
        for mask in 0..(1usize << uniq.len()) {
            let mut w = v.to_owned();
            for (b, &ax) in uniq.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    w[ax] = -w[ax];
                }
            }
            if seen.insert(key(w.view())) {
                if rows.len() == cap {
                    return Err(Error::invalid(format!("symmetrized cloud exceeds cap {cap}")));
                }
                rows.push(w);
            }
        }
    }
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(&src);
    }
    Ok(ParticleCloud {
        particles: out,
        step_count: cloud.step_count,
        activation: cloud.activation,
    })
}

/// Median over `resamples` of `|L(sub-ensemble of n particles) − L(cloud)|`,
/// where sub-ensembles are drawn with replacement.
pub fn sampling_gap(
    cloud: &ParticleCloud,
    teacher: &TeacherNetwork,
    n: usize,
    resamples: usize,
    j_max: usize,
    table: &HermiteTable,
    seed: u64,
) -> Result<f64> {
    if n == 0 || resamples == 0 {
        return Err(Error::invalid("n and resamples must be positive"));
    }
    let full = decompose_loss(&cloud.as_ensemble(), teacher, j_max, table)?.total;
    let mut rng = rng(seed);
    let mut gaps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sub = Array2::zeros((n, cloud.dim()));
        for mut row in sub.outer_iter_mut() {
            let i = rng.random_range(0..cloud.count());
            row.assign(&cloud.particles.row(i));
        }
        let ens = StudentEnsemble::new(sub, cloud.activation)?;
        gaps.push((decompose_loss(&ens, teacher, j_max, table)?.total - full).abs());
    }
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    Ok(if gaps.len() % 2 == 1 {
        gaps[mid]
    } else {
        0.5 * (gaps[mid - 1] + gaps[mid])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_teacher, TeacherMode};
    use crate::spectrum::hermite_coeffs;
    use ndarray::array;

    #[test]
    fn basis_vector_is_outside() {
        let d = 100;
        let mut w = Array1::zeros(d);
        w[0] = 1.0;
        let a = Array1::from_elem(d, 1.0 / d as f64);
        assert!(!is_in_sg(w.view(), a.view(), d, &SgParams::default()).unwrap());
    }

    #[test]
    fn flat_vector_is_inside() {
        let d = 100;
        let w = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
        let a = Array1::from_elem(d, 1.0 / d as f64);
        assert!(is_in_sg(w.view(), a.view(), d, &SgParams::default()).unwrap());
    }

    #[test]
    fn acceptance_at_d100() {
        let d = 100;
        let a = Array1::from_elem(d, 1.0 / d as f64);
        let rate = acceptance_rate(d, a.view(), 20_000, &SgParams::default(), 3).unwrap();
        assert!(rate >= 0.5, "rate {rate}");
    }

    #[test]
    fn truncated_init_members_and_determinism() {
        let d = 100;
        let a = Array1::from_elem(d, 1.0 / d as f64);
        let p = SgParams::default();
        let s1 = sample_truncated_init(d, a.view(), 500, &p, Activation::Abs, 9).unwrap();
        let s2 = sample_truncated_init(d, a.view(), 500, &p, Activation::Abs, 9).unwrap();
        assert_eq!(s1.cloud, s2.cloud);
        for v in s1.cloud.particles().outer_iter() {
            assert!(is_in_sg(v, a.view(), d, &p).unwrap());
        }
        assert!(s1.acceptance_rate > 0.0 && s1.acceptance_rate <= 1.0);
    }

    #[test]
    fn strict_params_fail() {
        let d = 50;
        let a = Array1::from_elem(d, 1.0 / d as f64);
        let p = SgParams {
            c_inf: 1e-3,
            ..SgParams::default()
        };
        let err = sample_truncated_init(d, a.view(), 10, &p, Activation::Abs, 0).unwrap_err();
        assert!(matches!(err, Error::LowAcceptance { .. }));
    }

    #[test]
    fn symmetrize_orbit() {
        let c = ParticleCloud::new(array![[0.3, -0.7]], Activation::Abs).unwrap();
        assert_eq!(symmetrize(&c, &[], 16).unwrap(), c);
        let s = symmetrize(&c, &[0, 1], 16).unwrap();
        assert_eq!(s.count(), 4);
        let twice = symmetrize(&s, &[0, 1], 16).unwrap();
        assert_eq!(twice, s);
        assert!(symmetrize(&c, &[0, 1], 3).is_err());
        assert!(symmetrize(&c, &[2], 16).is_err());
    }

    #[test]
    fn zero_eta_and_exact_fit_are_fixed_points() {
        let t = hermite_coeffs(40).unwrap();
        let teacher = sample_teacher(4, 2.0, TeacherMode::RandomRotation, 5).unwrap();
        for act in [Activation::Relu, Activation::Abs] {
            let cloud = exact_fit_cloud(&teacher, act);
            let next = particle_step(&cloud, &teacher, 0.1, 1e-3, 12, &t).unwrap();
            let diff = (&next.particles - &cloud.particles).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-8, "{act}: {diff}");
            let same = particle_step(&cloud, &teacher, 0.0, 1e-3, 12, &t).unwrap();
            assert_eq!(same.particles, cloud.particles);
        }
    }
}
