use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tslab::hardness::{
    block_fourier_mass, build_instance, hadamard, lambda_star, lambda_star_signed, predictor_loss,
    random_feature_fit, sample_subset_families, FeatureKind, FeaturePredictor,
};
use tslab::model::{sample_teacher, sample_dataset};
use tslab::reduction::{closed_form_regressor, fit_least_squares, shifted_dataset};
use tslab::{Activation, Dataset, TeacherMode};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn instance_shape() {
    for seed in 0..20 {
        let inst = build_instance(16, 4, seed).unwrap();
        let w = inst.teacher.w_star();
        let gram = w.t().dot(w);
        let err = (&gram - &Array2::<f64>::eye(16)).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        assert!(err < 1e-12);
        for &ai in inst.teacher.a() {
            assert!((1.0 / 32.0..=2.0 / 16.0).contains(&ai));
        }
        for (p, block) in inst.blocks.iter().enumerate() {
            for q in 0..4 {
                let row = w.row(p * 4 + q);
                let support: Vec<usize> = (0..16).filter(|&k| row[k] != 0.0).collect();
                assert_eq!(&support, block);
            }
        }
    }
    let single = build_instance(4, 4, 1).unwrap();
    let h = hadamard(4).unwrap();
    assert_eq!(single.teacher.w_star(), &h.t().to_owned());
}

#[test]
fn duplicate_rejection_rate_is_moderate() {
    let (mut draws, mut rejections) = (0, 0);
    for seed in 0..100 {
        let fam = sample_subset_families(16, 4, 10, seed).unwrap();
        fam.validate().unwrap();
        draws += fam.draws;
        rejections += fam.rejections;
    }
    let rate = rejections as f64 / draws as f64;
    assert!(rate < 0.5, "rejection rate {rate}");
}

#[test]
fn families_are_deterministic() {
    let a = sample_subset_families(16, 4, 5, 42).unwrap();
    let b = sample_subset_families(16, 4, 5, 42).unwrap();
    assert_eq!(a.families, b.families);
}

#[test]
fn lambda_star_is_linear_in_q() {
    let p = gaussian(3, 4, 1);
    let q = Array1::from(vec![0.3, 0.5, 0.9]);
    let mu = gaussian(1, 4, 2).row(0).to_owned();
    let one = lambda_star_signed(p.view(), q.view(), mu.view()).unwrap();
    let two = lambda_star_signed(p.view(), (&q * 2.0).view(), mu.view()).unwrap();
    assert!((two - 2.0 * one).abs() < 1e-14);
    assert_eq!(lambda_star(p.view(), q.view(), mu.view()).unwrap(), one.abs());
}

#[test]
fn block_mass_vanishes_exactly_when_every_block_is_dominated() {
    // A block's top coefficient is zero iff one |x_i| exceeds the sum of the
    // others in that block: |<h∘x, τ>| is then linear in τ.
    let inst = build_instance(16, 4, 3).unwrap();
    let xs = gaussian(1000, 16, 4);
    let mut positive = 0;
    for x in xs.rows() {
        let mass = block_fourier_mass(&inst, x).unwrap().mass;
        let dominated = inst.blocks.iter().all(|b| {
            let v: Vec<f64> = b.iter().map(|&i| x[i].abs()).collect();
            let total: f64 = v.iter().sum();
            v.iter().any(|&vi| vi > total - vi)
        });
        assert_eq!(mass <= 1e-12, dominated, "mass {mass:e}");
        positive += usize::from(mass > 1e-12);
    }
    assert!(positive >= 970, "{positive}/1000");
    let zero = block_fourier_mass(&inst, Array1::zeros(16).view()).unwrap();
    assert!(zero.coeffs.iter().all(|&c| c == 0.0));
}

#[test]
fn one_block_mass_is_lambda_star_squared() {
    let inst = build_instance(4, 4, 8).unwrap();
    let x = gaussian(1, 4, 9).row(0).to_owned();
    let mass = block_fourier_mass(&inst, x.view()).unwrap().mass;
    let ls = lambda_star(inst.teacher.w_star().view(), inst.teacher.a().view(), x.view()).unwrap();
    assert!((mass - ls * ls).abs() < 1e-14, "{mass} vs {}", ls * ls);
}

#[test]
fn polynomial_features_fit_linear_targets() {
    // Scored against the linear target directly: the fit must be exact.
    let d = 5;
    let c = Array1::from(vec![0.5, -1.0, 0.25, 2.0, 0.0]);
    let x = gaussian(2000, d, 11);
    let ds = Dataset {
        labels: x.dot(&c),
        inputs: x,
        seed: 11,
    };
    let teacher = sample_teacher(d, 1.0, TeacherMode::Identity, 0).unwrap();
    let fit = random_feature_fit(&ds, &teacher, 1, FeatureKind::Poly, 0.0, 1000, 12).unwrap();
    let test = gaussian(20_000, d, 13);
    let err = &fit.predictor.predict_batch(&test).unwrap() - &test.dot(&c);
    let loss = err.mapv(|e| e * e).mean().unwrap();
    assert!(loss < 1e-6, "loss {loss}");
    assert!(fit.train_loss < 1e-20);
}

#[test]
fn zero_predictor_loss_is_teacher_energy() {
    let d = 6;
    let teacher = sample_teacher(d, 2.0, TeacherMode::Identity, 5).unwrap();
    let est = predictor_loss(&FeaturePredictor::zero(d), &teacher, 400_000, 6).unwrap();
    // E[f*²] for orthonormal directions: Σ a_i² + (2/π) Σ_{i≠j} a_i a_j.
    let a = teacher.a();
    let sq: f64 = a.iter().map(|v| v * v).sum();
    let want = sq + 2.0 / std::f64::consts::PI * (1.0 - sq);
    assert!((est.mean - want).abs() < 3.0 * est.stderr, "{} vs {want} (se {})", est.mean, est.stderr);
}

#[test]
fn least_squares_matches_closed_form_across_seeds() {
    for seed in 0..3 {
        let teacher = sample_teacher(10, 2.0, TeacherMode::RandomRotation, seed)
            .unwrap()
            .with_activation(Activation::Relu);
        let ds = sample_dataset(&teacher, 100_000, seed + 100).unwrap();
        let z = fit_least_squares(&ds).unwrap().z;
        let z_star = closed_form_regressor(&teacher).unwrap().z;
        let gap = (&z - &z_star).mapv(|v| v * v).sum().sqrt();
        assert!(gap <= 0.05, "seed {seed}: {gap}");
    }
}

#[test]
fn shifted_inputs_break_the_closed_form() {
    let teacher = sample_teacher(10, 2.0, TeacherMode::RandomRotation, 1)
        .unwrap()
        .with_activation(Activation::Relu);
    let mu = Array1::from_elem(10, 1.0);
    let ds = shifted_dataset(&teacher, 100_000, mu.view(), 2).unwrap();
    let z = fit_least_squares(&ds).unwrap().z;
    let z_star = closed_form_regressor(&teacher).unwrap().z;
    let gap = (&z - &z_star).mapv(|v| v * v).sum().sqrt();
    assert!(gap > 0.05, "gap {gap}");
}
