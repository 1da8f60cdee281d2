use ndarray::{concatenate, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tslab::hardness::{hadamard, lambda_mu, sample_subset_families};
use tslab::harness::{read_trace, write_trace};
use tslab::meanfield::{symmetrize, ParticleCloud};
use tslab::model::{sample_teacher, student_predict, teacher_label};
use tslab::spectrum::{decompose_loss, hermite_coeffs};
use tslab::trainer::truncated_step;
use tslab::{Activation, HermiteTable, StudentEnsemble, TeacherMode, TeacherNetwork, TraceRecord};

fn gaussian(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn table() -> HermiteTable {
    hermite_coeffs(40).unwrap()
}

fn act(relu: bool) -> Activation {
    if relu {
        Activation::Relu
    } else {
        Activation::Abs
    }
}

fn teacher(d: usize, seed: u64) -> TeacherNetwork {
    sample_teacher(d, 2.0, TeacherMode::RandomRotation, seed).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn teacher_label_is_rotation_equivariant(d in 1usize..8, seed in any::<u64>()) {
        let t = teacher(d, seed);
        let rot = sample_teacher(d, 1.0, TeacherMode::RandomRotation, seed ^ 1).unwrap().w_star().clone();
        let rotated = TeacherNetwork::new(t.a().clone(), t.w_star().dot(&rot.t()), Activation::Abs).unwrap();
        let x = gaussian(1, d, 1.0, seed ^ 2).row(0).to_owned();
        let lhs = teacher_label(&rotated, rot.dot(&x).view()).unwrap();
        let rhs = teacher_label(&t, x.view()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn relu_pairs_reproduce_abs(d in 1usize..8, m in 1usize..10, seed in any::<u64>()) {
        let w = gaussian(m, d, 1.0, seed);
        let abs = StudentEnsemble::new(w.clone(), Activation::Abs).unwrap();
        let pairs = StudentEnsemble::new(concatenate![Axis(0), w, -&w], Activation::Relu).unwrap();
        let x = gaussian(1, d, 1.0, seed ^ 3).row(0).to_owned();
        let lhs = student_predict(&pairs, x.view()).unwrap();
        let rhs = 0.5 * student_predict(&abs, x.view()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn student_is_degree_two_homogeneous(
        d in 1usize..8, m in 1usize..10, c in 0.01f64..10.0, relu in any::<bool>(), seed in any::<u64>()
    ) {
        let w = gaussian(m, d, 1.0, seed);
        let base = StudentEnsemble::new(w.clone(), act(relu)).unwrap();
        let scaled = StudentEnsemble::new(w * c, act(relu)).unwrap();
        let x = gaussian(1, d, 1.0, seed ^ 4).row(0).to_owned();
        let lhs = student_predict(&scaled, x.view()).unwrap();
        let rhs = c * c * student_predict(&base, x.view()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn decomposition_ignores_neuron_duplication(
        d in 1usize..7, m in 1usize..8, relu in any::<bool>(), seed in any::<u64>()
    ) {
        let tab = table();
        let t = teacher(d, seed);
        let w = gaussian(m, d, 1.0 / (d as f64).sqrt(), seed ^ 5);
        let once = StudentEnsemble::new(w.clone(), act(relu)).unwrap();
        let twice = StudentEnsemble::new(concatenate![Axis(0), w, w], act(relu)).unwrap();
        let a = decompose_loss(&once, &t, 12, &tab).unwrap();
        let b = decompose_loss(&twice, &t, 12, &tab).unwrap();
        for (x, y) in a.per_order.iter().zip(&b.per_order) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn sign_symmetric_ensembles_have_no_odd_order(d in 1usize..7, m in 1usize..8, seed in any::<u64>()) {
        let tab = table();
        let t = teacher(d, seed);
        let w = gaussian(m, d, 1.0, seed ^ 6);
        let ens = StudentEnsemble::new(concatenate![Axis(0), w, -&w], Activation::Relu).unwrap();
        let l1 = decompose_loss(&ens, &t, 12, &tab).unwrap().order(1).unwrap();
        prop_assert!(l1.abs() < 1e-12, "L1 = {l1}");
    }

    #[test]
    fn per_order_losses_are_nonnegative_and_sum_to_total(
        d in 1usize..7, m in 1usize..10, relu in any::<bool>(), scale in 0.0f64..3.0, seed in any::<u64>()
    ) {
        let tab = table();
        let t = teacher(d, seed);
        let ens = StudentEnsemble::new(gaussian(m, d, scale, seed ^ 7), act(relu)).unwrap();
        let br = decompose_loss(&ens, &t, 12, &tab).unwrap();
        for v in &br.per_order {
            prop_assert!(*v >= -1e-12, "negative order loss {v}");
        }
        let sum: f64 = br.per_order.iter().sum();
        prop_assert!((sum - br.total).abs() <= 1e-12 * (1.0 + sum.abs()));
        prop_assert!(br.tail_bound >= 0.0);
    }

    #[test]
    fn truncated_step_freezes_large_neurons(
        d in 1usize..6, m in 1usize..10, eta in 0.0f64..2.0, lambda in 0.05f64..5.0, seed in any::<u64>()
    ) {
        let w = gaussian(m, d, 1.0, seed);
        let g = gaussian(m, d, 1.0, seed ^ 8);
        let ens = StudentEnsemble::new(w.clone(), Activation::Relu).unwrap();
        let next = truncated_step(&ens, &g, eta, lambda).unwrap();
        for i in 0..m {
            let before = w.row(i);
            let after = next.weights().row(i);
            if before.dot(&before) > 1.0 / lambda {
                prop_assert_eq!(before, after);
            } else {
                for k in 0..d {
                    prop_assert_eq!(after[k], before[k] - eta * g[[i, k]]);
                }
            }
        }
    }

    #[test]
    fn symmetrize_closes_the_orbit(d in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let cloud = ParticleCloud::new(gaussian(n, d, 1.0, seed), Activation::Abs).unwrap();
        let axes: Vec<usize> = (0..d).collect();
        let sym = symmetrize(&cloud, &axes, 1 << 16).unwrap();
        prop_assert_eq!(sym.count(), n << d);
        let p = sym.particles();
        for row in p.outer_iter() {
            for &ax in &axes {
                let mut flipped = row.to_owned();
                flipped[ax] = -flipped[ax];
                prop_assert!(p.outer_iter().any(|q| q == flipped));
            }
        }
        let again = symmetrize(&sym, &axes, 1 << 16).unwrap();
        prop_assert_eq!(again.particles(), sym.particles());
        prop_assert!(sym.first_moment().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn subset_families_are_valid(seed in any::<u64>(), q in 1usize..6) {
        let fam = sample_subset_families(16, 4, q, seed).unwrap();
        prop_assert!(fam.validate().is_ok());
        prop_assert_eq!(fam.families.len(), q);
        let mut seen = std::collections::HashSet::new();
        for blocks in &fam.families {
            let mut covered: Vec<usize> = blocks.iter().flatten().copied().collect();
            covered.sort_unstable();
            prop_assert_eq!(covered, (0..16).collect::<Vec<_>>());
            for b in blocks {
                prop_assert_eq!(b.len(), 4);
                prop_assert!(seen.insert(b.clone()), "block {:?} reused", b);
            }
        }
    }

    #[test]
    fn lambda_mu_ignores_signs_and_order(mu in proptest::collection::vec(-1.0f64..1.0, 1..7), flip in any::<u8>()) {
        let base = lambda_mu(Array1::from(mu.clone()).view()).unwrap();
        let mut other: Vec<f64> = mu
            .iter()
            .enumerate()
            .map(|(i, v)| if flip >> i & 1 == 1 { -v } else { *v })
            .collect();
        other.reverse();
        let moved = lambda_mu(Array1::from(other).view()).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() < 1e-14, "{base} vs {moved}");
    }

    #[test]
    fn trace_csv_round_trips_bitwise(
        rows in proptest::collection::vec(
            (0usize..1_000_000, 1u8..3, proptest::array::uniform9(-1e300f64..1e300)),
            1..20,
        )
    ) {
        let records: Vec<TraceRecord> = rows
            .iter()
            .map(|&(iter, stage, v)| TraceRecord {
                iter,
                stage,
                emp_loss: v[0],
                l0: v[1],
                l1: v[2],
                l2: v[3],
                l4: v[4],
                l6: v[5],
                tail: v[6],
                max_norm_sq: v[7].abs(),
                frac_truncated: v[8].abs() / 1e300,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&records, &path).unwrap();
        let back = read_trace(&path).unwrap();
        prop_assert_eq!(back, records);
    }
}

#[test]
fn hadamard_columns_are_orthonormal() {
    for r in [1usize, 2, 4, 8, 16, 32] {
        let h = hadamard(r).unwrap();
        let g = h.t().dot(&h);
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-14);
            }
        }
        assert!(h.iter().all(|v| (v.abs() - 1.0 / (r as f64).sqrt()).abs() < 1e-15));
    }
    assert!(hadamard(3).is_err());
}

#[test]
fn hermite_table_relations() {
    let t = table();
    let abs = t.abs_coeff();
    let relu = t.relu_coeff();
    for k in 0..=t.k_max() {
        if k % 2 == 1 {
            assert_eq!(abs[k], 0.0);
            let want = if k == 1 { 0.5 } else { 0.0 };
            assert!((relu[k] - want).abs() < 1e-14);
        } else {
            assert!((relu[k] - abs[k] / 2.0).abs() < 1e-15);
        }
    }
}

#[test]
fn abs_coefficients_match_simpson_integration() {
    // E[|g| He_k(g)] / sqrt(k!) by composite Simpson on [0, 40] (integrand even in g for even k).
    let t = table();
    let n = 400_000;
    let h = 40.0 / n as f64;
    for k in (0..=20).step_by(2) {
        let f = |z: f64| {
            let (mut p0, mut p1) = (1.0, z);
            let he = if k == 0 {
                1.0
            } else {
                for j in 1..k {
                    let p2 = z * p1 - j as f64 * p0;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            };
            z * he * (-z * z / 2.0).exp()
        };
        let mut s = f(0.0) + f(40.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = 2.0 * s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
        let fact: f64 = (1..=k).map(|v| v as f64).product();
        let want = integral / fact.sqrt();
        let got = t.abs_coeff()[k];
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-3), "k={k}: {got} vs {want}");
    }
}

