use std::sync::Arc;

use chainph_core::car::{car_chained, car_fz, car_fz_inv, CarParams};
use chainph_core::chained::{chained_form_q, inverse_factorial, is_chained, pushforward, qz_perp};
use chainph_core::linalg::{jacobian_fd, max_abs, norm_inf};
use chainph_core::{
    s_matrix, CoordinateChart, Error, Matrix, MatrixMap, RationalMatrix, Vector, WChart,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> Vector {
    Vector::from_row_slice(x)
}

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

/// Determinant by the Leibniz permutation expansion.
fn leibniz_det(m: &RationalMatrix) -> BigRational {
    fn permutations(
        items: &mut Vec<usize>,
        k: usize,
        out: &mut Vec<(Vec<usize>, bool)>,
        even: bool,
    ) {
        if k == items.len() {
            out.push((items.clone(), even));
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permutations(items, k + 1, out, if i == k { even } else { !even });
            items.swap(k, i);
        }
    }
    let d = m.dim();
    let mut perms = Vec::new();
    permutations(&mut (0..d).collect(), 0, &mut perms, true);
    perms.iter().fold(BigRational::zero(), |acc, (perm, even)| {
        let term = perm
            .iter()
            .enumerate()
            .fold(BigRational::one(), |t, (r, &c)| t * m.get(r, c));
        if *even {
            acc + term
        } else {
            acc - term
        }
    })
}

#[test]
fn s_matrix_entries_follow_the_factorial_pattern() {
    let s3 = s_matrix(3).unwrap();
    assert_eq!(s3.dim(), 1);
    assert_eq!(*s3.get(0, 0), ratio(1, 2));
    let s4 = s_matrix(4).unwrap();
    let expected = [[ratio(1, 2), ratio(1, 6)], [ratio(1, 6), ratio(1, 24)]];
    for (i, row) in expected.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            assert_eq!(s4.get(i, j), e);
        }
    }
    assert_eq!(s4.determinant(), ratio(-1, 144));
    assert!(matches!(s_matrix(2), Err(Error::DimensionTooSmall(2))));
}

#[test]
fn s_matrix_determinant_agrees_with_permutation_expansion() {
    for n in 3..=10 {
        let s = s_matrix(n).unwrap();
        let det = leibniz_det(&s);
        assert!(!det.is_zero(), "n = {n}");
        assert_eq!(s.determinant(), det, "n = {n}");
    }
}

#[test]
fn w_chart_dimension_limits() {
    assert!(WChart::new(12).is_ok());
    assert!(matches!(WChart::new(13), Err(Error::DimensionTooLarge(13))));
    assert!(matches!(WChart::new(2), Err(Error::DimensionTooSmall(2))));
}

#[test]
fn inverse_map_examples() {
    let w3 = WChart::new(3).unwrap();
    assert_eq!(
        w3.inverse(&v(&[2.0, 0.5, 1.0])).unwrap(),
        v(&[2.0, 3.0, 2.0])
    );
    for n in 3..=8 {
        let chart = WChart::new(n).unwrap();
        let mut e1 = Vector::zeros(n);
        e1[0] = 1.0;
        assert_eq!(chart.inverse(&e1).unwrap(), e1);
        let mut w = Vector::from_fn(n, |i, _| (i as f64).cos());
        w[0] = 0.0;
        assert_eq!(chart.inverse(&w).unwrap(), Vector::zeros(n));
        assert_eq!(chart.inverse(&Vector::zeros(n)).unwrap(), Vector::zeros(n));
    }
}

#[test]
fn forward_map_examples() {
    let w3 = WChart::new(3).unwrap();
    let w = w3.forward(&v(&[2.0, 3.0, 2.0])).unwrap();
    assert!(norm_inf(&(w - v(&[2.0, 0.5, 1.0]))) < 1e-15);
    for n in 3..=8 {
        let chart = WChart::new(n).unwrap();
        let mut z = Vector::zeros(n);
        z[0] = -0.7;
        assert_eq!(chart.forward(&z).unwrap(), z);
        z[0] = 0.0;
        z[2] = 1.0;
        assert!(matches!(
            chart.forward(&z),
            Err(Error::NearSingularChart { .. })
        ));
        z[0] = 1e-13;
        assert!(matches!(
            chart.forward(&z),
            Err(Error::NearSingularChart { .. })
        ));
    }
}

#[test]
fn forward_map_matches_written_out_n3_form() {
    let chart = WChart::new(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let z1: f64 = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let z = v(&[z1, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
        let expected = v(&[
            z1,
            z[1] / z1 - 2.0 * z[2] / (z1 * z1),
            2.0 * z[2] / (z1 * z1),
        ]);
        let w = chart.forward(&z).unwrap();
        assert!(norm_inf(&(w - &expected)) <= 1e-12 * norm_inf(&expected).max(1.0));
    }
}

#[test]
fn n3_shaped_potential_on_z2_zero() {
    let chart = WChart::new(3).unwrap();
    for &(z1, z3) in &[(1.0, 0.5), (-2.0, 3.0), (0.3, -0.1)] {
        let w = chart.forward(&v(&[z1, 0.0, z3])).unwrap();
        let vd = 0.5 * w.dot(&w);
        let expected = 0.5 * z1 * z1 + 4.0 * z3 * z3 / z1.powi(4);
        assert!(
            (vd - expected).abs() < 1e-12 * expected,
            "{vd} vs {expected}"
        );
    }
}

#[test]
fn jacobian_of_inverse_map() {
    let chart = WChart::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let w = Vector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
        let j = chart.jacobian_inverse(&w).unwrap();
        assert_eq!(j[(1, 1)], w[0]);
        let fd = jacobian_fd(|x| chart.inverse(x), &w, 1e-6).unwrap();
        assert!(max_abs(&(&j - fd)) < 1e-6);
    }
    let mut e1 = Vector::zeros(4);
    e1[0] = 1.0;
    let j = chart.jacobian_inverse(&e1).unwrap();
    assert_eq!(j[(0, 0)], 1.0);
    assert_eq!(j.row(0).iter().skip(1).copied().fold(0.0, f64::max), 0.0);
}

#[test]
fn jacobian_of_forward_map() {
    for n in 3..=6 {
        let chart = WChart::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13 + n as u64);
        for _ in 0..50 {
            let mut w = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            w[0] = rng.gen_range(0.5..2.0);
            let z = chart.inverse(&w).unwrap();
            let j = chart.jacobian_forward(&z).unwrap();
            let fd = jacobian_fd(|x| chart.forward(x), &z, 1e-7).unwrap();
            assert!(
                max_abs(&(&j - &fd)) < 1e-5 * max_abs(&j).max(1.0),
                "n = {n}"
            );
        }
    }
}

/// The product loses about `cond(S_n) * eps`, so only the well-conditioned
/// dimensions are held to 1e-8.
#[test]
fn forward_and_inverse_jacobians_are_inverse_matrices() {
    for n in 3..=5 {
        let chart = WChart::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23 + n as u64);
        for _ in 0..200 {
            let mut w = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            w[0] = rng.gen_range(0.1..10.0);
            let z = chart.inverse(&w).unwrap();
            let product = chart.jacobian_forward(&z).unwrap() * chart.jacobian_inverse(&w).unwrap();
            assert!(
                max_abs(&(product - Matrix::identity(n, n))) < 1e-8,
                "n = {n}"
            );
        }
    }
}

#[test]
fn each_tail_coordinate_integrates_the_previous_one() {
    let chart = WChart::new(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let mut w = Vector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        w[0] = rng.gen_range(-2.0..2.0);
        let mut flat = w.clone();
        flat[1] = 0.0;
        let z_flat = chart.inverse(&flat).unwrap();
        let h = 1e-6;
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus[0] += h;
        minus[0] -= h;
        let dz = (chart.inverse(&plus).unwrap() - chart.inverse(&minus).unwrap()) / (2.0 * h);
        // 1-indexed: dz_{i+1}/dw_1 = z_i |_{w_2 = 0} for i >= 2
        for i in 1..5 {
            assert!((dz[i + 1] - z_flat[i]).abs() < 1e-6, "i = {}", i + 1);
        }
    }
}

fn random_z(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    let z1: f64 = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut z = Vector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    z[0] = z1;
    z
}

#[test]
fn tail_residual_is_small_in_well_conditioned_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for n in 3..=5 {
        let chart = WChart::new(n).unwrap();
        for _ in 0..1000 {
            let z = random_z(&mut rng, n);
            let w = chart.forward(&z).unwrap();
            assert!(chart.tail_residual(&z, &w) < 1e-10, "n = {n}");
        }
    }
}

/// Normwise backward error of the scaled system `S y = N^{-1} z'`,
/// `y = N w'`, which is what the solver controls.
#[test]
fn scaled_tail_solve_is_backward_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for n in 3..=8 {
        let chart = WChart::new(n).unwrap();
        let s = s_matrix(n).unwrap().to_f64();
        let s_norm = s
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        for _ in 0..1000 {
            let z = random_z(&mut rng, n);
            let w = chart.forward(&z).unwrap();
            let z1 = z[0];
            let y = Vector::from_fn(n - 2, |a, _| z1.powi(a as i32 + 1) * w[a + 2]);
            let b = Vector::from_fn(n - 2, |a, _| z[a + 2] / z1.powi(a as i32 + 1));
            let backward = norm_inf(&(&s * &y - &b)) / (s_norm * norm_inf(&y) + norm_inf(&b));
            assert!(backward < 1e-14, "n = {n}: {backward:e}");
        }
    }
}

#[test]
fn chained_form_is_recognised() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for n in 3..=8 {
        let z = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        assert_eq!(max_abs(&(qz_perp(&z).unwrap() * chained_form_q(&z))), 0.0);
    }
    let z = v(&[0.0, 2.0, 3.0, 0.0]);
    assert_eq!(
        qz_perp(&z).unwrap(),
        Matrix::from_row_slice(2, 4, &[-2.0, 0.0, 1.0, 0.0, -3.0, 0.0, 0.0, 1.0])
    );
}

fn car_z_samples(n: usize, seed: u64) -> Vec<Vector> {
    let params = CarParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q = v(&[
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1.3..1.3),
                rng.gen_range(-1.3..1.3),
            ]);
            car_fz(params, &q).unwrap()
        })
        .collect()
}

#[test]
fn car_has_chained_structure_and_perturbation_breaks_it() {
    let sys = car_chained(CarParams::default()).unwrap();
    let samples = car_z_samples(100, 17);
    assert!(sys.is_chained(&samples));
    for z in &samples {
        let product = qz_perp(z).unwrap() * sys.z_system.annihilator_at(z).unwrap();
        assert!(
            max_abs(&product) < 1e-14 * max_abs(&sys.z_system.annihilator_at(z).unwrap()).max(1.0)
        );
    }
    let mut perturbed = sys.z_system.clone();
    let inner = sys.z_system.annihilator.clone();
    let map: MatrixMap = Arc::new(move |z| {
        let mut q = inner(z)?;
        q[(2, 0)] += 0.1;
        Ok(q)
    });
    perturbed.annihilator = map;
    assert!(!is_chained(&perturbed, &samples));
}

#[test]
fn car_chart_roundtrip_and_origin() {
    let params = CarParams::default();
    assert_eq!(car_fz(params, &Vector::zeros(4)).unwrap(), Vector::zeros(4));
    assert_eq!(
        car_fz(params, &v(&[4.0, 2.0, 0.0, 0.0])).unwrap(),
        v(&[4.0, 0.0, 0.0, 2.0])
    );
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..1000 {
        let q = v(&[
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-1.4..1.4),
            rng.gen_range(-1.4..1.4),
        ]);
        let back = car_fz_inv(params, &car_fz(params, &q).unwrap()).unwrap();
        assert!(norm_inf(&(back - &q)) < 1e-10);
    }
}

#[test]
fn car_qz_steering_entry_matches_closed_form() {
    let params = CarParams::default();
    let sys = car_chained(params).unwrap();
    let l = params.l;
    for z in car_z_samples(100, 19) {
        let qz = sys.z_system.annihilator_at(&z).unwrap();
        let r = z[2] * z[2] + 1.0;
        let expected = r.powf(1.5) / l * (l * l * z[1] * z[1] / r.powi(3) + 1.0);
        assert!((qz[(1, 1)] - expected).abs() < 1e-10 * expected);
    }
}

#[test]
fn identity_pushforward_leaves_the_model_unchanged() {
    let sys = car_chained(CarParams::default()).unwrap();
    let same = pushforward(&sys.base, &CoordinateChart::identity(4));
    let q = v(&[0.5, -0.3, 0.2, 0.1]);
    let p = v(&[0.4, -1.0]);
    assert_eq!(
        same.annihilator_at(&q).unwrap(),
        sys.base.annihilator_at(&q).unwrap()
    );
    assert_eq!(same.mass_at(&q).unwrap(), sys.base.mass_at(&q).unwrap());
    assert_eq!(
        same.coriolis_at(&q, &p).unwrap(),
        sys.base.coriolis_at(&q, &p).unwrap()
    );
    assert_eq!(
        same.kinetic_gradient_at(&q, &p).unwrap(),
        sys.base.kinetic_gradient_at(&q, &p).unwrap()
    );
}

#[test]
fn composed_pushforward_equals_sequential_pushforwards() {
    let sys = car_chained(CarParams::default()).unwrap();
    let composed = pushforward(&sys.base, &sys.chart.then(&sys.w_chart()));
    let sequential = sys.w_system();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for z in car_z_samples(50, 21) {
        if z[0].abs() < 0.5 {
            continue;
        }
        let w = sys.wchart.forward(&z).unwrap();
        let p = v(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let a = composed.annihilator_at(&w).unwrap();
        let b = sequential.annihilator_at(&w).unwrap();
        assert!(max_abs(&(&a - &b)) < 1e-10 * max_abs(&a).max(1.0));
        let ga = composed.kinetic_gradient_at(&w, &p).unwrap();
        let gb = sequential.kinetic_gradient_at(&w, &p).unwrap();
        assert!(norm_inf(&(&ga - &gb)) < 1e-10 * norm_inf(&ga).max(1.0));
        assert!(
            max_abs(&(composed.mass_at(&w).unwrap() - sequential.mass_at(&w).unwrap())) < 1e-10
        );
    }
}

#[test]
fn w_chart_pushforward_fails_on_the_singular_plane() {
    let sys = car_chained(CarParams::default()).unwrap();
    let w_sys = sys.w_system();
    // w1 = 0 maps to z = 0, where f_w has no derivative
    let w = v(&[0.0, 1.0, 0.5, 0.2]);
    assert!(matches!(
        w_sys.annihilator_at(&w),
        Err(Error::ChartViolation(_))
    ));
}

#[test]
fn factorial_helpers() {
    assert_eq!(inverse_factorial(0), ratio(1, 1));
    assert_eq!(inverse_factorial(5), ratio(1, 120));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn roundtrip_in_well_conditioned_dimensions(
        n in 3usize..=5,
        w1 in 0.1..10.0f64,
        negative in any::<bool>(),
        tail in proptest::collection::vec(-1.0..1.0f64, 8),
    ) {
        let chart = WChart::new(n).unwrap();
        let mut w = Vector::from_fn(n, |i, _| tail[i]);
        w[0] = if negative { -w1 } else { w1 };
        let back = chart.forward(&chart.inverse(&w).unwrap()).unwrap();
        prop_assert!(norm_inf(&(back - &w)) < 1e-9);
    }

    #[test]
    fn inverse_then_forward_preserves_w1_and_sign(
        n in 3usize..=8,
        w1 in 0.1..10.0f64,
        tail in proptest::collection::vec(-1.0..1.0f64, 8),
    ) {
        let chart = WChart::new(n).unwrap();
        let mut w = Vector::from_fn(n, |i, _| tail[i]);
        w[0] = w1;
        let z = chart.inverse(&w).unwrap();
        prop_assert_eq!(z[0], w1);
        prop_assert_eq!(chart.forward(&z).unwrap()[0], w1);
    }
}
