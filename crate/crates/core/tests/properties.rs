use lvm_core::distributions::{GeneralizedGaussian, StickBreakingDP};
use lvm_core::numerics::{cholesky, kron, relative_frobenius, sym_eig, vec};
use lvm_core::zoo::{normal_cdf, LisrelDims, StructuralSpec};
use lvm_core::{Matrix, RngStream, Vector};
use proptest::prelude::*;

fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

/// Two-sided KS statistic of `xs` against the standard normal CDF.
fn ks_statistic(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal_cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn shape_two_generalized_gaussian_is_normal() {
    let g = GeneralizedGaussian::unit_variance(2.0).unwrap();
    let mut rng = RngStream::new(41);
    let ks = ks_statistic(g.sample(100_000, &mut rng));
    assert!(ks < 0.01, "KS = {ks}");
}

#[test]
fn laplace_sources_are_supergaussian() {
    let g = GeneralizedGaussian::unit_variance(1.0).unwrap();
    let mut rng = RngStream::new(42);
    let xs = g.sample(400_000, &mut rng);
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let excess = m4 / (m2 * m2) - 3.0;
    assert!((excess - 3.0).abs() < 0.3, "excess kurtosis {excess}");
    assert!((g.excess_kurtosis() - 3.0).abs() < 1e-12);
}

#[test]
fn stick_breaking_expected_weights() {
    for alpha in [0.5, 1.0, 5.0] {
        let dp = StickBreakingDP::new(alpha, StickBreakingDP::DEFAULT_TRUNCATION).unwrap();
        let mut rng = RngStream::new(43);
        let draws = 100_000;
        let mut sums = [0.0; 5];
        for _ in 0..draws {
            let w = dp.weights(&mut rng);
            for (s, wk) in sums.iter_mut().zip(&w) {
                *s += wk;
            }
        }
        for (k, s) in sums.iter().enumerate() {
            let expected = (1.0 / (1.0 + alpha)) * (alpha / (1.0 + alpha)).powi(k as i32);
            let mean = s / draws as f64;
            assert!(
                (mean - expected).abs() / expected < 0.05,
                "alpha {alpha}, k {}: {mean} vs {expected}",
                k + 1
            );
        }
    }
}

#[test]
fn random_lisrel_specs_are_symmetric_psd() {
    let mut rng = RngStream::new(44);
    for trial in 0..500 {
        let dims = LisrelDims {
            d1: 1 + trial % 3,
            d2: 1 + (trial / 3) % 3,
            p1: 2 + trial % 4,
            p2: 2 + (trial / 4) % 4,
        };
        let spec = StructuralSpec::random(dims, &mut rng);
        let cov = spec.implied_covariance().unwrap();
        assert!((&cov - cov.transpose()).amax() == 0.0, "trial {trial}");
        let min = sym_eig(&cov).unwrap().values.min();
        assert!(min > 0.0, "trial {trial}: smallest eigenvalue {min}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sym_eig_reconstructs_spd(seed in any::<u64>(), dim in 1usize..=50) {
        let mut rng = RngStream::new(seed);
        let a = random(dim, dim, &mut rng);
        let spd = &a * a.transpose() + Matrix::identity(dim, dim) * 0.1;
        let eig = sym_eig(&spd).unwrap();
        let rebuilt = &eig.vectors * Matrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        prop_assert!(relative_frobenius(&rebuilt, &spd) < 1e-8);
        prop_assert!(eig.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn kron_vec_identity_random(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let (a, b, x) = (random(3, 3, &mut rng), random(3, 3, &mut rng), random(3, 3, &mut rng));
        let lhs = Vector::from_vec(vec(&(&b * &x * a.transpose())));
        let rhs = kron(&a, &b) * Vector::from_vec(vec(&x));
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn cholesky_inverts_lower_products(seed in any::<u64>(), dim in 1usize..=12) {
        let mut rng = RngStream::new(seed);
        let l = Matrix::from_fn(dim, dim, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => rng.standard_normal(),
            std::cmp::Ordering::Equal => 0.5 + rng.uniform(),
            std::cmp::Ordering::Less => 0.0,
        });
        let back = cholesky(&(&l * l.transpose())).unwrap();
        prop_assert!((back - l).amax() < 1e-10);
    }
}
