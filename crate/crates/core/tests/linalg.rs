mod common;

use common::{random_density, random_hermitian};
use czgrape_core::linalg::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn taylor_exp(a: &CMatrix) -> CMatrix {
    // Scaling and squaring with a long Taylor series as an independent reference.
    let n = a.nrows();
    let norm = norm_one(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / c(2f64.powi(s), 0.0);
    let mut term = identity(n);
    let mut sum = identity(n);
    for k in 1..40 {
        term = &term * &b / c(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_of_antihermitian_is_unitary(seed in any::<u64>(), scale in 0.01f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(9, scale, &mut rng);
        let u = expm(&(h * c(0.0, -1.0)));
        prop_assert!(max_abs(&(u.adjoint() * &u - identity(9))) < 1e-11);
    }

    #[test]
    fn exponential_matches_reference(seed in any::<u64>(), scale in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hermitian(6, scale, &mut rng) * c(0.3, -1.0);
        let want = taylor_exp(&a);
        let got = expm(&a);
        prop_assert!(max_abs(&(&got - &want)) <= 1e-11 * max_abs(&want).max(1.0));
    }

    #[test]
    fn exponential_inverse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hermitian(5, 1.0, &mut rng) * c(0.7, 0.2);
        let prod = expm(&a) * expm(&-a);
        prop_assert!(max_abs(&(prod - identity(5))) < 1e-12);
    }

    #[test]
    fn kron_mixed_product(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, x, y] = [0, 1, 2, 3].map(|_| random_hermitian(3, 1.0, &mut rng));
        let lhs = kron(&a, &b) * kron(&x, &y);
        let rhs = kron(&(&a * &x), &(&b * &y));
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn vectorization_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(9, &mut rng);
        prop_assert_eq!(unvectorize(&vectorize(&rho)), rho);
    }

    #[test]
    fn projection_yields_a_state(seed in any::<u64>(), shift in -0.3f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = random_density(4, &mut rng) + random_hermitian(4, 0.1, &mut rng) + identity(4) * c(shift, 0.0);
        let rho = project_density(&noisy);
        let (vals, _) = hermitian_eigen(&rho);
        prop_assert!(vals.iter().all(|&v| v >= -1e-12));
        prop_assert!((trace(&rho).re - 1.0).abs() < 1e-12);
        prop_assert!(hermiticity_defect(&rho) < 1e-12);
    }
}

#[test]
fn checked_exponential_rejects_non_finite() {
    let mut a = identity(3);
    a[(1, 2)] = c(f64::NAN, 0.0);
    assert!(matrix_exponential(&a, 1.0).is_err());
}
