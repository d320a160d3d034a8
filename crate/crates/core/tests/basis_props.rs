use lgcol::basis::{build_basis, gauss_legendre, lg_points, Scheme};
use proptest::prelude::*;

fn monomial_integral(m: usize) -> f64 {
    if m % 2 == 0 {
        2.0 / (m as f64 + 1.0)
    } else {
        0.0
    }
}

/// Horner evaluation of `sum c_k tau^k` and its derivative.
fn poly(c: &[f64], tau: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &ck in c.iter().rev() {
        dp = dp * tau + p;
        p = p * tau + ck;
    }
    (p, dp)
}

proptest! {
    #[test]
    fn quadrature_is_exact_to_degree_2n_minus_1(n in 1usize..=30, frac in 0.0f64..1.0) {
        let m = ((2 * n - 1) as f64 * frac).round() as usize;
        let (x, w) = gauss_legendre(n).unwrap();
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(m as i32)).sum();
        prop_assert!((q - monomial_integral(m)).abs() <= 1e-12, "N={} m={} got {}", n, m, q);
    }

    #[test]
    fn lg_matrix_differentiates_degree_n(
        n in 1usize..=20,
        coeffs in prop::collection::vec(-1.0f64..1.0, 21),
    ) {
        let c = &coeffs[..=n];
        let basis = build_basis(Scheme::Lg, n).unwrap();
        let values: Vec<f64> = basis.nodes().points().iter().map(|&t| poly(c, t).0).collect();
        let d = basis.diff_values(&values).unwrap();
        prop_assert_eq!(d.len(), n);
        for (k, &tau) in basis.collocation_points().iter().enumerate() {
            prop_assert!((d[k] - poly(c, tau).1).abs() <= 1e-9);
        }
    }

    #[test]
    fn lg2_matrix_differentiates_degree_n_plus_1(
        n in 1usize..=20,
        coeffs in prop::collection::vec(-1.0f64..1.0, 22),
    ) {
        let c = &coeffs[..=n + 1];
        let basis = build_basis(Scheme::Lg2, n).unwrap();
        let tau = basis.nodes().points();
        let values: Vec<f64> = tau.iter().map(|&t| poly(c, t).0).collect();
        let d = basis.diff_values(&values).unwrap();
        prop_assert_eq!(d.len(), n + 2);
        for (k, &t) in tau.iter().enumerate() {
            prop_assert!((d[k] - poly(c, t).1).abs() <= 1e-9);
        }
    }

    #[test]
    fn gauss_points_are_antisymmetric(n in 1usize..=40) {
        let x = lg_points(n).unwrap();
        for i in 0..n {
            prop_assert!((x[i] + x[n - 1 - i]).abs() <= 1e-15);
        }
        prop_assert!(x.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lg2_nodes_bracket_the_gauss_points(n in 1usize..=30) {
        let basis = build_basis(Scheme::Lg2, n).unwrap();
        let tau = basis.nodes().points();
        prop_assert_eq!(tau[0], -1.0);
        prop_assert_eq!(tau[n + 1], 1.0);
        prop_assert_eq!(&tau[1..=n], &lg_points(n).unwrap()[..]);
    }
}

#[test]
fn sine_derivative_converges_spectrally() {
    let errors: Vec<f64> = [4, 8, 16, 24]
        .iter()
        .map(|&n| {
            let basis = build_basis(Scheme::Lg2, n).unwrap();
            let tau = basis.nodes().points();
            let values: Vec<f64> = tau.iter().map(|t| t.sin()).collect();
            let d = basis.diff_values(&values).unwrap();
            d.iter().zip(tau).map(|(d, t)| (d - t.cos()).abs()).fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[1] <= errors[0] / 10.0, "{errors:?}");
    assert!(errors[2] <= errors[1] / 10.0, "{errors:?}");
    // N=16 already sits at rounding level, so 24 can only stay there.
    assert!(errors[3] <= 1e-12, "{errors:?}");
}
