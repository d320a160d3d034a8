use std::sync::Arc;

use lgcol::ivp::{solve_ivp_lg2, ControlFn, IvpSpec};
use lgcol::models::{BenchmarkParams, DoubleIntegrator, Pendulum};
use proptest::prelude::*;

fn poly(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lg2_ivp_meets_initial_conditions(
        q0 in -2.0f64..2.0,
        v0 in -2.0f64..2.0,
        amp in -2.0f64..2.0,
        tf in 0.2f64..1.5,
        n in 4usize..14,
    ) {
        let control: ControlFn = Arc::new(move |t| vec![amp * (3.0 * t).sin()]);
        let spec = IvpSpec {
            model: Arc::new(Pendulum::new(BenchmarkParams::embedded().pendulum)),
            q0: vec![q0],
            v0: vec![v0],
            control,
            t_f: tf,
            n,
        };
        let traj = solve_ivp_lg2(&spec).unwrap();
        prop_assert!((traj.config(0.0)[0] - q0).abs() <= 1e-12);
        prop_assert!((traj.config_rate(0.0)[0] - v0).abs() <= 1e-12);
    }

    #[test]
    fn polynomial_forcing_is_reproduced_exactly(
        n in 1usize..10,
        coeffs in prop::collection::vec(-1.0f64..1.0, 10),
        q0 in -1.0f64..1.0,
        v0 in -1.0f64..1.0,
        tf in 0.5f64..2.0,
    ) {
        // u of degree N-1 gives q of degree N+1.
        let c: Vec<f64> = coeffs[..n].to_vec();
        let exact = {
            let c = c.clone();
            move |t: f64| {
                q0 + v0 * t
                    + c.iter()
                        .enumerate()
                        .map(|(k, ck)| ck * t.powi(k as i32 + 2) / ((k + 1) * (k + 2)) as f64)
                        .sum::<f64>()
            }
        };
        let control: ControlFn = {
            let c = c.clone();
            Arc::new(move |t| vec![poly(&c, t)])
        };
        let spec = IvpSpec {
            model: Arc::new(DoubleIntegrator),
            q0: vec![q0],
            v0: vec![v0],
            control,
            t_f: tf,
            n,
        };
        let traj = solve_ivp_lg2(&spec).unwrap();
        for k in 0..=20 {
            let t = tf * k as f64 / 20.0;
            prop_assert!((traj.config(t)[0] - exact(t)).abs() <= 1e-11, "t={}", t);
        }
    }
}
