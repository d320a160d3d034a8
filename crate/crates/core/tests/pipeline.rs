use lgcol::analysis::{error_report, solve_ocp, sweep};
use lgcol::basis::Scheme;
use lgcol::models::{double_integrator_min_time_ocp, pendulum_ocp, BenchmarkParams};
use lgcol::nlp::{backend_adapter, NlpExport, SolveOptions};
use lgcol::transcribe;

#[test]
fn pendulum_lg2_sweep_converges() {
    let ocp = pendulum_ocp(BenchmarkParams::embedded().pendulum);
    let reports = sweep(&ocp, Scheme::Lg2, &[6, 10, 14], &SolveOptions::default()).unwrap();
    assert_eq!(reports.iter().map(|r| r.n).collect::<Vec<_>>(), vec![6, 10, 14]);
    for r in &reports {
        assert_eq!(r.status, "converged", "N={}", r.n);
        assert_eq!(r.e1, vec![0.0]);
        assert!(r.e2[0].is_finite() && r.e2[0] > 0.0);
        assert_eq!(r.objective, r.final_time);
    }
}

#[test]
fn repeated_solves_give_identical_reports() {
    let ocp = double_integrator_min_time_ocp(1.0);
    let run = || {
        let s = solve_ocp(&ocp, Scheme::Lg, 8, &SolveOptions::default()).unwrap();
        error_report(&ocp, &s).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.same_numbers(&b));
}

#[test]
fn exported_transcription_round_trips() {
    let ocp = pendulum_ocp(BenchmarkParams::embedded().pendulum);
    for scheme in [Scheme::Lg, Scheme::Lg2] {
        let tr = transcribe(&ocp, scheme, 6).unwrap();
        let export = backend_adapter(&tr.problem, Some(&tr.initial_guess));
        let back = NlpExport::from_json(&export.to_json()).unwrap();
        assert_eq!(back, export);
        assert!(back.matches(&tr.problem));
    }
    let lg5 = backend_adapter(&transcribe(&ocp, Scheme::Lg, 5).unwrap().problem, None);
    assert_eq!(lg5.n_eq, 14);
    let names: Vec<(&str, usize)> = lg5.eq_blocks.iter().map(|b| (b.name.as_str(), b.len)).collect();
    assert_eq!(names, vec![("collocation", 10), ("boundary", 4)]);
}
