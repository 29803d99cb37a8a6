use hvopt::continuation::{diagnose_conditions, run_continuation, ContinuationOptions, TermFamilies};
use hvopt::approx::ApproxFamily;
use hvopt::instances::{continuation_instances, lift_instances, three_piece_demo, three_piece_problem};
use hvopt::lift::{choose_penalty, solve_lifted, LiftOptions};
use hvopt::oracle::grid_local_min_value;
use hvopt::stationarity::{three_piece_stationarity, Tolerances};
use hvopt::Exec;

#[test]
fn lifted_solves_reach_the_curated_minimizers() {
    for inst in lift_instances() {
        let lam = choose_penalty(&inst.problem, 1.5, 0).unwrap().lambda;
        let r = solve_lifted(&inst.problem, lam, &LiftOptions::default()).unwrap();
        let err = r.x.iter().zip(&inst.minimizer).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{}: {:?}", inst.name, r.x);
        assert!(r.certified(), "{}: {:?}", inst.name, r.certificate);
        let pi: Vec<f64> = inst.problem.objective_terms.iter().map(|t| t.eval(&r.x)).collect();
        assert_eq!(r.recovered.t, pi, "{}", inst.name);
    }
}

#[test]
fn continuation_limits_are_certified_local_values() {
    let fam = ApproxFamily::modified_hinge();
    for inst in continuation_instances() {
        let lam = choose_penalty(&inst.problem, 1.5, 0).unwrap().lambda;
        let fams = TermFamilies::uniform(&fam, &inst.problem).unwrap();
        let t = run_continuation(&inst.problem, &fams, lam, &ContinuationOptions::default(), &inst.start).unwrap();
        let d = diagnose_conditions(&t, &inst.problem, &Tolerances::default()).unwrap();
        let cert = d.certificate.as_ref().expect("certificate");
        assert!(cert.verdict.is_stationary(), "{}: {:?} {:?}", inst.name, t.limit, cert.verdict);
        let local = grid_local_min_value(&inst.problem, &t.limit, 0.05, 41, Exec::Parallel).unwrap().unwrap();
        assert!((t.objective - local).abs() <= 1e-4, "{}: {} vs {}", inst.name, t.objective, local);
        for c in ["C1", "C2", "C5"] {
            assert_eq!(d.status(c), hvopt::continuation::ConditionStatus::Pass, "{} {c}: {:?}", inst.name, d.conditions);
        }
    }
}

#[test]
fn three_piece_limit_matches_one_problem() {
    let (tp, set, x0) = three_piece_demo();
    let p = three_piece_problem(&tp, &set);
    let fams = TermFamilies::uniform(&ApproxFamily::modified_hinge(), &p).unwrap();
    let t = run_continuation(&p, &fams, 0.0, &ContinuationOptions::default(), &x0).unwrap();
    let r = three_piece_stationarity(&tp, &set, &t.limit, &Tolerances::default()).unwrap();
    assert_eq!(r.matched.len(), 1, "{:?} {:?}", t.limit, r);
}
