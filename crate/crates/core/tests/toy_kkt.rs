mod kkt;

use hfgt::qp::Var;
use hfgt::{solve, verify, SolveOptions, SolveStatus};
use kkt::{active, certify, kkt_point, toy};

#[test]
fn toy_has_24_variables() {
    let p = toy();
    assert_eq!(p.qp.layout.len(), 24);
    assert_eq!(p.report.x_formula, 24);
}

#[test]
fn solver_matches_direct_kkt_solve() {
    let p = toy();
    let sol = solve(&p.qp, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.polished);

    // active set read off the solver's answer, then certified independently
    let zero: Vec<usize> = (0..sol.x.len()).filter(|&j| sol.x[j] < 1e-6).collect();
    let dx = p.qp.d.mul_vec(&sol.x);
    let tight: Vec<usize> = (0..dx.len()).filter(|&r| p.qp.e[r] - dx[r] < 1e-6).collect();
    let act = active(&p, &zero, &tight);
    let oracle = kkt_point(&p, &act);
    certify(&p, &oracle, &act).unwrap();

    let err = sol.x.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "max |x - x_kkt| = {err:e}");
    let obj_oracle = p.qp.objective(oracle.as_slice());
    assert!((sol.objective - obj_oracle).abs() < 1e-8, "{} vs {obj_oracle}", sol.objective);
    assert!(verify(&p, &sol.x, 1e-8).passed);
}

#[test]
fn toy_split_equalizes_marginal_cost() {
    // u1 + u2 = 10 and 1 + u1 = 2 + u2/2  =>  u1 = 4, u2 = 6
    let p = toy();
    let sol = solve(&p.qp, &SolveOptions::default()).unwrap();
    let l = p.layout();
    let start = l.slice(&sol.x, 1, Var::UMinus);
    assert!((start[0] - 4.0).abs() < 1e-8, "{start:?}");
    assert!((start[1] - 6.0).abs() < 1e-8, "{start:?}");
    let cost = 4.0 + 0.5 * 16.0 + 2.0 * 6.0 + 0.25 * 36.0;
    assert!((sol.objective - cost).abs() < 1e-6, "{}", sol.objective);
}

#[test]
fn a_wrong_active_set_fails_certification() {
    // pinning pipe 2 to zero forces everything through pipe 1, past its capacity
    let p = toy();
    let l = p.layout();
    let u2 = l.index(1, Var::UMinus, 1);
    let sol = solve(&p.qp, &SolveOptions::default()).unwrap();
    let mut zero: Vec<usize> = (0..sol.x.len()).filter(|&j| sol.x[j] < 1e-6).collect();
    zero.push(u2);
    let act = active(&p, &zero, &[]);
    let x = kkt_point(&p, &act);
    assert!(certify(&p, &x, &act).is_err());
}
