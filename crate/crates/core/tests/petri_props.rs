use hfgt::petri::{simulate, step_ptn, FiringSchedule, Marking, PlaceTransitionNet};
use hfgt::sparse::CsrMatrix;
use hfgt::Error;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Net {
    plus: Vec<Vec<f64>>,
    minus: Vec<Vec<f64>>,
}

impl Net {
    fn places(&self) -> usize {
        self.plus.len()
    }
    fn transitions(&self) -> usize {
        self.plus[0].len()
    }
}

fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.0), (1u32..=12).prop_map(|w| w as f64 / 4.0)]
}

fn matrix(p: usize, t: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(weight(), t), p)
}

fn net() -> impl Strategy<Value = Net> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(p, t)| (matrix(p, t), matrix(p, t)).prop_map(|(plus, minus)| Net { plus, minus }))
}

/// `M+` column j is `M-` column j rotated, so both columns carry the same total.
fn balanced_net() -> impl Strategy<Value = Net> {
    (1usize..=5, 1usize..=5)
        .prop_flat_map(|(p, t)| (matrix(p, t), prop::collection::vec(0..p, t)))
        .prop_map(|(minus, shifts)| {
            let p = minus.len();
            let mut plus = minus.clone();
            for (j, s) in shifts.into_iter().enumerate() {
                for r in 0..p {
                    plus[(r + s) % p][j] = minus[r][j];
                }
            }
            Net { plus, minus }
        })
}

fn firing(t: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..5.0, t)
}

fn net_with<S: Strategy<Value = Net>>(
    nets: S,
) -> impl Strategy<Value = (Net, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
    nets.prop_flat_map(|n| {
        let t = n.transitions();
        (Just(n), firing(t), firing(t), firing(t), firing(t), 0.0f64..2.0, 0.0f64..2.0)
    })
}

fn csr(m: &[Vec<f64>]) -> CsrMatrix {
    CsrMatrix::from_dense(m)
}

/// Plenty of tokens everywhere so nothing below goes negative.
fn rich(n: &Net) -> Marking {
    Marking {
        q_b: vec![1000.0; n.places()],
        q_e: vec![1000.0; n.transitions()],
    }
}

fn dense_step(n: &Net, q: &Marking, um: &[f64], up: &[f64]) -> Marking {
    let mut q_b = q.q_b.clone();
    for (s, qs) in q_b.iter_mut().enumerate() {
        for j in 0..n.transitions() {
            *qs += n.plus[s][j] * up[j] - n.minus[s][j] * um[j];
        }
    }
    let q_e = (0..n.transitions()).map(|j| q.q_e[j] - up[j] + um[j]).collect();
    Marking { q_b, q_e }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
}

fn lincomb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn step_matches_dense_state_equation((n, um, up, _, _, _, _) in net_with(net())) {
        let q = rich(&n);
        let got = step_ptn(&q, &um, &up, &csr(&n.plus), &csr(&n.minus)).unwrap();
        let want = dense_step(&n, &q, &um, &up);
        prop_assert!(close(&got.q_b, &want.q_b), "{:?} vs {:?}", got, want);
        prop_assert!(close(&got.q_e, &want.q_e));
    }

    #[test]
    fn step_increment_is_linear((n, um1, up1, um2, up2, a, b) in net_with(net())) {
        let q = rich(&n);
        let (mp, mm) = (csr(&n.plus), csr(&n.minus));
        let delta = |um: &[f64], up: &[f64]| {
            let m = step_ptn(&q, um, up, &mp, &mm).unwrap();
            let db: Vec<f64> = m.q_b.iter().zip(&q.q_b).map(|(x, y)| x - y).collect();
            let de: Vec<f64> = m.q_e.iter().zip(&q.q_e).map(|(x, y)| x - y).collect();
            (db, de)
        };
        let (b1, e1) = delta(&um1, &up1);
        let (b2, e2) = delta(&um2, &up2);
        let (bc, ec) = delta(&lincomb(a, &um1, b, &um2), &lincomb(a, &up1, b, &up2));
        prop_assert!(close(&bc, &lincomb(a, &b1, b, &b2)));
        prop_assert!(close(&ec, &lincomb(a, &e1, b, &e2)));
    }

    #[test]
    fn balanced_nets_conserve_tokens((n, um, up, _, _, _, _) in net_with(balanced_net())) {
        // column weight of each transition: tokens it holds while firing
        let c: Vec<f64> = (0..n.transitions()).map(|j| n.minus.iter().map(|r| r[j]).sum()).collect();
        let total = |m: &Marking| m.q_b.iter().sum::<f64>() + m.q_e.iter().zip(&c).map(|(q, w)| q * w).sum::<f64>();
        let q = rich(&n);
        let next = step_ptn(&q, &um, &up, &csr(&n.plus), &csr(&n.minus)).unwrap();
        prop_assert!((total(&next) - total(&q)).abs() <= 1e-9 * total(&q));
    }

    #[test]
    fn multi_step_replay_conserves_tokens(
        (n, sched) in balanced_net().prop_flat_map(|n| {
            let t = n.transitions();
            (Just(n), prop::collection::vec((firing(t), firing(t)), 1..6))
        })
    ) {
        let c: Vec<f64> = (0..n.transitions()).map(|j| n.minus.iter().map(|r| r[j]).sum()).collect();
        let total = |m: &Marking| m.q_b.iter().sum::<f64>() + m.q_e.iter().zip(&c).map(|(q, w)| q * w).sum::<f64>();
        let ptn = PlaceTransitionNet::new(
            (0..n.places()).map(|i| format!("p{i}")).collect(),
            (0..n.transitions()).map(|j| format!("t{j}")).collect(),
            csr(&n.plus),
            csr(&n.minus),
            vec![0; n.transitions()],
        ).unwrap();
        let schedule = FiringSchedule {
            u_minus: sched.iter().map(|s| s.0.clone()).collect(),
            u_plus: sched.iter().map(|s| s.1.clone()).collect(),
        };
        let q0 = rich(&n);
        let traj = simulate(&ptn, &schedule, &q0, f64::INFINITY).unwrap();
        prop_assert_eq!(traj.len(), sched.len() + 1);
        for m in &traj {
            prop_assert!((total(m) - total(&q0)).abs() <= 1e-9 * total(&q0));
        }
    }

    #[test]
    fn overdrawn_place_is_rejected((n, um, _, _, _, _, _) in net_with(net())) {
        let pulls: Vec<f64> = n.minus.iter().map(|r| r.iter().zip(&um).map(|(w, u)| w * u).sum()).collect();
        prop_assume!(pulls.iter().any(|&p| p > 1e-3));
        let q = Marking {
            q_b: vec![0.0; n.places()],
            q_e: vec![0.0; n.transitions()],
        };
        let zero = vec![0.0; n.transitions()];
        let r = step_ptn(&q, &um, &zero, &csr(&n.plus), &csr(&n.minus));
        prop_assert!(matches!(r, Err(Error::NegativeMarking { .. })), "{:?}", r);
    }
}

#[test]
fn mismatched_sizes_are_dimension_errors() {
    let m = CsrMatrix::identity(2);
    let q = Marking::zeros(2, 2);
    assert!(matches!(step_ptn(&q, &[0.0], &[0.0, 0.0], &m, &m), Err(Error::Dimension(_))));
}
