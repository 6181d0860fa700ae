use std::collections::BTreeMap;

use itrcr::forest::{ArmData, OutcomeKind, TreeNode};
use itrcr::sim::{randomized_beta_pi, CensoringSpec, Scenario, ScenarioKind, TruthOracle};
use itrcr::*;
use proptest::prelude::*;

fn status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Censored), Just(Status::Cause1), Just(Status::Cause2)]
}

fn samples(max: usize) -> impl Strategy<Value = Vec<WeightedSample>> {
    prop::collection::vec((0u32..15, status()), 1..max).prop_map(|v| {
        v.into_iter()
            .map(|(t, s)| WeightedSample::unit(t as f64 * 0.25 + 0.25, s))
            .collect()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn km_aj_partition_unity(s in samples(50)) {
        let km = kaplan_meier(&s).unwrap();
        let f1 = aalen_johansen(&s, Status::Cause1).unwrap();
        let f2 = aalen_johansen(&s, Status::Cause2).unwrap();
        for t in [0.0, 0.3, 0.9, 1.7, 2.6, 4.0] {
            prop_assert!((km.at(t) + f1.at(t) + f2.at(t) - 1.0).abs() <= 1e-12);
        }
        for w in km.values().windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for w in f1.values().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn common_weight_scale_is_invisible(s in samples(40), c in 0.1f64..20.0) {
        let scaled: Vec<_> = s.iter().map(|x| WeightedSample::new(x.time, x.status, c)).collect();
        let (a, b) = (kaplan_meier(&s).unwrap(), kaplan_meier(&scaled).unwrap());
        prop_assert_eq!(a.jump_times(), b.jump_times());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(close(*x, *y, 1e-12));
        }
        let (a, b) = (aalen_johansen(&s, Status::Cause1).unwrap(), aalen_johansen(&scaled, Status::Cause1).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn auc_is_linear_under_averaging(a in samples(30), b in samples(30), w in 0.05f64..0.95, tau in 0.1f64..5.0) {
        let (ka, kb) = (kaplan_meier(&a).unwrap(), kaplan_meier(&b).unwrap());
        let avg = average_curves(&[&ka, &kb], Some(&[w, 1.0 - w])).unwrap();
        let lhs = truncated_auc(&avg, tau).unwrap();
        let rhs = w * truncated_auc(&ka, tau).unwrap() + (1.0 - w) * truncated_auc(&kb, tau).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12));
    }

    #[test]
    fn averaging_copies_is_idempotent(s in samples(30), k in 1usize..12) {
        let c = aalen_johansen(&s, Status::Cause2).unwrap();
        let copies = vec![&c; k];
        prop_assert_eq!(average_curves(&copies, None).unwrap(), c);
    }

    #[test]
    fn split_scores_ignore_common_weight_scale(l in samples(30), r in samples(30), c in 0.5f64..4.0) {
        let scale = |v: &[WeightedSample]| v.iter().map(|x| WeightedSample::new(x.time, x.status, c)).collect::<Vec<_>>();
        // the Gray score is unstandardized and so scale free; log-rank is not
        let (g, gs) = (gray_score(&l, &r, 3.0), gray_score(&scale(&l), &scale(&r), 3.0));
        prop_assert!(close(g.value, gs.value, 1e-10));
    }

    #[test]
    fn tolerance_widens_with_alpha(
        phi in prop::collection::vec((0.1f64..10.0, 0.0f64..5.0), 1..6),
        a in 0.0f64..0.5,
        b in 0.0f64..0.5,
    ) {
        let phi1: BTreeMap<_, _> = phi.iter().enumerate().map(|(i, x)| (Treatment(i as u32), x.0)).collect();
        let phi2: BTreeMap<_, _> = phi.iter().enumerate().map(|(i, x)| (Treatment(i as u32), x.1)).collect();
        let (lo, hi) = (a.min(b), a.max(b));
        let (t_lo, t_hi) = (two_phase(&phi1, &phi2, lo), two_phase(&phi1, &phi2, hi));
        prop_assert!(t_lo.tolerance_set.is_subset(&t_hi.tolerance_set));
        prop_assert!(t_hi.phi2[&t_hi.chosen] <= t_lo.phi2[&t_lo.chosen]);

        // scaling both criteria by positive constants keeps the decision
        let s1: BTreeMap<_, _> = phi1.iter().map(|(k, v)| (*k, v * 4.0)).collect();
        let s2: BTreeMap<_, _> = phi2.iter().map(|(k, v)| (*k, v * 0.5)).collect();
        prop_assert_eq!(two_phase(&s1, &s2, hi).chosen, t_hi.chosen);
    }
}

fn random_arm(seed: u64, n: usize, p: usize) -> ArmData {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| Subject {
            id: i.to_string(),
            time: rng.random_range(0.05..3.0),
            status: Status::try_from(rng.random_range(0..3u8)).unwrap(),
            treatment: Treatment(0),
            covariates: (0..p).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect(),
            feasible: None,
        })
        .collect();
    let ds = CompetingRisksDataset::new(subjects, Some(2.0)).unwrap();
    ArmData::from_dataset(&ds, Treatment(0))
}

/// Returns `(n, events)` of the subtree after checking every split on the way.
fn check_node(node: &TreeNode, params: &ForestParams) -> (usize, usize) {
    match node {
        TreeNode::Terminal { n, events, .. } => (*n, *events),
        TreeNode::Internal { left, right, .. } => {
            let (nl, el) = check_node(left, params);
            let (nr, er) = check_node(right, params);
            let n = nl + nr;
            let floor = params.n_min.max((params.alpha_reg * n as f64).ceil() as usize);
            assert!(nl >= floor && nr >= floor, "children {nl}/{nr} under floor {floor}");
            assert!(
                el >= params.n_minevent && er >= params.n_minevent,
                "child events {el}/{er}"
            );
            (n, el + er)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trees_respect_size_floors(
        seed in any::<u64>(),
        n in 20usize..160,
        n_min in 1usize..8,
        n_minevent in 1usize..4,
        alpha_reg in 0.0f64..0.3,
        psi in 0.0f64..1.0,
    ) {
        let data = random_arm(seed, n, 3);
        let params = ForestParams { n_tree: 8, n_min, n_minevent, alpha_reg, psi_split: psi, seed, ..Default::default() };
        for kind in [OutcomeKind::Survival, OutcomeKind::Cause1Cif] {
            let f = itrcr::forest::fit_forest(&data, kind, &params, 2.0).unwrap();
            for t in &f.trees {
                check_node(t, &params);
            }
        }
    }

    #[test]
    fn forest_prediction_stays_in_tree_envelope(seed in any::<u64>(), z in prop::collection::vec(0.0f64..3.0, 3)) {
        let data = random_arm(seed, 90, 3);
        let params = ForestParams { n_tree: 15, seed, ..Default::default() };
        for kind in [OutcomeKind::Survival, OutcomeKind::Cause1Cif] {
            let f = itrcr::forest::fit_forest(&data, kind, &params, 2.0).unwrap();
            let pred = f.predict_curve(&z).unwrap();
            let leaves: Vec<_> = f.trees.iter().map(|t| t.route(&z)).collect();
            for t in [0.0, 0.2, 0.7, 1.3, 2.0, 2.9, 5.0] {
                let v = pred.at(t);
                let lo = leaves.iter().map(|c| c.at(t)).fold(f64::INFINITY, f64::min);
                let hi = leaves.iter().map(|c| c.at(t)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo && v <= hi, "t={}: {} outside [{}, {}]", t, v, lo, hi);
            }
        }
    }
}

fn oracle(kind: ScenarioKind) -> TruthOracle {
    TruthOracle::new(Scenario {
        kind,
        p: 3,
        beta1: BTreeMap::from([
            (Treatment(0), vec![0.5, -0.3, 0.2]),
            (Treatment(1), vec![-0.4, 0.1, 0.6]),
        ]),
        beta2: BTreeMap::from([
            (Treatment(0), vec![0.1, 0.4, -0.5]),
            (Treatment(1), vec![0.3, -0.2, 0.0]),
        ]),
        beta_pi: randomized_beta_pi(3),
        mass_p: 0.35,
        censoring: CensoringSpec::default(),
        tau: 2.5,
        n: 10,
        seed: 0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn oracle_states_sum_to_one(z in prop::collection::vec(-1.5f64..1.5, 3), arm in 0u32..2) {
        for (kind, tol) in [(ScenarioKind::Exponential, 1e-9), (ScenarioKind::FineGray, 1e-6)] {
            let o = oracle(kind);
            for k in 0..50 {
                let t = 0.1 * k as f64;
                let s = o.survival(t, &z, Treatment(arm)) + o.cif1(t, &z, Treatment(arm)) + o.cif2(t, &z, Treatment(arm));
                prop_assert!((s - 1.0).abs() <= tol, "{:?} t={}: {}", kind, t, s);
            }
        }
    }

    #[test]
    fn oracle_criteria_match_quadrature(z in prop::collection::vec(-1.5f64..1.5, 3), arm in 0u32..2) {
        let o = oracle(ScenarioKind::Exponential);
        let (a, b) = (o.phi(&z, Treatment(arm)), o.phi_quadrature(&z, Treatment(arm)));
        prop_assert!((a.0 - b.0).abs() <= 1e-8 && (a.1 - b.1).abs() <= 1e-8);
    }
}
