use proptest::prelude::*;

use shipgrid::attack::{self, AttackKind, AttackSpec, Channel, Polarity};
use shipgrid::control::{control_input, AgentState};
use shipgrid::detector::{classify, Activation, Decision, Network};
use shipgrid::linalg::{inf_norm, l2_norm};
use shipgrid::metrics::compute_metrics;
use shipgrid::plant::{droop_current, PlantParams};
use shipgrid::run::TimeSeries;
use shipgrid::CommGraph;

/// Weakly connected weight matrices: a chain backbone plus random extras.
fn graph() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=7).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(0.1f64..4.0, n - 1),
            prop::collection::vec(prop::option::weighted(0.3, 0.1f64..4.0), n * n),
        )
            .prop_map(|(n, chain, extra)| {
                let mut w = vec![vec![0.0; n]; n];
                for (k, a) in chain.into_iter().enumerate() {
                    w[k + 1][k] = a;
                }
                for (idx, a) in extra.into_iter().enumerate() {
                    let (i, j) = (idx / n, idx % n);
                    if let (Some(a), true) = (a, i != j) {
                        w[i][j] = a;
                    }
                }
                w
            })
    })
}

fn symmetric(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = w.len();
    (0..n)
        .map(|i| (0..n).map(|j| w[i][j].max(w[j][i])).collect())
        .collect()
}

proptest! {
    #[test]
    fn laplacian_annihilates_consensus(w in graph(), c in -1e4f64..1e4) {
        let g = CommGraph::build(&w).unwrap();
        let lx = g.laplacian_apply(&vec![c; w.len()]);
        prop_assert!(inf_norm(&lx) <= 1e-9 * c.abs().max(1.0));
    }

    #[test]
    fn symmetric_graphs_are_balanced_with_zero_column_sums(w in graph()) {
        let g = CommGraph::build(&symmetric(&w)).unwrap();
        prop_assert!(g.is_balanced());
        let l = g.laplacian();
        for j in 0..w.len() {
            let col: f64 = (0..w.len()).map(|i| l[(i, j)]).sum();
            prop_assert!(col.abs() < 1e-9);
        }
    }

    #[test]
    fn control_input_is_negated_laplacian(
        w in graph(),
        v in prop::collection::vec(11_000f64..13_000.0, 7),
        i in prop::collection::vec(0.0f64..1.2, 7),
    ) {
        let g = CommGraph::build(&w).unwrap();
        let n = w.len();
        let states: Vec<AgentState> = (0..n).map(|k| AgentState::new(v[k], i[k])).collect();
        let lv = g.laplacian_apply(&v[..n]);
        let li = g.laplacian_apply(&i[..n]);
        for k in 0..n {
            let (uv, ui) = control_input(k, &states, &g).unwrap();
            prop_assert!((uv + lv[k]).abs() < 1e-8);
            prop_assert!((ui + li[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn access_matrix_rows_and_null_space(w in graph()) {
        let g = CommGraph::build(&w).unwrap();
        let acc = attack::access_matrix(&g);
        let m = acc.matrix();
        let n = w.len();
        for k in 0..n {
            let off: f64 = (0..n).filter(|&j| j != k).map(|j| m[(k, j)]).sum();
            prop_assert_eq!(m[(k, k)], 1.0 + off);
        }
        let basis = attack::stealth_basis(&acc);
        for (a, u) in basis.iter().enumerate() {
            prop_assert!(inf_norm(&acc.apply(u)) < 1e-12);
            prop_assert!((l2_norm(u) - 1.0).abs() < 1e-12);
            for v in &basis[a + 1..] {
                let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                prop_assert!(dot.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drift_never_reaches_threshold(
        ramp in 0.0f64..1e5,
        threshold in 1e-3f64..1e3,
        t in 0.0f64..100.0,
        negative in any::<bool>(),
    ) {
        let g = CommGraph::dual_zone();
        let w = attack::access_matrix(&g);
        let mut spec = AttackSpec::new(AttackKind::Drift, Channel::Voltage, 1.0, 50.0, threshold);
        spec.target_agents = vec![0];
        spec.ramp_rate = ramp;
        spec.polarity = if negative { Polarity::Negative } else { Polarity::Positive };
        let inj = attack::injection(t, &spec, &w).unwrap();
        prop_assert!(inj.voltage[0].abs() < threshold);
        prop_assert!(attack::is_stealthy(&inj.voltage, &spec, &w).unwrap());
    }

    #[test]
    fn over_threshold_samples_are_never_stealthy(threshold in 1e-3f64..1e3, factor in 1.0f64..10.0) {
        let w = attack::access_matrix(&CommGraph::dual_zone());
        let spec = AttackSpec::new(AttackKind::Drift, Channel::Voltage, 0.0, 1.0, threshold);
        prop_assert!(!attack::is_stealthy(&[0.0, threshold * factor], &spec, &w).unwrap());
    }

    #[test]
    fn classification_is_a_closed_ball(x in -1e4f64..1e4, p in -1e4f64..1e4, rho in 0.0f64..1e3) {
        let inside = (x - p).abs() <= rho;
        prop_assert_eq!(classify(x, p, rho) == Decision::Normal, inside);
    }

    #[test]
    fn droop_current_is_non_negative(v_ref in 0.0f64..2e4, v_bus in 0.0f64..2e4) {
        prop_assert!(droop_current(v_ref, v_bus, &PlantParams::dual_zone()) >= 0.0);
    }

    #[test]
    fn metrics_partition_every_sample(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let n = pairs.len();
        let ts = TimeSeries::from_columns(
            vec!["t".into(), "attack_active".into(), "det_i_pu_1_flag".into()],
            vec![
                (0..n).map(|i| i as f64).collect(),
                pairs.iter().map(|p| f64::from(u8::from(p.0))).collect(),
                pairs.iter().map(|p| f64::from(u8::from(p.1))).collect(),
            ],
        );
        let m = compute_metrics(&ts).unwrap();
        let total = m.true_positive_samples + m.false_positive_samples
            + m.true_negative_samples + m.false_negative_samples;
        prop_assert_eq!(total, n);
        prop_assert_eq!(m.true_positive_samples + m.false_negative_samples, pairs.iter().filter(|p| p.0).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_steps_do_not_increase_the_loss(
        seed in any::<u64>(),
        xs in prop::collection::vec(-2.0f64..2.0, 4 * 10),
        ts in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let mut net = Network::random(5, [6, 4], Activation::Tanh, seed);
        let mut p = net.params();
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let (loss, grad) = net.loss_and_gradient(&xs, &ts);
            prop_assert!(loss <= last + 1e-12, "{loss} > {last}");
            last = loss;
            p.iter_mut().zip(&grad).for_each(|(w, g)| *w -= 1e-3 * g);
            net.set_params(&p);
        }
    }
}
