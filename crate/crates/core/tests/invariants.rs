//! Property tests over randomly generated networks.

mod common;

use std::collections::BTreeSet;

use mga_opf::ac::{ac_residuals, max_residual, newton_power_flow, FlowModel, RecoveryConfig};
use mga_opf::baseline::{greedy_switch_search, BaselineError, DEFAULT_GREEDY_TOL};
use mga_opf::formulations::{auto_big_m, build_dc_opf, build_dc_ots, FormulationConfig};
use mga_opf::mga::{run_mga, Criterion, IterationOutcome, MgaConfig, MgaStatus};
use mga_opf::milp::{solve_milp, MilpConfig, MilpStatus};
use mga_opf::network::island_labels;
use mga_opf::Network;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{is_connected, random_network};

fn net_from(seed: u64) -> Network {
    random_network(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn component_count(net: &Network) -> usize {
    let mut label: Vec<usize> = (0..net.n_buses()).collect();
    // Relax labels to the component minimum.
    loop {
        let mut changed = false;
        for br in net.branches() {
            let (o, d) = (net.bus_position(br.origin).unwrap(), net.bus_position(br.dest).unwrap());
            let m = label[o].min(label[d]);
            if label[o] != m || label[d] != m {
                label[o] = m;
                label[d] = m;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    label.into_iter().collect::<BTreeSet<_>>().len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn island_labels_count_components(seed in any::<u64>()) {
        let net = net_from(seed);
        let labels = island_labels(&net, &vec![1; net.n_branches()]).unwrap();
        prop_assert_eq!(labels.iter().collect::<BTreeSet<_>>().len(), component_count(&net));
    }

    #[test]
    fn milp_respects_root_bound_and_repeats(seed in any::<u64>()) {
        let net = net_from(seed);
        let problem = build_dc_ots(&net, &FormulationConfig::default()).unwrap();
        let a = solve_milp(&problem.model, &MilpConfig::default());
        let b = solve_milp(&problem.model, &MilpConfig::default());
        prop_assert_eq!(a.status, b.status);
        if a.status == MilpStatus::Optimal {
            prop_assert!(a.objective >= a.root_bound - 1e-7);
            prop_assert_eq!(a.binary_vector(&problem.model), b.binary_vector(&problem.model));
            let (balance, flow) = problem.extract(&net, &a).invariant_violations(&net);
            prop_assert!(balance <= 1e-6 && flow <= 1e-6, "balance {} flow {}", balance, flow);
        }
    }

    #[test]
    fn all_on_ots_equals_opf(seed in any::<u64>()) {
        let net = net_from(seed);
        let mut ots = build_dc_ots(&net, &FormulationConfig::default()).unwrap();
        for &j in &ots.model.binary_vars {
            ots.model.lp.var_lower[j] = 1.0;
        }
        let opf = build_dc_opf(&net).unwrap();
        let a = solve_milp(&ots.model, &MilpConfig::default());
        let b = solve_milp(&opf.model, &MilpConfig::default());
        prop_assert_eq!(a.status, b.status);
        if a.status == MilpStatus::Optimal {
            prop_assert!((a.objective - b.objective).abs() <= 1e-7, "{} vs {}", a.objective, b.objective);
        }
    }

    #[test]
    fn auto_big_m_dominates_flow_and_angle_span(p_max in 1e-3..1e3f64, b in -1e3..1e3f64, theta in 1e-3..1.5f64) {
        let m = auto_big_m(p_max, b, theta);
        prop_assert!(m >= p_max);
        prop_assert!(m >= b.abs() * 2.0 * theta);
    }

    #[test]
    fn mga_alternatives_are_distinct_and_near_optimal(seed in any::<u64>(), delta_f in 0.0..30.0f64, c in 0usize..4) {
        let net = net_from(seed);
        let problem = build_dc_ots(&net, &FormulationConfig::default()).unwrap();
        let base = solve_milp(&problem.model, &MilpConfig::default());
        prop_assume!(base.status == MilpStatus::Optimal);
        let cfg = MgaConfig { delta_f, max_iter: 8, seed, ..MgaConfig::new(Criterion::ALL[c]) };
        let run = run_mga(&net, &problem, &base, &cfg, &MilpConfig::default()).unwrap();
        let f_star = run.alternatives[0].dc_objective;
        let distinct: BTreeSet<&Vec<u8>> = run.alternatives.iter().map(|a| &a.x).collect();
        prop_assert_eq!(distinct.len(), run.alternatives.len());
        for a in &run.alternatives {
            prop_assert!(a.dc_objective <= f_star + delta_f + 1e-6);
        }
        let solves = run.iterations.len() - 1;
        prop_assert!(solves <= cfg.max_iter);
        if run.status == MgaStatus::Converged {
            prop_assert_eq!(run.iterations.last().unwrap().outcome, IterationOutcome::Duplicate);
        }
    }

    #[test]
    fn newton_residuals_at_convergence(seed in any::<u64>()) {
        let net = net_from(seed);
        let all_on = vec![1; net.n_branches()];
        prop_assume!(is_connected(&net, &all_on));
        let opf = build_dc_opf(&net).unwrap();
        let sol = solve_milp(&opf.model, &MilpConfig::default());
        prop_assume!(sol.status == MilpStatus::Optimal);
        let dc = opf.extract(&net, &sol);
        let slack = net.device_bus(0);
        let q = vec![0.0; net.n_devices()];
        let pf = newton_power_flow(&net, &all_on, dc.p_g(), &q, slack, FlowModel::PiModel).unwrap();
        if pf.converged {
            let r = max_residual(&ac_residuals(&net, &pf.state, &all_on, FlowModel::PiModel).unwrap());
            prop_assert!(r <= 1e-8, "residual {}", r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn greedy_costs_fall_and_counts_add_up(seed in any::<u64>()) {
        let net = net_from(seed);
        let all_on = vec![1; net.n_branches()];
        prop_assume!(is_connected(&net, &all_on));
        match greedy_switch_search(&net, &all_on, DEFAULT_GREEDY_TOL, &RecoveryConfig::default()) {
            Ok(t) => {
                prop_assert!(t.steps.windows(2).all(|w| w[1].ac_cost <= w[0].ac_cost));
                prop_assert_eq!(t.ac_evals, t.evaluations_per_iteration.iter().sum::<usize>());
                let switchable = net.branches().iter().filter(|b| b.switchable).count();
                prop_assert!(t.ac_evals <= switchable * t.steps.len());
            }
            Err(BaselineError::InfeasibleSeed(_)) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }
}
