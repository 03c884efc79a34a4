//! Cross-module flows: training against exact planning oracles.

use droco_core::data::{generate_dataset, Domain, Quality};
use droco_core::eval::{evaluate, EvalMode};
use droco_core::grid::{build_pair, GridSpec};
use droco_core::mdp::{optimal_q_in_sample, policy_return, TabularPolicy};
use droco_core::operators::{greedy_in_support, SupportMask};
use droco_core::train::{train, DrocoConfig};

/// Without any dynamics shift and with the penalty off, the trained
/// policy's exact return lands within 2% of the optimal behavior-supported
/// policy computed by the planning oracle.
#[test]
fn beta_zero_no_shift_training_reaches_in_sample_optimum() {
    let mut spec = GridSpec::default_8x8();
    spec.width = 5;
    spec.height = 5;
    spec.goal_cell = 24;
    spec.slip_prob = 0.1;
    spec.gamma = 0.95;
    let (mdp_src, mdp_tar) = build_pair(&spec, &spec).unwrap();
    assert_eq!(mdp_src, mdp_tar);

    let ds_src = generate_dataset(&mdp_src, Quality::Medium, 8000, 30, Domain::Src, 1).unwrap();
    let ds_tar = generate_dataset(&mdp_tar, Quality::Medium, 8000, 30, Domain::Tar, 2).unwrap();
    let cfg = DrocoConfig {
        beta: 0.0,
        steps: 40_000,
        gamma: 0.95,
        ..DrocoConfig::default()
    };
    let state = train(&ds_src, &ds_tar, mdp_tar.r_max, &cfg).unwrap();
    let (trained_return, _) = evaluate(&state.policy, &mdp_tar, EvalMode::Exact).unwrap();

    // Oracle: exact in-sample optimum over the merged behavior support.
    let merged = ds_src.merge(&ds_tar).unwrap();
    let support_sets = SupportMask::from_dataset_or_full(&merged);
    let sets: Vec<Vec<usize>> = (0..mdp_tar.n_states)
        .map(|s| support_sets.actions(s).to_vec())
        .collect();
    let q_star = optimal_q_in_sample(&mdp_tar, &sets, 1e-10).unwrap();
    let pi_star = greedy_in_support(&q_star, &support_sets);
    let optimal_return = policy_return(&mdp_tar, &pi_star, 1e-10).unwrap();

    assert!(
        trained_return >= 0.98 * optimal_return,
        "trained {trained_return} vs in-sample optimal {optimal_return}"
    );
}

/// The merged baseline on the same no-shift instance also converges; the
/// two learners differ only through the penalty and the Huber loss.
#[test]
fn baseline_converges_on_default_pair() {
    let mut spec = GridSpec::default_8x8();
    spec.width = 5;
    spec.height = 5;
    spec.goal_cell = 24;
    spec.gamma = 0.95;
    let (mdp_src, mdp_tar) = build_pair(&spec, &spec).unwrap();
    let ds_src = generate_dataset(&mdp_src, Quality::Medium, 6000, 30, Domain::Src, 3).unwrap();
    let ds_tar = generate_dataset(&mdp_tar, Quality::Medium, 6000, 30, Domain::Tar, 4).unwrap();
    let cfg = DrocoConfig {
        steps: 30_000,
        gamma: 0.95,
        ..DrocoConfig::default()
    };
    let state =
        droco_core::train::train_baseline_merged(&ds_src, &ds_tar, mdp_tar.r_max, &cfg).unwrap();
    let (ret, _) = evaluate(&state.policy, &mdp_tar, EvalMode::Exact).unwrap();
    let random = policy_return(
        &mdp_tar,
        &TabularPolicy::uniform(mdp_tar.n_states, mdp_tar.n_actions),
        1e-10,
    )
    .unwrap();
    assert!(ret > random, "baseline {ret} vs random {random}");
}
