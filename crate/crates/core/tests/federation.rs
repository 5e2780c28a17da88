//! End-to-end behaviour of the round orchestrator.

use fedledger::data::synthetic::{generate, SyntheticSpec};
use fedledger::data::Dataset;
use fedledger::federation::{init_round0, FederationConfig, FederationError, OrgBehavior, ValuationMode};
use fedledger::ledger::{decode_model, encode_model, TX_RECORD_SIZE};
use fedledger::model::{self, TrainConfig};
use fedledger::selection::PolicyKind;
use fedledger::valuation::{CoalitionGame, UtilityGame};
use fedledger::{ModelParams, OrgId};
use std::collections::BTreeMap;

fn toy_data(seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        n: 600,
        width: 8,
        minority_fraction: 0.1,
        separation: 5.0,
        seed,
    })
    .unwrap()
}

fn toy_config(kind: PolicyKind) -> FederationConfig {
    let mut cfg = FederationConfig {
        num_orgs: 4,
        rounds: 3,
        hidden_layers: vec![4],
        ..FederationConfig::default()
    };
    cfg.policy.kind = kind;
    cfg.policy.k = 2;
    cfg.policy.exploration_period = 2;
    cfg.train = TrainConfig {
        learning_rate: 0.1,
        epochs: 2,
        ..TrainConfig::default()
    };
    cfg
}

fn reports_json(r: &fedledger::federation::RunResult) -> String {
    serde_json::to_string(r).unwrap()
}

#[test]
fn single_organization_equals_plain_local_sgd() {
    let data = toy_data(1);
    let mut cfg = toy_config(PolicyKind::Random);
    cfg.num_orgs = 1;
    cfg.policy.k = 1;
    cfg.validators.accuracy_floor = 0.0;
    let mut state = init_round0(&cfg, &data).unwrap();
    let mut expected = state.global().clone();
    for t in 0..cfg.rounds as u64 {
        expected = model::local_train(
            &expected,
            &state.shards()[0],
            &state.local_train_config(t, OrgId(0)),
        )
        .unwrap();
        state.run_round(t).unwrap();
        assert_eq!(state.global().weights(), expected.weights(), "round {t}");
    }
}

#[test]
fn identical_runs_are_identical_at_any_thread_count() {
    let data = toy_data(2);
    for kind in [PolicyKind::Random, PolicyKind::Greedy, PolicyKind::Contribution] {
        let cfg = toy_config(kind);
        let a = fedledger::federation::run(&cfg, &data).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fedledger::federation::run(&cfg, &data)).unwrap();
        assert_eq!(reports_json(&a), reports_json(&b), "{kind}");
        assert_eq!(a.final_model_digest, b.final_model_digest);
    }
}

#[test]
fn final_digest_resolves_and_reproduces_metrics() {
    let data = toy_data(3);
    let cfg = toy_config(PolicyKind::Contribution);
    let mut state = init_round0(&cfg, &data).unwrap();
    let result = state.run().unwrap();
    let payload = state.store().get(&result.final_model_digest).unwrap();
    let m = decode_model(&payload).unwrap();
    let metrics = model::evaluate(&m, state.server_test(), 0.5).unwrap();
    assert_eq!(metrics, result.last().unwrap().global_metrics);
    assert_eq!(
        state.chain().tip().unwrap().global_model_digest,
        result.final_model_digest
    );
}

#[test]
fn ledger_records_every_round_and_validates() {
    let data = toy_data(4);
    let cfg = toy_config(PolicyKind::Contribution);
    let mut state = init_round0(&cfg, &data).unwrap();
    let result = state.run().unwrap();
    let blocks = state.chain().blocks();
    assert_eq!(blocks.len(), cfg.rounds + 1, "genesis plus one block per round");
    state.chain().validate().unwrap();
    let payload = encode_model(state.global()).len() as u64;
    for (report, block) in result.reports.iter().zip(&blocks[1..]) {
        assert_eq!(block.height, report.round + 1);
        assert_eq!(block.global_model_digest, report.global_digest);
        assert_eq!(block.txs.len(), report.trained);
        assert_eq!(
            report.bytes_on_chain,
            ((report.trained + 1) * TX_RECORD_SIZE) as u64
        );
        assert_eq!(report.bytes_off_chain, report.trained as u64 * payload);
        for tx in &block.txs {
            assert!(state.store().contains(&tx.model_digest));
            assert_eq!(tx.round, report.round);
        }
        let values = report
            .shapley
            .as_ref()
            .map(|s| s.values.clone())
            .unwrap_or_default();
        assert_eq!(block.contributions, values);
    }
}

#[test]
fn contributions_accumulate_round_values() {
    let data = toy_data(5);
    let cfg = toy_config(PolicyKind::Contribution);
    let mut state = init_round0(&cfg, &data).unwrap();
    let result = state.run().unwrap();
    let mut sum: BTreeMap<OrgId, f64> = BTreeMap::new();
    for r in &result.reports {
        for (&o, &v) in &r.shapley.as_ref().unwrap().values {
            *sum.entry(o).or_insert(0.0) += v;
        }
    }
    assert_eq!(sum, result.contributions);
    assert_eq!(state.history().len(), cfg.rounds);
}

#[test]
fn round_values_are_efficient() {
    let data = toy_data(6);
    let cfg = toy_config(PolicyKind::Random);
    let mut state = init_round0(&cfg, &data).unwrap();
    let prior = state.global().clone();
    let report = state.run_round(0).unwrap();
    let shapley = report.shapley.unwrap();
    // Rebuild the round's game from the submitted payloads.
    let block = state.chain().tip().unwrap().clone();
    let subs: BTreeMap<OrgId, ModelParams> = block
        .txs
        .iter()
        .filter(|tx| shapley.values.contains_key(&tx.org_id))
        .map(|tx| {
            let m = decode_model(&state.store().get(&tx.model_digest).unwrap()).unwrap();
            (tx.org_id, m)
        })
        .collect();
    let game = UtilityGame::new(0, prior, subs, state.server_test().clone()).unwrap();
    let grand = game.value(game.grand_mask());
    assert!(
        (shapley.total() - grand).abs() < 1e-9,
        "{} vs {grand}",
        shapley.total()
    );
}

#[test]
fn nan_update_is_rejected_and_not_valued() {
    let data = toy_data(7);
    let mut cfg = toy_config(PolicyKind::Random);
    cfg.policy.k = cfg.num_orgs;
    let mut state = init_round0(&cfg, &data).unwrap();
    state.set_behavior(OrgId(1), OrgBehavior::NanWeights);
    let report = state.run_round(0).unwrap();
    assert!(report.rejected.contains(&OrgId(1)));
    assert!(!report.shapley.unwrap().values.contains_key(&OrgId(1)));
    assert!(state.global().is_finite());
}

#[test]
fn label_flipped_update_is_rejected() {
    let data = toy_data(8);
    let mut cfg = toy_config(PolicyKind::Random);
    cfg.policy.k = cfg.num_orgs;
    cfg.train.epochs = 5;
    let mut state = init_round0(&cfg, &data).unwrap();
    state.set_behavior(OrgId(2), OrgBehavior::LabelFlip);
    let report = state.run_round(0).unwrap();
    assert!(report.rejected.contains(&OrgId(2)), "{:?}", report.rejected);
    assert!(!report.rejected.contains(&OrgId(0)));
}

#[test]
fn greedy_aggregates_at_most_k() {
    let data = toy_data(9);
    let cfg = toy_config(PolicyKind::Greedy);
    let result = fedledger::federation::run(&cfg, &data).unwrap();
    for r in &result.reports {
        assert_eq!(r.trained, cfg.num_orgs, "greedy lets every organization train");
        assert!(r.selected.len() <= cfg.policy.k);
    }
}

#[test]
fn accuracy_target_stops_early() {
    let data = toy_data(10);
    let mut cfg = toy_config(PolicyKind::Random);
    cfg.accuracy_target = Some(0.0);
    cfg.rounds = 10;
    let result = fedledger::federation::run(&cfg, &data).unwrap();
    assert_eq!(result.reports.len(), 1);
    assert_eq!(result.rounds_to_threshold, Some(1));
}

#[test]
fn one_byzantine_validator_is_outvoted() {
    let data = toy_data(11);
    let cfg = toy_config(PolicyKind::Random);
    let mut state = init_round0(&cfg, &data).unwrap();
    state.set_byzantine_validator(2, true);
    let report = state.run_round(0).unwrap();
    assert_eq!(report.faulty_validators, vec![2]);
    assert!(!report.retried);
    state.chain().validate().unwrap();
}

#[test]
fn two_byzantine_validators_abort_the_run() {
    let data = toy_data(12);
    let cfg = toy_config(PolicyKind::Random);
    let mut state = init_round0(&cfg, &data).unwrap();
    state.run_round(0).unwrap();
    state.set_byzantine_validator(0, true);
    state.set_byzantine_validator(1, true);
    match state.run() {
        Err(FederationError::ConsensusAborted { round, partial }) => {
            assert_eq!(round, 1);
            assert!(partial.is_empty());
        }
        other => panic!("expected an abort, got {:?}", other.map(|r| r.reports.len())),
    }
    assert_eq!(
        state.chain().len(),
        2,
        "nothing is committed for the aborted round"
    );
}

#[test]
fn tmc_and_disabled_valuation() {
    let data = toy_data(13);
    let mut cfg = toy_config(PolicyKind::Contribution);
    cfg.valuation.mode = ValuationMode::Tmc;
    let result = fedledger::federation::run(&cfg, &data).unwrap();
    assert!(result.reports.iter().all(|r| r.shapley.is_some()));

    let mut cfg = toy_config(PolicyKind::Random);
    cfg.valuation.mode = ValuationMode::Off;
    let result = fedledger::federation::run(&cfg, &data).unwrap();
    assert!(result.reports.iter().all(|r| r.shapley.is_none()));
    assert!(result.contributions.is_empty());

    let mut cfg = toy_config(PolicyKind::Contribution);
    cfg.valuation.mode = ValuationMode::Off;
    assert!(matches!(
        fedledger::federation::run(&cfg, &data),
        Err(FederationError::Config(_))
    ));
}

#[test]
fn rounds_must_run_in_order() {
    let data = toy_data(14);
    let cfg = toy_config(PolicyKind::Random);
    let mut state = init_round0(&cfg, &data).unwrap();
    assert!(matches!(
        state.run_round(1),
        Err(FederationError::RoundMismatch {
            expected: 0,
            found: 1
        })
    ));
}

#[test]
fn single_class_data_is_refused() {
    let data = Dataset::from_rows(vec![vec![0.0]; 20], vec![0; 20]).unwrap();
    let cfg = toy_config(PolicyKind::Random);
    assert!(matches!(
        init_round0(&cfg, &data),
        Err(FederationError::Config(_))
    ));
}
