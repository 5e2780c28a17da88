//! Property-based invariants across modules.

mod common;

use fedledger::data::{
    self, imbalance_stats, knn_minority, smote_with_provenance, PartitionMode, PartitionPlan, SmoteConfig,
};
use fedledger::ledger::{
    decode_model, encode_model, export_chain, import_chain, validate_chain, Chain, ContentStore, Digest256,
};
use fedledger::model::{self, TrainConfig};
use fedledger::seed;
use fedledger::selection::{select_by_contribution, select_random, PolicyKind, SelectionPolicy};
use fedledger::valuation::{exact_shapley, CoalitionGame, TableGame};
use fedledger::{Dataset, ModelParams, OrgId};
use proptest::prelude::*;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

fn dataset(seed: u64, n: usize, width: usize, positives: usize) -> Dataset {
    let mut rng = seed::rng(seed);
    let rows = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let labels = (0..n).map(|i| u8::from(i < positives)).collect();
    Dataset::from_rows(rows, labels).unwrap()
}

/// Multiset of rows, for comparing partitions against their source.
fn fingerprint(d: &Dataset) -> Vec<(Vec<u64>, u8)> {
    let mut v: Vec<_> = d
        .iter()
        .map(|e| (e.features.iter().map(|x| x.to_bits()).collect(), e.label))
        .collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_finite_differences(
        seed in any::<u64>(),
        hidden in prop::option::of(1usize..6),
        n in 1usize..12,
        wd in 0.0f64..0.01,
    ) {
        let mut rng = seed::rng(seed);
        let batch = common::random_dataset(&mut rng, n, 4);
        let dims = match hidden { Some(h) => vec![4, h, 1], None => vec![4, 1] };
        let mut params = ModelParams::init_uniform(dims, seed).unwrap();
        for w in params.weights_mut() {
            *w += rng.gen_range(-0.5..0.5);
        }
        let err = common::gradient_check(&params, &batch, wd);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn split_is_a_stratified_partition(seed in any::<u64>(), n in 10usize..120, frac in 0.1f64..0.9) {
        let positives = 2 + (seed % 6) as usize;
        let d = dataset(seed, n, 3, positives.min(n - 2));
        let (train, test) = data::split(&d, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), d.len());
        let mut both = fingerprint(&train);
        both.extend(fingerprint(&test));
        both.sort();
        prop_assert_eq!(both, fingerprint(&d));
        for part in [&train, &test] {
            let s = imbalance_stats(part);
            prop_assert!(s.minority_count >= 1 && s.minority_count < s.total);
        }
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint(
        seed in any::<u64>(),
        n in 20usize..150,
        orgs in 1usize..12,
        skewed in any::<bool>(),
        skew in 0.0f64..=1.0,
    ) {
        let d = dataset(seed, n, 2, n / 5);
        let plan = PartitionPlan {
            num_orgs: orgs,
            mode: if skewed { PartitionMode::LabelSkew } else { PartitionMode::Iid },
            skew,
            seed,
        };
        let shards = data::partition(&d, &plan).unwrap();
        prop_assert_eq!(shards.len(), orgs);
        let mut all = Vec::new();
        for s in &shards {
            all.extend(fingerprint(s));
        }
        all.sort();
        prop_assert_eq!(all, fingerprint(&d));
        if !skewed {
            let sizes: Vec<usize> = shards.iter().map(Dataset::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn smote_points_lie_on_neighbour_segments(
        seed in any::<u64>(),
        majority in 10usize..80,
        minority in 3usize..10,
        k in 1usize..3,
        target in 0.2f64..=1.0,
    ) {
        let d = dataset(seed, majority + minority, 3, minority);
        let out = smote_with_provenance(&d, &SmoteConfig { k, target_ratio: target, seed }).unwrap();
        let after = imbalance_stats(&out.dataset);
        let wanted = (target * majority as f64).ceil() as usize;
        prop_assert_eq!(after.minority_count, wanted.max(minority));
        prop_assert_eq!(&out.dataset.examples()[..d.len()], d.examples());
        for (syn, e) in out.provenance.iter().zip(&out.dataset.examples()[d.len()..]) {
            prop_assert!(knn_minority(&d, syn.parent, k).unwrap().contains(&syn.neighbor));
            prop_assert!((0.0..=1.0).contains(&syn.gap));
            let a = &d.examples()[syn.parent].features;
            let b = &d.examples()[syn.neighbor].features;
            for j in 0..a.len() {
                let expect = a[j] + (b[j] - a[j]) * syn.gap;
                prop_assert!((e.features[j] - expect).abs() < 1e-12);
            }
            prop_assert_eq!(e.label, 1);
        }
    }

    #[test]
    fn random_selection_returns_k_distinct_members(seed in any::<u64>(), n in 1u32..40, k_frac in 0.0f64..1.0) {
        let orgs: Vec<OrgId> = (0..n).map(OrgId).collect();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let picked = select_random(&orgs, k, seed).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.iter().all(|o| o.0 < n));
        prop_assert_eq!(picked, select_random(&orgs, k, seed).unwrap());
    }

    #[test]
    fn contribution_selection_is_scale_invariant(
        scores in prop::collection::vec(-5.0f64..5.0, 2..20),
        scale in 0.01f64..100.0,
        round in 0u64..50,
        k_frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let policy = SelectionPolicy { kind: PolicyKind::Contribution, k, exploration_period: 4, seed: 9 };
        let base: BTreeMap<OrgId, f64> = scores.iter().enumerate().map(|(i, &s)| (OrgId(i as u32), s)).collect();
        let scaled: BTreeMap<OrgId, f64> = base.iter().map(|(&o, &s)| (o, s * scale)).collect();
        let a = select_by_contribution(&base, k, round, &policy).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(&a, &select_by_contribution(&scaled, k, round, &policy).unwrap());
        if round % 4 != 0 {
            let cutoff = a.iter().map(|o| base[o]).fold(f64::INFINITY, f64::min);
            prop_assert!(base.iter().filter(|(o, _)| !a.contains(o)).all(|(_, &s)| s <= cutoff));
        }
    }

    #[test]
    fn shapley_is_efficient_on_random_games(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = seed::rng(seed);
        let mut values: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        values[0] = 0.0;
        let g = TableGame::new((0..n as u32).map(OrgId).collect(), values).unwrap();
        let s = exact_shapley(&g).unwrap();
        prop_assert!((s.total() - g.value(g.grand_mask())).abs() < 1e-9);
    }

    #[test]
    fn any_single_byte_tamper_is_located(
        height in 0usize..10,
        field in 0usize..common::FIELDS.len(),
        item in 0usize..3,
        byte in 0usize..32,
        mask in 1u8..=255,
    ) {
        let mut blocks = common::ten_block_chain().blocks().to_vec();
        prop_assert!(validate_chain(&blocks).is_ok());
        common::tamper(&mut blocks[height], field, item, byte, mask);
        let fault = validate_chain(&blocks).unwrap_err();
        prop_assert_eq!(fault.height, height as u64, "{}", common::FIELDS[field].0);
    }

    #[test]
    fn store_is_content_addressed(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..256), 1..20)) {
        let store = ContentStore::new();
        let digests: Vec<Digest256> = payloads.iter().map(|p| store.put(p)).collect();
        let distinct: BTreeSet<&Vec<u8>> = payloads.iter().collect();
        prop_assert_eq!(store.len(), distinct.len());
        for (p, d) in payloads.iter().zip(&digests) {
            prop_assert_eq!(*d, Digest256::of(p));
            prop_assert_eq!(&store.get(d).unwrap(), p);
        }
    }

    #[test]
    fn model_encoding_round_trips(seed in any::<u64>(), hidden in prop::collection::vec(1usize..5, 0..3)) {
        let mut dims = vec![3];
        dims.extend(hidden);
        dims.push(1);
        let m = ModelParams::init_uniform(dims, seed).unwrap();
        let back = decode_model(&encode_model(&m)).unwrap();
        prop_assert_eq!(back.layer_dims(), m.layer_dims());
        prop_assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn local_training_is_deterministic(seed in any::<u64>()) {
        let d = dataset(seed, 30, 3, 8);
        let m = ModelParams::init_uniform(vec![3, 2, 1], seed).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 7, seed, ..TrainConfig::default() };
        let a = model::local_train(&m, &d, &cfg).unwrap();
        let b = model::local_train(&m, &d, &cfg).unwrap();
        prop_assert_eq!(a.weights(), b.weights());
        prop_assert!(a.is_finite());
    }

    #[test]
    fn exported_chain_survives_import(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..8)) {
        let mut chain = Chain::new();
        for (i, &v) in values.iter().enumerate() {
            let contributions = BTreeMap::from([(OrgId(i as u32), v), (OrgId(99), v / 3.0)]);
            chain.push(Vec::new(), Digest256::of(&[i as u8]), BTreeMap::new(), contributions).unwrap();
        }
        let mut bytes = Vec::new();
        export_chain(chain.blocks(), &mut bytes).unwrap();
        let back = import_chain(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.as_slice(), chain.blocks());
        prop_assert!(validate_chain(&back).is_ok());
    }
}
