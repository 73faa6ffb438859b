use cfloss_core::data::{gini_index, kcore_filter, sample_negatives};
use cfloss_core::eval::{ndcg_at_n, recall_at_n};
use cfloss_core::losses::{evaluate, LossConfig, LossKind};
use cfloss_core::optim::init_params;
use cfloss_core::{Batch, Embeddings, Interaction, InteractionDataset, ModelState, NegativeMode};
use proptest::prelude::*;

fn dataset(edges: &[(usize, usize)], nu: usize, ni: usize) -> InteractionDataset {
    let its = edges
        .iter()
        .enumerate()
        .map(|(t, &(user, item))| Interaction { user, item, timestamp: t as i64 })
        .collect();
    InteractionDataset::from_interactions(nu, ni, its).unwrap()
}

fn degrees(ds: &InteractionDataset) -> (Vec<usize>, Vec<usize>) {
    let mut u = vec![0; ds.num_users];
    let mut i = vec![0; ds.num_items];
    for it in &ds.interactions {
        u[it.user] += 1;
        i[it.item] += 1;
    }
    (u, i)
}

prop_compose! {
    fn edges(nu: usize, ni: usize)(raw in prop::collection::btree_set((0..nu, 0..ni), 1..120)) -> Vec<(usize, usize)> {
        raw.into_iter().collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gini_scale_and_permutation_invariant(counts in prop::collection::vec(0.0f64..100.0, 2..40), c in 0.01f64..1000.0) {
        prop_assume!(counts.iter().sum::<f64>() > 1e-6);
        let g = gini_index(&counts).unwrap();
        let scaled: Vec<f64> = counts.iter().map(|x| x * c).collect();
        prop_assert!((gini_index(&scaled).unwrap() - g).abs() <= 1e-12);
        let mut rev = counts.clone();
        rev.reverse();
        prop_assert!((gini_index(&rev).unwrap() - g).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&g));
    }

    #[test]
    fn kcore_is_a_fixed_point(e in edges(12, 15), k in 1usize..5) {
        let ds = dataset(&e, 12, 15);
        let once = kcore_filter(&ds, k);
        let (du, di) = degrees(&once);
        prop_assert!(du.iter().chain(&di).all(|&d| d >= k));
        let twice = kcore_filter(&once, k);
        prop_assert_eq!(&twice.interactions, &once.interactions);
        prop_assert_eq!(twice.num_users, once.num_users);
    }

    #[test]
    fn uniform_negatives_avoid_the_positive(
        pairs in prop::collection::vec((0usize..20, 0usize..9), 1..30),
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let b = sample_negatives(9, &pairs, n, NegativeMode::Uniform, seed).unwrap();
        for (p, negs) in b.pairs.iter().zip(&b.negatives) {
            prop_assert_eq!(negs.len(), n);
            prop_assert!(negs.iter().all(|&j| j != p.1 && j < 9));
        }
    }

    #[test]
    fn in_batch_negatives_are_other_positives(
        pairs in prop::collection::vec((0usize..20, 0usize..9), 1..30),
        seed in any::<u64>(),
    ) {
        let b = sample_negatives(9, &pairs, 0, NegativeMode::InBatch, seed).unwrap();
        for (p, negs) in b.pairs.iter().zip(&b.negatives) {
            prop_assert!(negs.iter().all(|&j| j != p.1 && pairs.iter().any(|q| q.1 == j)));
        }
    }

    #[test]
    fn metrics_lie_in_unit_interval(
        ranked in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
        relevant in prop::collection::btree_set(0usize..30, 1..10),
        n in 1usize..30,
    ) {
        let relevant: Vec<usize> = relevant.into_iter().collect();
        let r = recall_at_n(&ranked, &relevant, n).unwrap();
        let d = ndcg_at_n(&ranked, &relevant, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        let ideal: Vec<usize> = relevant.iter().copied().chain((0..30).filter(|i| !relevant.contains(i))).collect();
        prop_assert!((ndcg_at_n(&ideal, &relevant, n).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn directau_is_affine_in_gamma(seed in any::<u64>(), g in 0.0f64..5.0) {
        let mut s = ModelState::new(6, 7, 5, vec![1; 6], vec![1; 7]);
        init_params(&mut s, seed);
        let emb = Embeddings::borrowed(&s.user_emb, &s.item_emb);
        let b = Batch::positives_only(vec![(0, 1), (1, 2), (2, 2), (3, 6), (5, 0)]);
        let at = |gamma: f64| {
            let cfg = LossConfig { gamma, ..LossConfig::new(LossKind::DirectAu) };
            evaluate(&cfg, &s, &emb, &b).unwrap().value
        };
        let (l0, l1) = (at(0.0), at(1.0));
        prop_assert!((at(g) - (l0 + g * (l1 - l0))).abs() <= 1e-12);
    }
}
