use layoutdiff::doc::Document;
use layoutdiff::encoder::build_graph;
use layoutdiff::matcher::{match_documents, match_graphs, MatchForward, MatchMode, MatchOptions};
use layoutdiff::nn::{HyperParams, Model};
use layoutdiff::synth::{gen_document, mutate_document, MutationConfig, Profile};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn profile(seed: u64) -> Profile {
    if seed.is_multiple_of(2) {
        Profile::Legal
    } else {
        Profile::Article
    }
}

fn pair(seed: u64, intensity: f64) -> (Document, Document) {
    let doc = gen_document(seed, profile(seed));
    let (mutated, _) = mutate_document(&doc, &MutationConfig::from_intensity(intensity, true, seed));
    (doc, mutated)
}

/// Sinkhorn reaches its fixed point within 50 passes at this temperature.
fn converged_options(model: &Model) -> MatchOptions {
    MatchOptions {
        tau: 1.0,
        ..MatchOptions::from_model(model)
    }
}

fn shuffled(doc: &Document, seed: u64) -> Document {
    let mut out = doc.clone();
    out.blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

fn ids(doc: &Document) -> Vec<&str> {
    doc.blocks.iter().map(|b| b.id.as_str()).collect()
}

fn max_blocks_per_page(doc: &Document) -> usize {
    (0..doc.pages.len())
        .map(|p| doc.blocks.iter().filter(|b| b.page == p).count())
        .max()
        .unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn swapping_graphs_transposes(doc_seed in 0u64..1000, model_seed in 0u64..1000) {
        let model = Model::new(HyperParams::default(), model_seed);
        let (a, b) = pair(doc_seed, 0.2);
        let (g1, g2) = (build_graph(&a, true), build_graph(&b, true));
        let opts = converged_options(&model);
        let forward = match_graphs(&g1, &g2, &model, &opts).unwrap();
        let backward = match_graphs(&g2, &g1, &model, &opts).unwrap();
        prop_assert!(forward.transpose().matrix().max_abs_diff(backward.matrix()) < 1e-9);
    }

    #[test]
    fn every_iteration_is_feasible(doc_seed in 0u64..1000, model_seed in 0u64..1000, k in 1usize..4) {
        let model = Model::new(HyperParams::default(), model_seed);
        let (a, b) = pair(doc_seed, 0.3);
        let opts = MatchOptions { iterations: k, ..converged_options(&model) };
        let fwd = MatchForward::new(&build_graph(&a, true), &build_graph(&b, true), &model, &opts).unwrap();
        let outputs = fwd.iteration_outputs();
        prop_assert_eq!(outputs.len(), k);
        for s in outputs {
            prop_assert!(s.feasibility_error() < 1e-6);
            prop_assert!(s.matrix().data().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn block_order_does_not_change_the_match_set(doc_seed in 0u64..1000, perm_seed in 0u64..1000, many in any::<bool>()) {
        let (a, b) = pair(doc_seed, 0.2);
        prop_assume!(max_blocks_per_page(&a) <= 25 && max_blocks_per_page(&b) <= 25);
        let model = Model::new(HyperParams::default(), 5);
        let mode = if many { MatchMode::ManyToMany } else { MatchMode::OneToOne };
        let opts = MatchOptions::from_model(&model).with_mode(mode);
        let base = match_documents(&a, &b, &model, &opts).unwrap();
        let permuted = match_documents(&shuffled(&a, perm_seed), &shuffled(&b, perm_seed + 1), &model, &opts).unwrap();
        prop_assert_eq!(base.pairs.iter().map(|p| (&p.source, &p.target)).collect::<Vec<_>>(),
            permuted.pairs.iter().map(|p| (&p.source, &p.target)).collect::<Vec<_>>());
        prop_assert_eq!(&base.deleted, &permuted.deleted);
        prop_assert_eq!(&base.inserted, &permuted.inserted);
        prop_assert_eq!(base.splits.len(), permuted.splits.len());
        prop_assert_eq!(base.merges.len(), permuted.merges.len());
    }

    #[test]
    fn match_sets_partition_both_documents(doc_seed in 0u64..1000, intensity in 0.0f64..0.5, many in any::<bool>()) {
        let (a, b) = pair(doc_seed, intensity);
        let model = Model::new(HyperParams::default(), 9);
        let mode = if many { MatchMode::ManyToMany } else { MatchMode::OneToOne };
        let set = match_documents(&a, &b, &model, &MatchOptions::from_model(&model).with_mode(mode)).unwrap();
        prop_assert!(set.check_partition(&ids(&a), &ids(&b)).is_ok());
        prop_assert!(set.pairs.iter().all(|p| (0.0..=1.0).contains(&p.score)));
    }
}

#[test]
fn matching_is_deterministic() {
    let model = Model::new(HyperParams::default(), 2);
    let (a, b) = pair(42, 0.2);
    let opts = MatchOptions::from_model(&model).with_mode(MatchMode::ManyToMany);
    let first = serde_json::to_vec(&match_documents(&a, &b, &model, &opts).unwrap()).unwrap();
    let second = serde_json::to_vec(&match_documents(&a, &b, &model, &opts).unwrap()).unwrap();
    assert_eq!(first, second);
}
