use layoutdiff::synth::Profile;
use layoutdiff::train::{train, CorpusSpec, TrainConfig};

#[test]
fn loss_drops_within_five_epochs() {
    let spec = CorpusSpec {
        n_pairs: 12,
        profiles: vec![Profile::Legal, Profile::Article],
        intensity: vec![0.1, 0.2],
        seed: 4,
        split_merge: false,
        held_out: 2,
    };
    for seed in [1, 2, 3] {
        let cfg = TrainConfig {
            epochs: 5,
            batch: 4,
            model_seed: seed,
            ..Default::default()
        };
        let (_, log) = train(&cfg, &spec).unwrap();
        assert_eq!(log.len(), 6);
        let (first, last) = (log[0].loss, log[5].loss);
        assert!(last < first, "seed {seed}: loss {first} -> {last}");
    }
}
