use std::time::{Duration, Instant};

use layoutdiff::diff::report;
use layoutdiff::doc::{BBox, Document};
use layoutdiff::encoder::{build_graph, encode_layout, layout_similarity};
use layoutdiff::featurize::{
    edge_feature, font_bucket, font_style_encoding, geometric_feature, iou, parse_font_name, rgb_to_ycbcr,
    FONT_BUCKETS,
};
use layoutdiff::gradsuite::{run_suite, INSTANCES};
use layoutdiff::matcher::{match_documents, match_graphs, MatchMode, MatchOptions, MatchSet};
use layoutdiff::nn::{hungarian, sinkhorn, Model, Tensor};
use layoutdiff::synth::{ambiguity_pair, gen_document, mutate_document, MutationConfig, Profile};
use layoutdiff::train::{
    evaluate_prepared, greedy_text_match, metrics, pair_accuracy, prepare, train, CorpusSpec, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn run(name: &'static str, check: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = check();
    let outcome = Outcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {:<28} {:>7.1}s  {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.name,
        outcome.elapsed.as_secs_f64(),
        outcome.detail
    );
    outcome
}

fn profile(seed: u64) -> Profile {
    if seed.is_multiple_of(2) {
        Profile::Legal
    } else {
        Profile::Article
    }
}

fn ids(doc: &Document) -> Vec<&str> {
    doc.blocks.iter().map(|b| b.id.as_str()).collect()
}

fn light_corpus() -> CorpusSpec {
    CorpusSpec {
        n_pairs: 200,
        profiles: vec![Profile::Legal, Profile::Article],
        intensity: vec![0.1, 0.2, 0.3],
        seed: 11,
        split_merge: false,
        held_out: 100,
    }
}

fn split_merge_corpus() -> CorpusSpec {
    CorpusSpec {
        intensity: vec![0.2],
        split_merge: true,
        ..light_corpus()
    }
}

fn split_merge_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch: 2,
        mode: MatchMode::ManyToMany,
        ..Default::default()
    }
}

fn close(got: &[f64], want: &[f64]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(g, w)| (g - w).abs() <= 5e-5 * w.abs().max(1e-3))
}

fn gradient_integrity() -> (bool, String) {
    let start = Instant::now();
    let checks = run_suite(0, INSTANCES);
    let elapsed = start.elapsed();
    let worst = checks
        .iter()
        .max_by(|a, b| (a.max_rel_err / a.threshold).total_cmp(&(b.max_rel_err / b.threshold)))
        .expect("suite has layers");
    let all = checks.iter().all(|c| c.passed() && c.instances == INSTANCES);
    (
        all && elapsed < Duration::from_secs(60),
        format!(
            "{} layers x {INSTANCES}, worst {} {:.2e} < {:.0e}",
            checks.len(),
            worst.layer.name(),
            worst.max_rel_err,
            worst.threshold
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::matrix(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn permute(m: &Tensor, rows: &[usize], cols: &[usize]) -> Tensor {
    let n = m.rows();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, m.at(rows[i], cols[j]));
        }
    }
    out
}

fn sinkhorn_feasibility() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut feas, mut equi): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(1..=32);
        let m = random_matrix(&mut rng, n);
        let s = sinkhorn(&m, 1.0, 50).unwrap();
        for i in 0..n {
            let row: f64 = s.row(i).iter().sum();
            let col: f64 = (0..n).map(|k| s.at(k, i)).sum();
            feas = feas.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        let mut p: Vec<usize> = (0..n).collect();
        let mut q = p.clone();
        rand::seq::SliceRandom::shuffle(&mut p[..], &mut rng);
        rand::seq::SliceRandom::shuffle(&mut q[..], &mut rng);
        let sp = sinkhorn(&permute(&m, &p, &q), 1.0, 50).unwrap();
        equi = equi.max(permute(&s, &p, &q).max_abs_diff(&sp));
    }
    (
        feas < 1e-6 && equi < 1e-12,
        format!("tau 1, 50 iters, 100 matrices: sum err {feas:.1e}, permutation err {equi:.1e}"),
    )
}

fn brute_force(cost: &Tensor) -> f64 {
    fn go(cost: &Tensor, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = cost.rows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost.at(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

fn hungarian_optimality() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for trial in 0..100 {
        let n = 1 + trial % 7;
        let cost = random_matrix(&mut rng, n);
        let assignment = hungarian(&cost);
        let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();
        let mut seen = assignment.clone();
        seen.sort_unstable();
        if seen != (0..n).collect::<Vec<_>>() || (total - brute_force(&cost)).abs() > 1e-9 {
            failures += 1;
        }
    }
    (failures == 0, format!("100 matrices, n 1..=7, {failures} mismatches"))
}

fn formula_fidelity() -> (bool, String) {
    let mut failed = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            failed.push(name);
        }
    };
    check(
        "geometric",
        close(&geometric_feature(&BBox::new(40.0, 40.0, 60.0, 60.0), 100.0, 100.0), &[0.5, 0.5, 0.2, 0.2, 0.002]),
    );
    check(
        "geometric full page",
        close(&geometric_feature(&BBox::new(0.0, 0.0, 100.0, 100.0), 100.0, 100.0), &[0.5, 0.5, 1.0, 1.0, 0.01]),
    );
    check(
        "iou",
        (iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-12,
    );
    check(
        "edge",
        close(
            &edge_feature(&BBox::new(20.0, 40.0, 30.0, 60.0), &BBox::new(65.0, 40.0, 85.0, 60.0), 100.0, 100.0),
            &[0.0, 2.0, 1.0, 0.35355, 3.5355, 0.0, 0.0],
        ),
    );
    check("ycbcr", close(&rgb_to_ycbcr([255, 0, 0]), &[76.245, 84.972, 255.0]));
    let (family, bold, italic) = parse_font_name("LiberationSans-Bold");
    let bits = font_style_encoding(&family, bold, italic);
    let mut want = [0u8; FONT_BUCKETS + 2];
    want[font_bucket("LiberationSans")] = 1;
    want[FONT_BUCKETS + 1] = 1;
    check("font style", bits == want && bits.iter().map(|&b| b as u32).sum::<u32>() == 2);
    (
        failed.is_empty(),
        if failed.is_empty() {
            "geometric, iou, edge, ycbcr, font style".into()
        } else {
            format!("mismatched: {}", failed.join(", "))
        },
    )
}

fn light_learning(model: &Model, train_time: Duration) -> (bool, String) {
    let held = prepare(&light_corpus().held_out_pairs(), model.hyper.include_semantic);
    let opts = MatchOptions::from_model(model);
    let m = evaluate_prepared(model, &held, &opts).unwrap();
    (
        m.overall.f1 >= 0.90,
        format!(
            "one2one F1 {:.3} >= 0.90 on {} held-out pairs (train {:.0}s)",
            m.overall.f1,
            held.len(),
            train_time.as_secs_f64()
        ),
    )
}

fn split_merge_learning() -> (bool, String) {
    let spec = split_merge_corpus();
    let start = Instant::now();
    let (model, _) = train(&split_merge_config(), &spec).unwrap();
    let train_time = start.elapsed();
    let held = prepare(&spec.held_out_pairs(), model.hyper.include_semantic);
    let opts = MatchOptions::from_model(&model).with_mode(MatchMode::ManyToMany);
    let m = evaluate_prepared(&model, &held, &opts).unwrap();
    let sm = m.split_merge();
    (
        sm.f1 >= 0.75,
        format!(
            "many2many split/merge F1 {:.3} >= 0.75 (splits {:.3}, merges {:.3}, train {:.0}s)",
            sm.f1,
            m.splits.f1,
            m.merges.f1,
            train_time.as_secs_f64()
        ),
    )
}

fn ambiguity_advantage(model: &Model) -> (bool, String) {
    let opts = MatchOptions::from_model(model);
    let (mut learned, mut greedy, mut n) = (0.0, 0.0, 0);
    for seed in 0..40 {
        let (a, b, gt, dups) = ambiguity_pair(1000 + seed);
        if dups.len() < 2 {
            continue;
        }
        let pred = match_documents(&a, &b, model, &opts).unwrap();
        learned += pair_accuracy(&pred, &gt, &dups);
        greedy += pair_accuracy(&greedy_text_match(&a, &b), &gt, &dups);
        n += 1;
    }
    let (learned, greedy) = (learned / n as f64, greedy / n as f64);
    (
        n > 0 && learned > greedy,
        format!("pair accuracy on {n} fixtures: matcher {learned:.3} > greedy {greedy:.3}"),
    )
}

fn self_match(model: &Model) -> (bool, String) {
    let opts = MatchOptions::from_model(model);
    let mut identical = 0;
    for seed in 0..20 {
        let doc = gen_document(500 + seed, profile(seed));
        let set = match_documents(&doc, &doc, model, &opts).unwrap();
        let mut scoreless = set.clone();
        scoreless.pairs.iter_mut().for_each(|p| p.score = 1.0);
        if scoreless == MatchSet::identity(&ids(&doc)) {
            identical += 1;
        }
    }
    (identical == 20, format!("{identical}/20 documents match themselves exactly"))
}

fn determinism(model: &Model) -> (bool, String) {
    let spec = CorpusSpec {
        n_pairs: 16,
        held_out: 4,
        ..light_corpus()
    };
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let first = train(&cfg, &spec).unwrap().0.to_bytes();
    let second = train(&cfg, &spec).unwrap().0.to_bytes();
    let doc = gen_document(42, Profile::Legal);
    let (other, _) = mutate_document(&doc, &MutationConfig::from_intensity(0.3, true, 42));
    let opts = MatchOptions::from_model(model).with_mode(MatchMode::ManyToMany);
    let json = || report(&doc, &other, &match_documents(&doc, &other, model, &opts).unwrap()).to_json();
    let (r1, r2) = (json(), json());
    (
        first == second && r1 == r2,
        format!(
            "model files {} ({} bytes), report JSON {}",
            if first == second { "identical" } else { "differ" },
            first.len(),
            if r1 == r2 { "identical" } else { "differs" }
        ),
    )
}

fn fifty_blocks(seed: u64) -> Document {
    let mut seed = seed;
    loop {
        let doc = gen_document(seed, profile(seed));
        if doc.blocks.len() >= 50 {
            let mut doc = doc;
            doc.blocks.truncate(50);
            doc.pages.truncate(doc.blocks.iter().map(|b| b.page + 1).max().unwrap_or(1));
            return doc;
        }
        seed += 1;
    }
}

fn latency(model: &Model) -> (bool, String) {
    let a = fifty_blocks(0);
    let (b, _) = mutate_document(&a, &MutationConfig::from_intensity(0.2, false, 9));
    let opts = MatchOptions::from_model(model);
    let start = Instant::now();
    let set = match_documents(&a, &b, model, &opts).unwrap();
    let rendered = report(&a, &b, &set).render(&a, &b);
    let elapsed = start.elapsed();
    (
        elapsed < Duration::from_secs(1) && !rendered.is_empty(),
        format!(
            "{} vs {} blocks, K={} in {:.0} ms",
            a.blocks.len(),
            b.blocks.len(),
            opts.iterations,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn monotone_difficulty(model: &Model) -> (bool, String) {
    let opts = MatchOptions::from_model(model);
    let mean_f1 = |intensity: f64| {
        let spec = CorpusSpec {
            n_pairs: 100,
            intensity: vec![intensity],
            seed: 77,
            held_out: 0,
            ..light_corpus()
        };
        let samples = prepare(&spec.pairs(), model.hyper.include_semantic);
        let total: f64 = samples
            .iter()
            .map(|s| {
                let pred = layoutdiff::train::predict(model, s, &opts).unwrap();
                metrics([(&pred, &s.gt)]).overall.f1
            })
            .sum();
        total / samples.len() as f64
    };
    let (easy, hard) = (mean_f1(0.05), mean_f1(0.3));
    (easy >= hard, format!("mean F1 {easy:.3} at 0.05 >= {hard:.3} at 0.3"))
}

fn seed_42_fixture(model: &Model) -> (bool, String) {
    let doc = gen_document(42, Profile::Legal);
    let (other, gt) = mutate_document(&doc, &MutationConfig::from_intensity(0.1, false, 42));
    let pred = match_documents(&doc, &other, model, &MatchOptions::from_model(model)).unwrap();
    let f1 = metrics([(&pred, &gt)]).overall.f1;
    (f1 == 1.0, format!("light pair F1 {f1:.3}"))
}

fn layout_similarity_ranking(model: &Model) -> (bool, String) {
    let mut wins = 0;
    for seed in 0..200u64 {
        let doc = gen_document(seed, profile(seed));
        let (light, _) = mutate_document(&doc, &MutationConfig::from_intensity(0.1, false, seed));
        let unrelated = gen_document(seed + 10_000, profile(seed + 1));
        let embed = |d: &Document| encode_layout(&build_graph(d, model.hyper.include_semantic), model).unwrap();
        let base = embed(&doc);
        if layout_similarity(&base, &embed(&light)) > layout_similarity(&base, &embed(&unrelated)) {
            wins += 1;
        }
    }
    (wins >= 180, format!("mutated closer than unrelated in {wins}/200 trials"))
}

fn single_block(model: &Model) -> (bool, String) {
    let mut doc = gen_document(3, Profile::Article);
    doc.blocks.truncate(1);
    doc.pages.truncate(1);
    let g = build_graph(&doc, model.hyper.include_semantic);
    let s = match_graphs(&g, &g, model, &MatchOptions::from_model(model)).unwrap();
    let (pair, slack_row, slack_col) = (s.at(0, 0), s.at(0, 1), s.at(1, 0));
    (
        pair > slack_row && pair > slack_col,
        format!("S11 {pair:.3} vs slack {slack_row:.3}, {slack_col:.3}"),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut outcomes = vec![
        run("1 gradient integrity", gradient_integrity),
        run("2 sinkhorn feasibility", sinkhorn_feasibility),
        run("3 hungarian optimality", hungarian_optimality),
        run("4 formula fidelity", formula_fidelity),
    ];

    let start = Instant::now();
    let (model, _) = train(&TrainConfig::default(), &light_corpus()).unwrap();
    let train_time = start.elapsed();

    outcomes.push(run("5a learning one2one", || light_learning(&model, train_time)));
    outcomes.push(run("5b learning split/merge", split_merge_learning));
    outcomes.push(run("6 ambiguity advantage", || ambiguity_advantage(&model)));
    outcomes.push(run("7 self-match identity", || self_match(&model)));
    outcomes.push(run("8 determinism", || determinism(&model)));
    outcomes.push(run("9 pipeline latency", || latency(&model)));

    println!("supplementary:");
    outcomes.push(run("monotone difficulty", || monotone_difficulty(&model)));
    outcomes.push(run("seed 42 light fixture", || seed_42_fixture(&model)));
    outcomes.push(run("layout similarity ranking", || layout_similarity_ranking(&model)));
    outcomes.push(run("single block pair", || single_block(&model)));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!("{} of {} checks passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
