//! Acceptance suite: one test per release criterion, each printing a
//! PASS line when it holds. Everything runs offline against the deterministic
//! mock providers; thresholds are fixed here, not tuned elsewhere.

use std::time::Instant;

use synthgen_core::bench::{check_compliance, parse_local_checker};
use synthgen_core::data::{
    CallLedger, CallRecord, ConstraintSet, DatasetDescriptor, DatasetItem, GenerationConfig,
    RunConfig, RunManifest, SandboxConfig, Stage,
};
use synthgen_core::engine::run_pipeline;
use synthgen_core::gateway::{
    EmbeddingMatrix, EmbeddingStore, Gateway, MockChatProvider, MockEmbedder, TemplateSet,
};
use synthgen_core::metrics::{aps, remote_clique, self_bleu};
use synthgen_core::postprocess::{
    apply_policy_guard, build_similarity_matrix, enhance_difficulty, group_check, DifficultyPolicy,
};
use synthgen_core::selector::{select_diverse, select_random, SelectionStrategy, SelectorConfig};
use synthgen_core::validator::{
    extract_entities, retrieve, validate_and_refine, LocalCorpus, ValidationOutcome,
};
use synthgen_core::verifier::{execute_sandboxed, verify_dataset};
use synthgen_core::{AnswerFormat, Choice, RateCard};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gateway_with(mock: MockChatProvider, rates: RateCard) -> Gateway {
    Gateway::new(
        Box::new(mock),
        EmbeddingStore::new(Box::new(MockEmbedder::default())),
        TemplateSet::builtin(),
        rates,
        2,
    )
}

fn mc_seed_items(n: usize) -> Vec<DatasetItem> {
    let topics = [
        "ancient trade routes",
        "deep sea currents",
        "planetary orbits",
        "folk proverbs",
        "medieval census records",
        "migratory birds",
        "volcanic soil",
        "early printing presses",
        "soundproof architecture",
        "desert irrigation",
    ];
    (0..n)
        .map(|i| {
            DatasetItem::new(
                format!("seed-{i}"),
                format!(
                    "Which statement about {} is accurate?",
                    topics[i % topics.len()]
                ),
            )
            .with_choices(vec![
                Choice::new(
                    "A",
                    format!("the well-supported account of {}", topics[i % topics.len()]),
                ),
                Choice::new("B", "a widespread misconception"),
                Choice::new("C", "an unrelated anecdote"),
                Choice::new("D", "an implausible exaggeration"),
            ])
            .with_label("A")
        })
        .collect()
}

fn mc_descriptor() -> DatasetDescriptor {
    DatasetDescriptor {
        name: "acceptance".into(),
        description: "multiple-choice questions with exactly one correct answer".into(),
        with_label: true,
        answer_format: AnswerFormat::MultipleChoice,
    }
}

// --- 1 -----------------------------------------------------------------

#[test]
fn criterion_01_deterministic_end_to_end() {
    let corpus_dir = tempfile::tempdir().unwrap();
    std::fs::write(
        corpus_dir.path().join("ancient_trade_routes.txt"),
        "Well-documented overland and maritime routes carried goods between settled regions.",
    )
    .unwrap();

    let build_config = || {
        let mut generation = GenerationConfig::new("mock-model", 200, 5);
        generation.seed = 42;
        generation.max_worker = 2;
        let mut config = RunConfig::new(
            generation,
            "multiple-choice questions with exactly one correct answer",
            "seed.json",
        );
        config.stages.attribute_guided = true;
        config.stages.quality_loop = true;
        config.stages.rag_validation = true;
        config.stages.group_checking = true;
        config.wiki_corpus = Some(corpus_dir.path().to_path_buf());
        config
    };
    let seeds = mc_seed_items(10);
    let started = Instant::now();

    let mut artifacts: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for run_name in ["first", "second"] {
        let mut rates = RateCard::default();
        rates.insert("mock-model", 10.0, 30.0);
        rates.insert("text-embedding-ada-002", 0.1, 0.0);
        let gateway = gateway_with(MockChatProvider::new(42), rates);
        let config = build_config();
        let run = run_pipeline(
            &gateway,
            &config,
            &seeds,
            &mc_descriptor(),
            &ConstraintSet::default(),
        )
        .unwrap_or_else(|e| panic!("{run_name} run failed: {e}"));
        let dir = tempfile::tempdir().unwrap();
        synthgen_core::save_dataset(&run.items, dir.path().join("dataset.json")).unwrap();
        run.manifest.save(dir.path().join("manifest.json")).unwrap();
        artifacts.push((
            std::fs::read(dir.path().join("dataset.json")).unwrap(),
            std::fs::read(dir.path().join("manifest.json")).unwrap(),
        ));
    }
    let elapsed = started.elapsed();

    assert_eq!(artifacts[0].0, artifacts[1].0, "dataset.json bytes differ");
    assert_eq!(artifacts[0].1, artifacts[1].1, "manifest.json bytes differ");
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "two 200-item runs took {elapsed:?}, budget is 30 s"
    );
    println!("criterion 1 (deterministic end-to-end, {elapsed:?} for two runs): PASS");
}

// --- 2 -----------------------------------------------------------------

#[test]
fn criterion_02_dedupe_correctness_over_random_instances() {
    let started = Instant::now();
    for instance in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("it-{i}")).collect();
        let items: Vec<DatasetItem> = ids
            .iter()
            .map(|id| DatasetItem::new(id.clone(), format!("text {id}")))
            .collect();
        let embeddings = EmbeddingMatrix::new("m", ids, rows.clone()).unwrap();
        let matrix = build_similarity_matrix(&embeddings).unwrap();

        let low = matrix.distance_percentile(0.5).unwrap();
        let high = matrix.distance_percentile(5.0).unwrap();
        let theta = low + rng.random::<f64>() * (high - low);

        let (survivors, _) = group_check(&items, &matrix, theta, instance).unwrap();

        // Independent O(n^2) verification on raw embeddings.
        let index_of = |id: &str| -> usize { id.strip_prefix("it-").unwrap().parse().unwrap() };
        for a in 0..survivors.len() {
            for b in (a + 1)..survivors.len() {
                let (ia, ib) = (index_of(&survivors[a].id), index_of(&survivors[b].id));
                let d = rows[ia]
                    .iter()
                    .zip(&rows[ib])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    d >= theta,
                    "instance {instance}: pair ({ia},{ib}) at {d} survived theta {theta}"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "dedupe sweep took {elapsed:?}");
    println!("criterion 2 (dedupe correctness, 50 instances in {elapsed:?}): PASS");
}

// --- 3 -----------------------------------------------------------------

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_03_similarity_matrix_oracle() {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
        let n = rng.random_range(2..40);
        let dim = rng.random_range(1..16);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect())
            .collect();
        let ids = (0..n).map(|i| format!("x{i}")).collect();
        let embeddings = EmbeddingMatrix::new("m", ids, rows.clone()).unwrap();
        let matrix = build_similarity_matrix(&embeddings).unwrap();

        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..dim {
                    let d = rows[i][k] - rows[j][k];
                    acc += d * d;
                }
                let oracle = acc.sqrt();
                worst = worst.max((matrix.distance(i, j) - oracle).abs());
            }
        }
    }
    assert!(worst < 1e-12, "max abs error {worst}");
    println!("criterion 3 (similarity-matrix oracle, max err {worst:.3e}): PASS");
}

// --- 4 -----------------------------------------------------------------

#[test]
fn criterion_04_diverse_selector_covers_blobs() {
    // Intra-blob spread 0.5 per axis; blob centers 10x that apart.
    let half = 15usize;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rows = Vec::new();
    for i in 0..half * 2 {
        let center = if i < half { 0.0 } else { 5.0 };
        rows.push(vec![
            center + rng.random::<f64>() * 0.5,
            center + rng.random::<f64>() * 0.5,
        ]);
    }
    let items: Vec<DatasetItem> = (0..half * 2)
        .map(|i| DatasetItem::new(format!("seed-{i}"), format!("q{i}")))
        .collect();
    let ids = items.iter().map(|i| i.id.clone()).collect();
    let embeddings = EmbeddingMatrix::new("m", ids, rows).unwrap();

    let spans_both = |picked: &[DatasetItem]| {
        let sides: std::collections::BTreeSet<bool> = picked
            .iter()
            .map(|item| {
                let idx: usize = item.id.strip_prefix("seed-").unwrap().parse().unwrap();
                idx < half
            })
            .collect();
        sides.len() == 2
    };

    let mut diverse_hits = 0;
    let mut random_hits = 0;
    for seed in 0..100 {
        let config = SelectorConfig::new(SelectionStrategy::ClusterDiverse, 2, seed);
        if spans_both(&select_diverse(&items, &embeddings, &config).unwrap()) {
            diverse_hits += 1;
        }
        if spans_both(&select_random(&items, 2, seed).unwrap()) {
            random_hits += 1;
        }
    }
    assert!(
        diverse_hits >= 99,
        "diverse covered both blobs in {diverse_hits}/100 seeds"
    );
    assert!(
        random_hits < diverse_hits,
        "random ({random_hits}) should cover both blobs materially less often than diverse ({diverse_hits})"
    );
    println!(
        "criterion 4 (two-blob selector: diverse {diverse_hits}/100, random {random_hits}/100): PASS"
    );
}

// --- 5 -----------------------------------------------------------------

/// Independent BLEU implementation: string-keyed n-gram maps, explicit loops,
/// powf-based geometric mean. Shares only the metric definition.
mod bleu_oracle {
    use std::collections::HashMap;

    fn grams(tokens: &[String], n: usize) -> HashMap<String, u64> {
        let mut out = HashMap::new();
        if tokens.len() < n {
            return out;
        }
        for start in 0..=(tokens.len() - n) {
            let key = tokens[start..start + n].join("\u{1}");
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        for raw in text.to_lowercase().split_whitespace() {
            let mut token = String::new();
            for c in raw.chars() {
                if c.is_alphanumeric() {
                    token.push(c);
                }
            }
            if !token.is_empty() {
                tokens.push(token);
            }
        }
        tokens
    }

    pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let mut product = 1.0f64;
        let mut orders = 0u32;
        for n in 1..=max_n {
            let cand = grams(candidate, n);
            let mut total = 0u64;
            for v in cand.values() {
                total += v;
            }
            if total == 0 {
                continue;
            }
            let mut matched = 0u64;
            for (gram, count) in &cand {
                let mut best = 0u64;
                for reference in references {
                    let rc = grams(reference, n).get(gram).copied().unwrap_or(0);
                    if rc > best {
                        best = rc;
                    }
                }
                matched += (*count).min(best);
            }
            let p = if matched == 0 {
                1.0 / (total as f64 + 1.0)
            } else {
                matched as f64 / total as f64
            };
            product *= p;
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let geo = product.powf(1.0 / orders as f64);
        let c = candidate.len();
        let mut r = references[0].len();
        for reference in references {
            let len = reference.len();
            let better =
                len.abs_diff(c) < r.abs_diff(c) || (len.abs_diff(c) == r.abs_diff(c) && len < r);
            if better {
                r = len;
            }
        }
        let bp = if c >= r {
            1.0
        } else {
            (1.0 - r as f64 / c as f64).exp()
        };
        bp * geo
    }
}

fn twenty_item_fixture() -> Vec<String> {
    // Twenty sentences, each exactly eight tokens, with overlapping vocabulary.
    vec![
        "the committee examines the ancient map today quietly",
        "a traveler describes the mountain pass before dawn",
        "the engineer measures the tidal pattern near shore",
        "a historian records the trade route with care",
        "the orchestra compares a musical scale in rehearsal",
        "a biologist observes the fossil record every winter",
        "the merchant questions the voting system after lunch",
        "a student summarizes the quiet harbor from memory",
        "the captain predicts the tidal pattern before storms",
        "an astronomer challenges the ancient map with data",
        "the committee records the mountain pass in spring",
        "a traveler measures the trade route by foot",
        "the engineer observes a musical scale with instruments",
        "a historian compares the fossil record across regions",
        "the orchestra questions the quiet harbor at night",
        "a biologist summarizes the voting system for colleagues",
        "the merchant predicts the ancient map will sell",
        "a student challenges the tidal pattern with equations",
        "the captain examines the trade route for hazards",
        "an astronomer describes the mountain pass from orbit",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

#[test]
fn criterion_05_metric_oracles() {
    // Self-BLEU against the independent implementation, per item.
    let texts = twenty_item_fixture();
    let (scores, mean) = self_bleu(&texts, 4).unwrap();
    let token_lists: Vec<Vec<String>> = texts.iter().map(|t| bleu_oracle::tokenize(t)).collect();
    let mut worst = 0.0f64;
    for (i, score) in scores.iter().enumerate() {
        let references: Vec<Vec<String>> = token_lists
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| t.clone())
            .collect();
        let oracle = bleu_oracle::bleu(&token_lists[i], &references, 4);
        worst = worst.max((score - oracle).abs());
        assert!(
            (score - oracle).abs() < 1e-9,
            "item {i}: self_bleu {score} vs oracle {oracle}"
        );
    }
    assert!((0.0..=1.0).contains(&mean));

    // Duplicating an existing item must not decrease the corpus mean.
    let mut duplicated = texts.clone();
    duplicated.push(texts[0].clone());
    let (_, dup_mean) = self_bleu(&duplicated, 4).unwrap();
    assert!(
        dup_mean >= mean - 1e-12,
        "duplicating an item lowered mean self-BLEU: {mean} -> {dup_mean}"
    );

    // remote_clique == 1 - aps on every embedding fixture.
    let mut fixtures: Vec<EmbeddingMatrix> = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = 10 + (seed as usize) * 37;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..24).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        fixtures.push(EmbeddingMatrix::new("m", ids, rows).unwrap());
    }
    fixtures.push(
        EmbeddingMatrix::new(
            "m",
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap(),
    );
    fixtures.push(
        EmbeddingMatrix::new(
            "m",
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0.3, 0.4]; 3],
        )
        .unwrap(),
    );
    for (index, fixture) in fixtures.iter().enumerate() {
        let rc = remote_clique(fixture).unwrap();
        let s = aps(fixture).unwrap();
        assert!(
            (rc - (1.0 - s)).abs() < 1e-12,
            "fixture {index}: remote_clique {rc} vs 1-aps {}",
            1.0 - s
        );
    }
    println!("criterion 5 (metric oracles, worst BLEU err {worst:.3e}): PASS");
}

// --- 6 -----------------------------------------------------------------

struct MathProblem {
    text: String,
    answer: i64,
    solver: String,
}

fn math_corpus() -> Vec<MathProblem> {
    let mut problems = vec![MathProblem {
        text: "During a summer camp, children are collecting points through various activities for rewards. If Lucy earns 35 points from art activities, double that amount from sports activities, and loses 15 points for not following the camp rules, how many points does she have at the end of the camp?".into(),
        answer: 90,
        solver: "print(35 + 35*2 - 15)".into(),
    }];
    let specs: [(i64, i64, i64); 24] = [
        (12, 4, 3),
        (7, 9, 2),
        (25, 3, 10),
        (8, 8, 8),
        (30, 2, 5),
        (14, 5, 6),
        (9, 11, 4),
        (18, 3, 7),
        (22, 4, 9),
        (6, 12, 1),
        (40, 2, 15),
        (11, 7, 3),
        (16, 5, 12),
        (27, 3, 8),
        (5, 20, 2),
        (13, 6, 4),
        (33, 2, 11),
        (10, 9, 5),
        (21, 4, 6),
        (15, 7, 9),
        (28, 3, 13),
        (19, 5, 7),
        (24, 4, 10),
        (17, 6, 8),
    ];
    for (i, (crates, per_crate, damaged)) in specs.into_iter().enumerate() {
        problems.push(MathProblem {
            text: format!(
                "A warehouse receives {crates} crates numbered for shipment {i}, each holding {per_crate} items, but {damaged} items are damaged in transit. How many usable items remain?"
            ),
            answer: crates * per_crate - damaged,
            solver: format!("print({crates}*{per_crate} - {damaged})"),
        });
    }
    problems
}

#[test]
fn criterion_06_math_verifier_corrects_corrupted_labels() {
    let problems = math_corpus();
    assert_eq!(problems.len(), 25);

    // Rule-based mock: each problem's text keys its solver program.
    let mut mock = MockChatProvider::new(5);
    for problem in &problems {
        let marker = problem.text.chars().take(60).collect::<String>();
        mock = mock.with_rule(
            marker,
            format!(
                r#"{{"Code": "{}", "Analysis": "direct arithmetic"}}"#,
                problem.solver
            ),
        );
    }
    let gateway = gateway_with(mock, RateCard::default());

    // Corrupt 11 of the 25 labels.
    let corrupted: std::collections::BTreeSet<usize> = [0, 2, 3, 5, 8, 11, 13, 16, 19, 21, 24]
        .into_iter()
        .collect();
    assert_eq!(corrupted.len(), 11);
    let mut items: Vec<DatasetItem> = problems
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = if corrupted.contains(&i) {
                p.answer + 7
            } else {
                p.answer
            };
            DatasetItem::new(format!("math-{i}"), p.text.clone()).with_label(label.to_string())
        })
        .collect();

    let sandbox = SandboxConfig::default();
    let mut ledger = CallLedger::new();
    let stats = verify_dataset(&gateway, "mock", &mut items, &sandbox, 2, &mut ledger).unwrap();

    // Every label now equals its sandbox candidate.
    for (item, problem) in items.iter().zip(&problems) {
        assert_eq!(
            item.label.as_deref(),
            Some(problem.answer.to_string().as_str()),
            "item {} label not reconciled",
            item.id
        );
    }
    let expected: Vec<String> = corrupted.iter().map(|i| format!("math-{i}")).collect();
    assert_eq!(stats.corrected_ids, expected, "correction ledger mismatch");
    assert_eq!(stats.verified, 14);

    // Sandbox timeout: a sleeping program dies within the 10 s budget + 1 s slack.
    let started = Instant::now();
    let result = execute_sandboxed("import time\ntime.sleep(30)\n", &sandbox).unwrap();
    let elapsed = started.elapsed();
    assert!(result.timed_out, "sleeper was not flagged as timed out");
    assert!(result.answer_candidate().is_none());
    assert!(
        elapsed.as_secs_f64() <= 11.0,
        "sleeper survived {elapsed:?}, budget 10 s + 1 s slack"
    );
    println!("criterion 6 (math verifier: 11 corrections, timeout {elapsed:?}): PASS");
}

// --- 7 -----------------------------------------------------------------

#[test]
fn criterion_07_template_fixtures_render_verbatim_phrases() {
    let templates = TemplateSet::builtin();
    let canonical: &[(&str, Vec<(&str, &str)>)] = &[
        (
            "self_reflection",
            vec![("description", "D"), ("example", "E")],
        ),
        (
            "self_enhancement",
            vec![
                ("description", "D"),
                ("reflection", "R"),
                ("original example", "O"),
            ],
        ),
        ("description", vec![("description for dataset", "D")]),
        (
            "initial",
            vec![
                ("batch_size", "5"),
                ("few_shot_examples", "F"),
                ("dataset_constraint", "C"),
            ],
        ),
        (
            "return_format",
            vec![("batch_size", "5"), ("data_format", "[]")],
        ),
        (
            "attribute_guided",
            vec![("description", "D"), ("few_shot_examples", "F")],
        ),
        ("attribute_directive", vec![("attribute", "sports")]),
        ("constraints_prefix", vec![]),
        ("constraints_suffix", vec![]),
        (
            "human_feedback",
            vec![("user_feedback", "U"), ("example", "E")],
        ),
        ("feedback_prefix", vec![]),
        ("wiki_keyword_extract", vec![("input_text", "T")]),
        (
            "wiki_fact_refine",
            vec![("input_text", "T"), ("wiki_data", "W")],
        ),
        ("math_eval", vec![("expression", "35 + 35*2 - 15")]),
        (
            "math_eval_compare",
            vec![("response1", "2"), ("response2", "two")],
        ),
        (
            "judge_evaluation",
            vec![
                ("question", "Q"),
                ("solution", "S"),
                ("correct answer", "A"),
            ],
        ),
        (
            "constraint_compliance",
            vec![("constraint", "sports"), ("text", "T")],
        ),
        (
            "candidate_answer",
            vec![("format_directive", ""), ("question", "Q")],
        ),
        (
            "difficulty_enhance",
            vec![("policy_directive", "P"), ("example", "E")],
        ),
    ];

    let mut rendered_all = String::new();
    for (name, bindings) in canonical {
        let out = templates
            .render(name, bindings)
            .unwrap_or_else(|e| panic!("template {name} failed to render: {e}"));
        rendered_all.push_str(&out);
        rendered_all.push('\n');
    }

    // Spot phrases that must survive byte-exactly.
    for phrase in [
        "isgood",
        "key `Code' for the executable code",
        "Only reply YES or NO",
        "At most 3",
        "The number of entries to be generated is 5",
        "You are a professional dataset generation assistant",
        "is_original_example_good",
        "do not make significant changes",
        "Based on human feedback, please improve",
        "`2' and `two' are considered equivalent",
        "\"is_same\": true/false",
    ] {
        assert!(rendered_all.contains(phrase), "missing phrase: {phrase}");
    }

    // The data-format fixtures are bindings rather than templates; they must
    // exist for every answer format.
    for with_label in [true, false] {
        for format in [
            AnswerFormat::MultipleChoice,
            AnswerFormat::Numeric,
            AnswerFormat::FreeText,
            AnswerFormat::Boolean,
        ] {
            assert!(!templates
                .data_format(format, with_label)
                .unwrap()
                .is_empty());
        }
    }
    println!("criterion 7 (template fixtures verbatim): PASS");
}

// --- 8 -----------------------------------------------------------------

#[test]
fn criterion_08_rag_offline_proverb_correction() {
    let corpus_dir = tempfile::tempdir().unwrap();
    std::fs::write(
        corpus_dir.path().join("blood_is_thicker_than_water.txt"),
        "Blood is thicker than water is a proverb meaning that familial bonds will always be \
         stronger than other relationships. Suggested alternative readings about battle bonds \
         lack citation and are not widely supported by historical evidence.",
    )
    .unwrap();
    let corpus = LocalCorpus::new(corpus_dir.path());

    let item_template = || {
        DatasetItem::new(
            "proverb-1",
            "What does the term 'blood is thicker than water' originally mean?",
        )
        .with_choices(vec![
            Choice::new("A", "Family relationships are stronger than friendships."),
            Choice::new(
                "B",
                "Bonds formed by shared experiences or battles are stronger than those of family.",
            ),
            Choice::new("C", "Blood rituals form the strongest bonds."),
            Choice::new(
                "D",
                "It refers to the viscosity of blood versus water, nothing more.",
            ),
        ])
        .with_label("B")
    };

    let refined_payload = r#"{
        "thinking_progress": "The retrieved passage states the familial-bonds reading is the predominant historical understanding, so answer B is wrong and A is right.",
        "is_original_example_good": "False",
        "refined_text": {
            "text": "What does the term 'blood is thicker than water' originally mean?",
            "choices": [
                {"key": "A", "body": "Family relationships are stronger than friendships."},
                {"key": "B", "body": "Bonds formed by shared experiences or battles are stronger than those of family."},
                {"key": "C", "body": "Blood rituals form the strongest bonds."},
                {"key": "D", "body": "It refers to the viscosity of blood versus water, nothing more."}
            ],
            "label": "A"
        }
    }"#;

    let make_gateway = || {
        gateway_with(
            MockChatProvider::new(9)
                .with_rule(
                    "identify key entities",
                    r#"{"entities":["Blood is thicker than water"]}"#,
                )
                .with_rule("is_original_example_good", refined_payload),
            RateCard::default(),
        )
    };

    let mut outcomes = Vec::new();
    for _ in 0..2 {
        let gateway = make_gateway();
        let mut ledger = CallLedger::new();
        let mut item = item_template();
        let entities = extract_entities(&gateway, "mock", &item, &mut ledger).unwrap();
        assert_eq!(entities.entities, vec!["Blood is thicker than water"]);
        let evidence = retrieve(&entities, &corpus, 4000);
        assert_eq!(evidence.hits.len(), 1);
        let outcome =
            validate_and_refine(&gateway, "mock", &mut item, &evidence, &mut ledger).unwrap();
        outcomes.push((outcome, item));
    }

    for (outcome, item) in &outcomes {
        assert_eq!(*outcome, ValidationOutcome::Corrected);
        assert_eq!(item.label.as_deref(), Some("A"), "refined answer must be A");
        assert_eq!(item.meta["rag_corrected"], "true");
        assert!(item.meta["old_payload"].contains("\"label\":\"B\""));
    }
    assert_eq!(
        outcomes[0].1, outcomes[1].1,
        "validation is not deterministic"
    );
    println!("criterion 8 (offline RAG proverb correction B -> A): PASS");
}

// --- 9 -----------------------------------------------------------------

#[test]
fn criterion_09_difficulty_guards_catch_every_violation() {
    let items: Vec<DatasetItem> = (0..200)
        .map(|i| {
            DatasetItem::new(
                format!("d-{i}"),
                format!("Which account of topic {i} holds up?"),
            )
            .with_choices(vec![
                Choice::new("A", format!("the defensible account of topic {i}")),
                Choice::new("B", "a tempting but wrong account"),
                Choice::new("C", "an outdated account"),
                Choice::new("D", "an exaggerated account"),
            ])
            .with_label("A")
        })
        .collect();

    for policy in DifficultyPolicy::all() {
        // A third of rewrites deliberately violate the policy's rules.
        let gateway = gateway_with(
            MockChatProvider::new(31).with_guard_violation_rate(0.33),
            RateCard::default(),
        );
        let mut ledger = CallLedger::new();
        let mut rejected = 0usize;
        for item in &items {
            let (result, violation) =
                enhance_difficulty(&gateway, "mock", item, policy, &mut ledger).unwrap();
            if violation.is_some() {
                rejected += 1;
                assert_eq!(
                    result.text, item.text,
                    "rejected rewrite must keep the original"
                );
                assert_eq!(result.choices, item.choices);
                assert_eq!(result.label, item.label);
                continue;
            }
            // Re-apply the guard to the accepted output as an independent check.
            match policy {
                DifficultyPolicy::ParaphraseQuestion | DifficultyPolicy::AddContext => {
                    assert_eq!(result.label, item.label, "{policy:?} changed the label");
                    assert_eq!(
                        result.choices.as_ref().map(Vec::len),
                        item.choices.as_ref().map(Vec::len)
                    );
                }
                DifficultyPolicy::ParaphraseChoices => {
                    assert_eq!(result.label, item.label);
                    let old = item.choices.as_deref().unwrap();
                    let new = result.choices.as_deref().unwrap();
                    assert_eq!(old.len(), new.len(), "{policy:?} changed option count");
                    for (a, b) in old.iter().zip(new) {
                        assert_eq!(a.key, b.key, "{policy:?} changed option keys");
                    }
                }
                DifficultyPolicy::AddChoice => {
                    let old = item.choices.as_deref().unwrap();
                    let new = result.choices.as_deref().unwrap();
                    assert_eq!(
                        new.len(),
                        old.len() + 1,
                        "{policy:?} must add exactly one option"
                    );
                    assert_eq!(
                        result.correct_choice_body(),
                        item.correct_choice_body(),
                        "{policy:?} altered the correct option body"
                    );
                }
            }
            assert!(
                apply_policy_guard(policy, item, result.clone()).is_ok(),
                "accepted rewrite fails its own guard"
            );
        }
        assert!(
            rejected > 0,
            "{policy:?}: the violation-injecting mock never tripped the guard"
        );
    }
    println!("criterion 9 (difficulty guards, 200 rewrites x 4 policies): PASS");
}

// --- 10 ----------------------------------------------------------------

#[test]
fn criterion_10_cost_accounting_is_exact() {
    // A manifest with awkward float costs across all three stage groups.
    let mut manifest = RunManifest::new("cost-test", GenerationConfig::new("m", 10, 5));
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let stages = [
        Stage::Generation,
        Stage::Embedding,
        Stage::QualityReflect,
        Stage::QualityEnhance,
        Stage::CodeEval,
        Stage::CodeCompare,
        Stage::RagKeyword,
        Stage::RagRefine,
        Stage::Difficulty,
    ];
    for i in 0..500 {
        let stage = stages[rng.random_range(0..stages.len())];
        manifest.append(CallRecord {
            stage,
            scope: format!("call-{i}"),
            prompt_sha256: "h".into(),
            prompt_tokens: rng.random_range(1..5000),
            completion_tokens: rng.random_range(1..2000),
            latency_ms: 0,
            cost: rng.random::<f64>() * 0.01 + 1e-9,
        });
    }
    let recomputed = manifest.recompute_cost();
    assert_eq!(recomputed.base.to_bits(), manifest.cost.base.to_bits());
    assert_eq!(recomputed.code.to_bits(), manifest.cost.code.to_bits());
    assert_eq!(recomputed.rag.to_bits(), manifest.cost.rag.to_bits());
    assert_eq!(recomputed.total.to_bits(), manifest.cost.total.to_bits());
    assert_eq!(
        manifest.cost.total,
        manifest.cost.base + manifest.cost.code + manifest.cost.rag,
        "stage groups must partition the total"
    );
    let (prompt, completion) = manifest.recompute_tokens();
    assert_eq!(prompt, manifest.total_prompt_tokens);
    assert_eq!(completion, manifest.total_completion_tokens);

    // The same invariants on a real end-to-end manifest.
    let mut rates = RateCard::default();
    rates.insert("mock-model", 10.0, 30.0);
    rates.insert("text-embedding-ada-002", 0.1, 0.0);
    let gateway = gateway_with(MockChatProvider::new(3), rates);
    let mut generation = GenerationConfig::new("mock-model", 20, 5);
    generation.seed = 1;
    let config = RunConfig::new(generation, "multiple-choice questions", "seed.json");
    let run = run_pipeline(
        &gateway,
        &config,
        &mc_seed_items(8),
        &mc_descriptor(),
        &ConstraintSet::default(),
    )
    .unwrap();
    let recomputed = run.manifest.recompute_cost();
    assert_eq!(
        recomputed.total.to_bits(),
        run.manifest.cost.total.to_bits()
    );
    assert!(run.manifest.cost.total > 0.0);
    println!(
        "criterion 10 (cost accounting exact, {} calls audited): PASS",
        500 + run.manifest.calls.len()
    );
}

// --- 11 ----------------------------------------------------------------

#[test]
fn criterion_11_compliance_checkers_match_hand_counts() {
    // Length family: options shorter than 20 words. Hand count: 3 of 4 comply.
    let short = |n: usize| {
        (0..n)
            .map(|i| format!("word{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let length_items: Vec<DatasetItem> = [5usize, 10, 19, 25]
        .iter()
        .enumerate()
        .map(|(i, &words)| {
            DatasetItem::new(format!("len-{i}"), "How many words fit?")
                .with_choices(vec![
                    Choice::new("A", short(words)),
                    Choice::new("B", short(3)),
                ])
                .with_label("A")
        })
        .collect();
    let checker = parse_local_checker("Ensure each option is shorter than 20 words").unwrap();
    let passing = length_items.iter().filter(|i| checker.check(i)).count();
    assert_eq!(passing, 3, "length family hand count");

    // Option-count family: exactly five options. Hand count: 2 of 5 comply.
    let count_items: Vec<DatasetItem> = [4usize, 5, 5, 3, 6]
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let choices: Vec<Choice> = (0..count)
                .map(|c| {
                    Choice::new(
                        ((b'A' + c as u8) as char).to_string(),
                        format!("option {c}"),
                    )
                })
                .collect();
            DatasetItem::new(format!("cnt-{i}"), "Pick one")
                .with_choices(choices)
                .with_label("A")
        })
        .collect();
    let checker = parse_local_checker("Ensure each question contains five options").unwrap();
    let passing = count_items.iter().filter(|i| checker.check(i)).count();
    assert_eq!(passing, 2, "option-count family hand count");

    // Language-script family: Chinese output. Hand count: 2 of 3 comply.
    let script_items = [
        DatasetItem::new("zh-0", "下列哪项关于长城的说法是正确的"),
        DatasetItem::new("zh-1", "这座城市的历史可以追溯到什么时候"),
        DatasetItem::new("zh-2", "Which dynasty built the longest walls?"),
    ];
    let checker =
        parse_local_checker("Ensure the questions and options are output in Chinese").unwrap();
    let passing = script_items.iter().filter(|i| checker.check(i)).count();
    assert_eq!(passing, 2, "script family hand count");

    // Topic family via judge-mock: items mentioning basketball comply.
    // Hand count: 2 of 5.
    let topic_items: Vec<DatasetItem> = [
        "Which basketball rule changed in 1954?",
        "What is the boiling point of water?",
        "Who invented basketball?",
        "Which river is the longest?",
        "When was the printing press invented?",
    ]
    .iter()
    .enumerate()
    .map(|(i, text)| DatasetItem::new(format!("top-{i}"), *text))
    .collect();
    assert!(parse_local_checker("Ensure the question is related to sports").is_none());
    // Rules are checked in order: basketball prompts answer YES, everything
    // else falls through to the explicit NO.
    let gateway = gateway_with(
        MockChatProvider::new(0)
            .with_rule("basketball", "YES")
            .with_rule("Only reply YES or NO", "NO"),
        RateCard::default(),
    );
    let mut ledger = CallLedger::new();
    let pair = check_compliance(
        &gateway,
        &topic_items,
        "Ensure the question is related to sports",
        "judge",
        2,
        &mut ledger,
    )
    .unwrap();
    assert_eq!(pair.judge.yes, 2, "topic family hand count");
    assert_eq!(pair.judge.checked, 5);
    assert!(pair.local.is_none());
    println!("criterion 11 (compliance checkers match hand counts): PASS");
}
