//! Acceptance gates for the whole toolkit. Each test pins the tolerance and,
//! where latency matters, the runtime budget it must meet. Everything runs
//! offline: the only network traffic is to an in-process loopback mock.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{LN_2, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slantscope::aggregate::{combine, validate_against_ratings, BiasRating, Method, MethodScore};
use slantscope::corpus::{count_documents, merge_counts, Bigram, BigramCountTable, Document};
use slantscope::lexicon::{
    build_partisan_lexicon, chi_square_bigram, LexiconParams, PartyTermCounts, ReferenceRanking,
};
use slantscope::mock::{Fixtures, MockServer};
use slantscope::slant::{jensen_shannon, score_corpus_units, slant_delta, TermDistribution};
use slantscope::stats::{pearson, welch_t_test, zscore_normalize};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("workspace root")
        .to_owned()
}

/// Standard normal draw via Box-Muller, so the noise model does not depend
/// on any distribution crate.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

// --- 1. chi-square agrees with exact-integer Pearson arithmetic ---------

#[test]
fn chi_square_matches_exact_pearson_arithmetic() {
    const TUPLES: usize = 1_000;
    const MAX_COUNT: u64 = 1_000_000;
    const REL_TOL: f64 = 1e-12;
    const BUDGET: Duration = Duration::from_secs(1);

    let start = Instant::now();
    // Worked example: 10-vs-0 uses against 90-vs-100 remainders is 1/19.
    let example = PartyTermCounts {
        rep_uses: 10,
        dem_uses: 0,
        rep_rest: 90,
        dem_rest: 100,
    };
    let got = chi_square_bigram(&example).unwrap();
    assert!((got - 1.0 / 19.0).abs() <= 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(0x57eadfa57);
    let mut checked = 0;
    while checked < TUPLES {
        let a = rng.gen_range(0..=MAX_COUNT); // rep uses
        let b = rng.gen_range(0..=MAX_COUNT); // dem uses
        let c = rng.gen_range(0..=MAX_COUNT); // rep rest
        let d = rng.gen_range(0..=MAX_COUNT); // dem rest
        if a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0 {
            continue;
        }
        checked += 1;
        // Pearson's 2x2 statistic over N, evaluated exactly: i128 holds the
        // cross-product square (<= 1e24) and the marginal product (<= 2.6e26).
        let (ai, bi, ci, di) = (a as i128, b as i128, c as i128, d as i128);
        let num = (ai * di - bi * ci).pow(2);
        let den = (ai + bi) * (ci + di) * (ai + ci) * (bi + di);
        let oracle = num as f64 / den as f64;

        let got = chi_square_bigram(&PartyTermCounts {
            rep_uses: a,
            dem_uses: b,
            rep_rest: c,
            dem_rest: d,
        })
        .unwrap();
        assert!(
            (got - oracle).abs() <= REL_TOL * oracle.abs().max(f64::MIN_POSITIVE),
            "tuple ({a},{b},{c},{d}): {got} vs oracle {oracle}"
        );
    }
    assert!(start.elapsed() < BUDGET, "took {:?}", start.elapsed());
}

// --- 2. Jensen-Shannon divergence properties -----------------------------

#[test]
fn jsd_properties_hold_over_random_distributions() {
    const PAIRS: usize = 1_000;
    const SUPPORT: usize = 2_000;
    const TOL: f64 = 1e-12;
    const BUDGET: Duration = Duration::from_secs(5);

    let start = Instant::now();
    let terms: Vec<Bigram> = (0..SUPPORT)
        .map(|i| Bigram::new(format!("term{i}"), "marker").unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_815);

    // Skewed weights with a 30% chance of a zero keep both shared and
    // disjoint support regions in play.
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut weights: Vec<f64> = (0..SUPPORT)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    let u: f64 = rng.gen_range(1e-6..1.0);
                    u * u * u
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        weights
    };

    for pair in 0..PAIRS {
        let p = draw(&mut rng);
        let q = draw(&mut rng);

        // Independent value: KL(P||M) and KL(Q||M) computed separately over
        // an explicit midpoint vector.
        let m: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| 0.5 * (pi + qi)).collect();
        let kl = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&m)
                .filter(|(xi, _)| **xi > 0.0)
                .map(|(xi, mi)| xi * (xi / mi).ln())
                .sum()
        };
        let oracle = 0.5 * kl(&p) + 0.5 * kl(&q);

        let dist = |weights: &[f64]| {
            let probs: HashMap<Bigram, f64> = terms
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(b, w)| (b.clone(), *w))
                .collect();
            TermDistribution::from_probabilities(probs, 1).unwrap()
        };
        let dp = dist(&p);
        let dq = dist(&q);

        let forward = jensen_shannon(&dp, &dq);
        let backward = jensen_shannon(&dq, &dp);
        assert!((forward - backward).abs() <= TOL, "pair {pair}: asymmetric");
        assert!((0.0..=LN_2).contains(&forward), "pair {pair}: out of range");
        assert_eq!(jensen_shannon(&dp, &dp), 0.0, "pair {pair}: self-JSD");
        assert!(
            (forward - oracle).abs() <= TOL * oracle.abs().max(1.0),
            "pair {pair}: {forward} vs oracle {oracle}"
        );
    }
    assert!(start.elapsed() < BUDGET, "took {:?}", start.elapsed());
}

// --- shared synthetic lexicon for 3 and 4 --------------------------------

struct SyntheticLexicon {
    lexicon: slantscope::lexicon::PartisanLexicon,
    dem_ref: TermDistribution,
    rep_ref: TermDistribution,
    dem_terms: Vec<Bigram>,
    rep_terms: Vec<Bigram>,
}

/// Ten bigrams per party, strongly separated, with references taken from
/// the same party tables the lexicon is built from.
fn synthetic_lexicon() -> SyntheticLexicon {
    let dem_terms: Vec<Bigram> = (0..10)
        .map(|i| Bigram::new(format!("blue{i}"), "topic").unwrap())
        .collect();
    let rep_terms: Vec<Bigram> = (0..10)
        .map(|i| Bigram::new(format!("red{i}"), "topic").unwrap())
        .collect();

    let mut dem_table = BigramCountTable::new();
    let mut rep_table = BigramCountTable::new();
    for (i, b) in dem_terms.iter().enumerate() {
        dem_table.add_count(b.clone(), 90 + i as u64);
        rep_table.add_count(b.clone(), 1);
    }
    for (i, b) in rep_terms.iter().enumerate() {
        rep_table.add_count(b.clone(), 90 + i as u64);
        dem_table.add_count(b.clone(), 1);
    }

    let mut reference = BigramCountTable::new();
    for b in dem_terms.iter().chain(&rep_terms) {
        reference.add_count(b.clone(), 50);
    }
    let params = LexiconParams {
        set_size: 10,
        reference_top: 1_000,
        reference_exclude_top: 0,
    };
    let lexicon =
        build_partisan_lexicon(&dem_table, &rep_table, &ReferenceRanking::from_counts(&reference), params)
            .unwrap();
    assert_eq!(lexicon.len(), 20);
    let dem_ref = TermDistribution::project(&dem_table, &lexicon, 1).unwrap();
    let rep_ref = TermDistribution::project(&rep_table, &lexicon, 1).unwrap();
    SyntheticLexicon {
        lexicon,
        dem_ref,
        rep_ref,
        dem_terms,
        rep_terms,
    }
}

// --- 3. slant moves monotonically with party share -----------------------

#[test]
fn slant_delta_increases_with_republican_share() {
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let syn = synthetic_lexicon();

    // Text mixtures stepping from all-Democratic wording to all-Republican
    // in tenths.
    let mut deltas = Vec::new();
    for k in 0..=10u64 {
        let mut table = BigramCountTable::new();
        for (i, b) in syn.dem_terms.iter().enumerate() {
            table.add_count(b.clone(), (10 - k) * (20 + i as u64));
        }
        for (i, b) in syn.rep_terms.iter().enumerate() {
            table.add_count(b.clone(), k * (20 + i as u64));
        }
        let text = TermDistribution::project(&table, &syn.lexicon, 1).unwrap();
        deltas.push(slant_delta(&text, &syn.dem_ref, &syn.rep_ref).delta);
    }

    assert!(deltas[0] < 0.0, "pure Democratic text scored {}", deltas[0]);
    assert!(deltas[10] > 0.0, "pure Republican text scored {}", deltas[10]);
    for w in deltas.windows(2) {
        assert!(w[1] > w[0], "not strictly increasing: {deltas:?}");
    }
    assert!(start.elapsed() < BUDGET, "took {:?}", start.elapsed());
}

// --- 4. corpus scoring recovers planted outlet ratings -------------------

#[test]
fn corpus_slant_recovers_planted_outlet_ratings() {
    const UNITS: usize = 48;
    const NOISE_SIGMA: f64 = 0.05;
    const MIN_R: f64 = 0.9;
    const BUDGET: Duration = Duration::from_secs(30);

    let start = Instant::now();
    let syn = synthetic_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(484_848);

    let ladder = [
        BiasRating::Left,
        BiasRating::LeanLeft,
        BiasRating::Center,
        BiasRating::LeanRight,
        BiasRating::Right,
    ];
    let mut units: BTreeMap<String, BigramCountTable> = BTreeMap::new();
    let mut ratings: HashMap<String, BiasRating> = HashMap::new();
    for i in 0..UNITS {
        let rating = ladder[i % ladder.len()];
        let name = format!("outlet{i:02}-{}", 2018 + i % 4);
        // Republican wording share proportional to the rating, with noisy
        // weights.
        let share = (f64::from(rating.code()) + 2.0) / 4.0;
        let share = (share + NOISE_SIGMA * gaussian(&mut rng)).clamp(0.0, 1.0);
        let mut table = BigramCountTable::new();
        for b in &syn.dem_terms {
            table.add_count(b.clone(), ((1.0 - share) * 300.0).round() as u64);
        }
        for b in &syn.rep_terms {
            table.add_count(b.clone(), (share * 300.0).round() as u64);
        }
        units.insert(name.clone(), table);
        ratings.insert(name, rating);
    }

    let scores = score_corpus_units(&units, &syn.lexicon, &syn.dem_ref, &syn.rep_ref, 1);
    assert!(scores.skipped.is_empty(), "skipped: {:?}", scores.skipped);
    let deltas: HashMap<String, f64> = scores
        .scored
        .into_iter()
        .map(|u| (u.unit, u.score.delta))
        .collect();
    let report = validate_against_ratings(&deltas, &ratings).unwrap();
    assert_eq!(report.n, UNITS);
    assert!(report.r >= MIN_R, "r = {} below {MIN_R}", report.r);
    assert!(start.elapsed() < BUDGET, "took {:?}", start.elapsed());
}

// --- 5. shared statistics match references -------------------------------

#[test]
fn statistics_match_hand_and_reference_values() {
    // Pearson on a hand-checkable pair: covariance 8 over sqrt(10 * 10).
    let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    assert!((r - 0.8).abs() <= 1e-12);

    // Welch on (2,4,6) vs (1,2,3): t = 2 / sqrt(5/3), df = 50/17.
    let welch = welch_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((welch.t - 1.5492).abs() <= 1e-4, "t = {}", welch.t);
    assert!((welch.df - 2.941).abs() <= 1e-3, "df = {}", welch.df);
    let dist = StudentsT::new(0.0, 1.0, welch.df).unwrap();
    let p_oracle = 2.0 * (1.0 - dist.cdf(welch.t.abs()));
    assert!(
        (welch.p - p_oracle).abs() <= 1e-6,
        "p = {} vs oracle {p_oracle}",
        welch.p
    );

    // Z-scores: output mean 0 and population sigma 1 on random vectors.
    let mut rng = ChaCha8Rng::seed_from_u64(5_5555);
    for _ in 0..1_000 {
        let len = rng.gen_range(2..=64);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let z = zscore_normalize(&values).unwrap();
        assert!(!z.zero_variance);
        let n = z.values.len() as f64;
        let mean = z.values.iter().sum::<f64>() / n;
        let var = z.values.iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-12, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 1e-12, "sigma {}", var.sqrt());
    }
}

// --- 6. ranking invariance under per-method affine rescaling -------------

#[test]
fn ranking_is_invariant_to_affine_method_rescaling() {
    const MATRICES: usize = 100;
    const MODELS: usize = 10;
    let methods = [
        Method::Slant,
        Method::Viewpoint,
        Method::Sentiment,
        Method::Tests,
    ];

    let permutation = |scores: &[MethodScore]| -> Vec<String> {
        combine(scores)
            .unwrap()
            .rows
            .into_iter()
            .map(|row| row.model_id)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(66_000);
    for matrix in 0..MATRICES {
        let scores: Vec<MethodScore> = (0..MODELS)
            .flat_map(|m| {
                let mut rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
                methods.map(move |method| MethodScore {
                    model_id: format!("model{m:02}"),
                    method,
                    value: rng2.gen_range(-3.0..3.0),
                })
            })
            .collect();
        let baseline = permutation(&scores);

        for &method in &methods {
            let scale = rng.gen_range(0.1..10.0);
            let offset = rng.gen_range(-5.0..5.0);
            let rescaled: Vec<MethodScore> = scores
                .iter()
                .map(|s| MethodScore {
                    model_id: s.model_id.clone(),
                    method: s.method,
                    value: if s.method == method {
                        scale * s.value + offset
                    } else {
                        s.value
                    },
                })
                .collect();
            assert_eq!(
                permutation(&rescaled),
                baseline,
                "matrix {matrix}: rescaling {method} by {scale}x + {offset} moved the ranking"
            );
        }
    }
}

// --- 7. end-to-end pipeline reproducibility against the loopback mock ----

#[test]
fn pipeline_reports_are_reproducible_end_to_end() {
    const BUDGET: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let root = repo_root();
    let fixtures = Fixtures::load(&root.join("fixtures/mock_fixtures.json")).unwrap();
    let server = MockServer::spawn(fixtures, "127.0.0.1:0").unwrap();

    let run = |label: &str| -> Vec<(String, Vec<u8>)> {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = dir.path().join("run.toml");
        let f = |rel: &str| root.join(rel).display().to_string();
        fs::write(
            &config,
            format!(
                r#"
seed = 20240817
out = "{out}"

[corpus]
congress = "{congress}"
reference = "{reference}"
stopwords = "{stopwords}"
extra_stopwords = ["{overused}"]

[lexicon]
set_size = 20
reference_top = 150
exclude_top = 5

[harvest]
templates = "{templates}"
topics = "{topics}"
figures = "{figures}"
policy_replicates = 5
figure_replicates = 3
concurrency = 4

[[models]]
id = "mock-left"
url = "{url}"
model = "mock-left"

[[models]]
id = "mock-right"
url = "{url}"
model = "mock-right"

[judge]
rubrics = "{rubrics}"
url = "{url}"
model = "mock-judge"

[tests]
banks = ["{bank}"]
prefixes = "{prefixes}"
suffixes = "{suffixes}"
runs = 10
fewshot_preamble = "{fewshot}"
"#,
                out = out.display(),
                congress = f("fixtures/congress.jsonl"),
                reference = f("fixtures/reference.jsonl"),
                stopwords = f("data/stopwords_en.txt"),
                overused = f("data/congress_overused.txt"),
                templates = f("data/templates.toml"),
                topics = f("fixtures/topics_small.txt"),
                figures = f("fixtures/figures_small.csv"),
                rubrics = f("data/rubrics"),
                bank = f("data/tests/sample_bank.toml"),
                prefixes = f("data/prefixes.txt"),
                suffixes = f("data/suffixes.txt"),
                fewshot = f("data/fewshot_preamble.txt"),
                url = server.url(),
            ),
        )
        .unwrap();

        for stage in ["harvest", "lexicon", "slant", "annotate", "tests", "aggregate"] {
            let output = Command::new(env!("CARGO_BIN_EXE_slantscope"))
                .args(["--config", config.to_str().unwrap(), stage])
                .output()
                .expect("binary runs");
            assert!(
                output.status.success(),
                "{label} {stage} failed:\n{}",
                String::from_utf8_lossy(&output.stderr)
            );
        }

        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out.join("report"))
            .unwrap()
            .map(|entry| {
                let entry = entry.unwrap();
                (
                    entry.file_name().to_string_lossy().into_owned(),
                    fs::read(entry.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };

    // Two fresh-cache runs with the same seed must produce byte-identical
    // reports.
    let first = run("first");
    let second = run("second");
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["ranking.csv", "ranking.svg", "metadata.txt", "slant.csv"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert_eq!(first.len(), second.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
    }
    assert!(server.request_count() > 0, "mock saw no traffic");
    assert!(start.elapsed() < BUDGET, "took {:?}", start.elapsed());
}

// --- 8. sharded counting merges exactly ----------------------------------

#[test]
fn sharded_counts_merge_to_the_unsharded_table() {
    const DOCS: usize = 100_000;
    const SHARDS: usize = 8;

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let vocab: Vec<String> = (0..60).map(|i| format!("word{i}")).collect();
    let stopwords = ["the".to_owned()].into_iter().collect();

    let docs: Vec<Document> = (0..DOCS)
        .map(|i| {
            let len = rng.gen_range(6..=16);
            let mut text = String::new();
            for t in 0..len {
                if t > 0 {
                    // Sprinkle in stopwords and sentence breaks.
                    text.push_str(if rng.gen_bool(0.1) { ". " } else { " " });
                    if rng.gen_bool(0.15) {
                        text.push_str("the ");
                    }
                }
                text.push_str(&vocab[rng.gen_range(0..vocab.len())]);
            }
            Document {
                id: format!("doc{i}"),
                text,
                source: "synthetic".into(),
                party: None,
                year: None,
            }
        })
        .collect();

    let unsharded = count_documents(&docs, &stopwords);
    let merged = docs
        .chunks(DOCS / SHARDS)
        .map(|shard| count_documents(shard, &stopwords))
        .fold(BigramCountTable::new(), merge_counts);
    assert_eq!(merged, unsharded);
}
