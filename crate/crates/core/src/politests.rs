//! Political-orientation test administration and scoring.
//!
//! A test bank is a TOML file of multiple-choice items whose answers carry
//! weights on an economic and a social axis. Each administration run wraps
//! every item in randomly drawn framing (prefix and suffix, optionally a
//! few-shot preamble), asks the model at temperature 0, maps the free-form
//! answers onto the option set with the judge, and sums the weights. Raw
//! axis scores are rescaled to [−1, 1] and averaged over runs and tests;
//! runs where the model dodged more than half the items are excluded.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{normalize_answer, AnnotateError, Judge, StanceQuery, StanceResult};
use crate::harvest::{Cache, ChatRequest, Executor, HarvestError, ResponseStatus};

#[derive(Debug, Error)]
pub enum PolitestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("test {test}: {message}")]
    Invalid { test: String, message: String },
    #[error("few-shot preamble is empty")]
    EmptyPreamble,
    #[error("{which} pool is empty")]
    EmptyPool { which: String },
    #[error("runs must be at least 1")]
    InvalidRuns,
    #[error("expected {expected} stances, got {got}")]
    StanceCountMismatch { expected: usize, got: usize },
    #[error("stance {answer} is not an answer option")]
    UnknownAnswer { answer: String },
    #[error("result references unknown test {id}")]
    UnknownTest { id: String },
    #[error("results mix models {first} and {second}; average one model at a time")]
    MixedModels { first: String, second: String },
    #[error("no run survived the invalid-answer cutoff")]
    NoValidRuns,
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub statement: String,
    pub answers: Vec<String>,
    /// Economic-axis weight per answer, parallel to `answers`.
    pub econ: Vec<f64>,
    /// Social-axis weight per answer, parallel to `answers`.
    pub social: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDefinition {
    pub id: String,
    /// Declared raw-score range per axis; must contain every achievable sum.
    pub econ_range: [f64; 2],
    pub social_range: [f64; 2],
    pub items: Vec<TestItem>,
}

impl TestDefinition {
    pub fn validate(&self) -> Result<(), PolitestError> {
        let fail = |message: String| {
            Err(PolitestError::Invalid {
                test: self.id.clone(),
                message,
            })
        };
        if self.items.is_empty() {
            return fail("has no items".into());
        }
        for (axis, range) in [("econ", self.econ_range), ("social", self.social_range)] {
            if !(range[0] < range[1]) {
                return fail(format!("{axis}_range [{}, {}] is not increasing", range[0], range[1]));
            }
        }
        for (idx, item) in self.items.iter().enumerate() {
            if item.answers.len() < 2 {
                return fail(format!("item {idx} needs at least 2 answers"));
            }
            if item.econ.len() != item.answers.len() || item.social.len() != item.answers.len() {
                return fail(format!(
                    "item {idx} has {} answers but {} econ and {} social weights",
                    item.answers.len(),
                    item.econ.len(),
                    item.social.len()
                ));
            }
            if item.econ.iter().chain(&item.social).all(|w| *w == 0.0) {
                return fail(format!("item {idx} has all-zero weights"));
            }
            let mut seen = std::collections::HashSet::new();
            for answer in &item.answers {
                if !seen.insert(normalize_answer(answer)) {
                    return fail(format!("item {idx} repeats answer {answer}"));
                }
            }
        }
        // An unanswered item contributes 0, so the achievable sum per axis
        // spans Σ min(0, min weight) to Σ max(0, max weight).
        type AxisWeights = fn(&TestItem) -> &[f64];
        let axes: [(&str, [f64; 2], AxisWeights); 2] = [
            ("econ", self.econ_range, |i| &i.econ),
            ("social", self.social_range, |i| &i.social),
        ];
        for (axis, range, weights) in axes {
            let (mut lo, mut hi) = (0.0, 0.0);
            for item in &self.items {
                lo += weights(item).iter().copied().fold(0.0, f64::min);
                hi += weights(item).iter().copied().fold(0.0, f64::max);
            }
            if lo < range[0] || hi > range[1] {
                return fail(format!(
                    "achievable {axis} scores [{lo}, {hi}] exceed the declared range [{}, {}]",
                    range[0], range[1]
                ));
            }
        }
        Ok(())
    }
}

pub fn load_test(path: &Path) -> Result<TestDefinition, PolitestError> {
    let raw = std::fs::read_to_string(path).map_err(|e| PolitestError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let test: TestDefinition = toml::from_str(&raw).map_err(|e| PolitestError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    test.validate()?;
    Ok(test)
}

/// Reads one pool entry per non-blank line.
pub fn load_text_pool(path: &Path) -> Result<Vec<String>, PolitestError> {
    let raw = std::fs::read_to_string(path).map_err(|e| PolitestError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let pool: Vec<String> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if pool.is_empty() {
        return Err(PolitestError::EmptyPool {
            which: path.display().to_string(),
        });
    }
    Ok(pool)
}

/// The full prompt for one item under one framing draw.
pub fn item_prompt(prefix: &str, item: &TestItem, suffix: &str) -> String {
    format!(
        "{prefix}\n\n{}\n\nOptions: {}\n\n{suffix}",
        item.statement,
        item.answers.join(" | ")
    )
}

/// Prepends a few-shot preamble to a rendered prompt.
pub fn fewshot_wrap(preamble: &str, prompt: &str) -> Result<String, PolitestError> {
    if preamble.trim().is_empty() {
        return Err(PolitestError::EmptyPreamble);
    }
    Ok(format!("{preamble}\n\n{prompt}"))
}

/// Sums answer weights over one run's stances. Items without a detected
/// stance contribute nothing and are tallied as invalid. Returns
/// `(econ_raw, social_raw, invalid_count)`.
pub fn score(
    test: &TestDefinition,
    stances: &[StanceResult],
) -> Result<(f64, f64, usize), PolitestError> {
    if stances.len() != test.items.len() {
        return Err(PolitestError::StanceCountMismatch {
            expected: test.items.len(),
            got: stances.len(),
        });
    }
    let mut econ = 0.0;
    let mut social = 0.0;
    let mut invalid = 0;
    for (item, stance) in test.items.iter().zip(stances) {
        let Some(chosen) = &stance.chosen else {
            invalid += 1;
            continue;
        };
        let normalized = normalize_answer(chosen);
        let Some(idx) = item
            .answers
            .iter()
            .position(|a| normalize_answer(a) == normalized)
        else {
            return Err(PolitestError::UnknownAnswer {
                answer: chosen.clone(),
            });
        };
        econ += item.econ[idx];
        social += item.social[idx];
    }
    Ok((econ, social, invalid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministrationResult {
    pub test_id: String,
    pub model_id: String,
    pub run_index: u32,
    /// One stance per item, in item order.
    pub stances: Vec<StanceResult>,
    pub econ_raw: f64,
    pub social_raw: f64,
    pub invalid_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AdministerOptions<'a> {
    pub prefixes: &'a [String],
    pub suffixes: &'a [String],
    pub runs: u32,
    pub seed: u64,
    /// When set, every prompt is wrapped with this few-shot preamble.
    pub fewshot_preamble: Option<&'a str>,
}

/// Administers `runs` passes of the test to one model. Framing draws come
/// from the seeded RNG (prefix then suffix, per run and item, in order),
/// so a seed fixes the exact prompts. Model answers the judge cannot map
/// to an option — including refusals and transport failures — count as
/// invalid rather than failing the run.
pub fn administer(
    test: &TestDefinition,
    model: &Executor,
    model_id: &str,
    judge: &Judge,
    options: AdministerOptions,
    cache: &Cache,
    concurrency: usize,
) -> Result<Vec<AdministrationResult>, PolitestError> {
    test.validate()?;
    if options.prefixes.is_empty() {
        return Err(PolitestError::EmptyPool {
            which: "prefix".into(),
        });
    }
    if options.suffixes.is_empty() {
        return Err(PolitestError::EmptyPool {
            which: "suffix".into(),
        });
    }
    if options.runs == 0 {
        return Err(PolitestError::InvalidRuns);
    }
    if let Some(preamble) = options.fewshot_preamble {
        if preamble.trim().is_empty() {
            return Err(PolitestError::EmptyPreamble);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut requests = Vec::with_capacity(options.runs as usize * test.items.len());
    for run in 0..options.runs {
        for (item_idx, item) in test.items.iter().enumerate() {
            let prefix = &options.prefixes[rng.gen_range(0..options.prefixes.len())];
            let suffix = &options.suffixes[rng.gen_range(0..options.suffixes.len())];
            let mut prompt = item_prompt(prefix, item, suffix);
            if let Some(preamble) = options.fewshot_preamble {
                prompt = fewshot_wrap(preamble, &prompt)?;
            }
            requests.push(ChatRequest {
                cache_key: format!(
                    "test|{model_id}|{}|r{run}|i{item_idx}|{}",
                    test.id,
                    crate::harvest::sha256_hex(&prompt)
                ),
                prompt,
                temperature: 0.0,
                seed: None,
            });
        }
    }

    let outcomes = model.run(&requests, cache, concurrency)?;
    let responses: Vec<&str> = outcomes
        .iter()
        .map(|o| match o.status {
            ResponseStatus::Ok => o.text.as_str(),
            // Nothing substantive to judge; becomes an invalid item.
            _ => "",
        })
        .collect();
    let queries: Vec<StanceQuery> = responses
        .iter()
        .enumerate()
        .map(|(i, response)| StanceQuery {
            allowed: &test.items[i % test.items.len()].answers,
            response,
        })
        .collect();
    let stances = judge.stance_batch(&queries, cache, concurrency)?;

    let mut results = Vec::with_capacity(options.runs as usize);
    for run in 0..options.runs {
        let start = run as usize * test.items.len();
        let run_stances = stances[start..start + test.items.len()].to_vec();
        let (econ_raw, social_raw, invalid_count) = score(test, &run_stances)?;
        results.push(AdministrationResult {
            test_id: test.id.clone(),
            model_id: model_id.to_owned(),
            run_index: run,
            stances: run_stances,
            econ_raw,
            social_raw,
            invalid_count,
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRun {
    pub test_id: String,
    pub model_id: String,
    pub run_index: u32,
    pub invalid_count: usize,
}

/// One model's position: each axis in [−1, 1], negative meaning left /
/// libertarian and positive right / authoritarian under the bank's
/// weight conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct TestAxes {
    pub econ: f64,
    pub social: f64,
    pub excluded: Vec<ExcludedRun>,
}

fn rescale(raw: f64, range: [f64; 2]) -> f64 {
    (2.0 * (raw - range[0]) / (range[1] - range[0]) - 1.0).clamp(-1.0, 1.0)
}

/// Rescales each run's raw sums onto [−1, 1], drops runs with more than
/// `max_invalid_frac` of items unanswered, averages the survivors per
/// test, and averages the per-test means. Results must all belong to one
/// model.
pub fn rescale_and_average(
    results: &[AdministrationResult],
    tests: &[TestDefinition],
    max_invalid_frac: f64,
) -> Result<TestAxes, PolitestError> {
    let by_id: HashMap<&str, &TestDefinition> =
        tests.iter().map(|t| (t.id.as_str(), t)).collect();
    if let Some(pair) = results.windows(2).find(|w| w[0].model_id != w[1].model_id) {
        return Err(PolitestError::MixedModels {
            first: pair[0].model_id.clone(),
            second: pair[1].model_id.clone(),
        });
    }

    let mut per_test: HashMap<&str, (f64, f64, usize)> = HashMap::new();
    let mut excluded = Vec::new();
    for result in results {
        let test = by_id
            .get(result.test_id.as_str())
            .ok_or_else(|| PolitestError::UnknownTest {
                id: result.test_id.clone(),
            })?;
        let invalid_frac = result.invalid_count as f64 / test.items.len() as f64;
        if invalid_frac > max_invalid_frac {
            excluded.push(ExcludedRun {
                test_id: result.test_id.clone(),
                model_id: result.model_id.clone(),
                run_index: result.run_index,
                invalid_count: result.invalid_count,
            });
            continue;
        }
        let entry = per_test.entry(&result.test_id).or_insert((0.0, 0.0, 0));
        entry.0 += rescale(result.econ_raw, test.econ_range);
        entry.1 += rescale(result.social_raw, test.social_range);
        entry.2 += 1;
    }
    if per_test.is_empty() {
        return Err(PolitestError::NoValidRuns);
    }
    let mut econ = 0.0;
    let mut social = 0.0;
    for (sum_econ, sum_social, n) in per_test.values() {
        econ += sum_econ / *n as f64;
        social += sum_social / *n as f64;
    }
    econ /= per_test.len() as f64;
    social /= per_test.len() as f64;
    excluded.sort_by(|a, b| (&a.test_id, a.run_index).cmp(&(&b.test_id, b.run_index)));
    Ok(TestAxes {
        econ,
        social,
        excluded,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PolitestError + '_ {
    move |e| PolitestError::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

/// Per-run raw scores: `model,test,run,econ_raw,social_raw,invalid_count`.
pub fn write_runs_csv(path: &Path, results: &[AdministrationResult]) -> Result<(), PolitestError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record(["model", "test", "run", "econ_raw", "social_raw", "invalid_count"])
        .map_err(csv_err(path))?;
    for result in results {
        writer
            .write_record([
                result.model_id.clone(),
                result.test_id.clone(),
                result.run_index.to_string(),
                result.econ_raw.to_string(),
                result.social_raw.to_string(),
                result.invalid_count.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(|e| PolitestError::Io {
        path: path.to_owned(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAxes {
    pub model: String,
    pub econ: f64,
    pub social: f64,
}

/// Averaged axes per model: `model,econ,social`.
pub fn write_summary_csv(path: &Path, rows: &[ModelAxes]) -> Result<(), PolitestError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record(["model", "econ", "social"])
        .map_err(csv_err(path))?;
    for row in rows {
        writer
            .write_record([
                row.model.clone(),
                row.econ.to_string(),
                row.social.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(|e| PolitestError::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Read back a CSV written by [`write_summary_csv`].
pub fn read_summary_csv(path: &Path) -> Result<Vec<ModelAxes>, PolitestError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let (model, econ, social): (String, f64, f64) = record.map_err(csv_err(path))?;
        rows.push(ModelAxes { model, econ, social });
    }
    Ok(rows)
}
