//! Run configuration. One TOML file declares the corpora, lexicon
//! parameters, model endpoints, judge, test banks, and output locations for
//! a whole pipeline run. Relative paths resolve against the config file's
//! directory. Credentials are never stored here — endpoints name the
//! environment variable that holds theirs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use slantscope::harvest::EndpointConfig;
use slantscope::lexicon::LexiconParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Pipeline-wide seed; stage seeds are derived from it. Always explicit
    /// so a config file pins the whole run.
    pub seed: u64,
    /// Default output directory, overridable with --out.
    pub out: Option<PathBuf>,
    /// Default cache directory, overridable with --cache.
    pub cache: Option<PathBuf>,
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub lexicon: LexiconSection,
    #[serde(default)]
    pub slant: SlantSection,
    pub harvest: Option<HarvestSection>,
    #[serde(default)]
    pub models: Vec<ModelEndpoint>,
    pub judge: Option<JudgeSection>,
    pub tests: Option<TestsSection>,
    pub validate: Option<ValidateSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Party-labeled corpus (JSONL documents with a `party` field).
    pub congress: PathBuf,
    /// Reference corpus for frequency ranks (JSONL documents).
    pub reference: Option<PathBuf>,
    /// Precomputed reference ranks (CSV `bigram,rank`), instead of
    /// `reference`.
    pub reference_ranks: Option<PathBuf>,
    pub stopwords: PathBuf,
    /// Further stopword files merged in (e.g. procedural congressional
    /// vocabulary).
    #[serde(default)]
    pub extra_stopwords: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconSection {
    pub set_size: Option<usize>,
    pub reference_top: Option<usize>,
    pub exclude_top: Option<usize>,
}

impl LexiconSection {
    pub fn params(&self) -> LexiconParams {
        let defaults = LexiconParams::default();
        LexiconParams {
            set_size: self.set_size.unwrap_or(defaults.set_size),
            reference_top: self.reference_top.unwrap_or(defaults.reference_top),
            reference_exclude_top: self.exclude_top.unwrap_or(defaults.reference_exclude_top),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKey {
    #[default]
    Source,
    SourceYear,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlantSection {
    /// Optional corpus scored unit-by-unit (e.g. media outlets).
    pub corpus: Option<PathBuf>,
    /// How documents group into scoring units.
    pub unit: UnitKey,
    /// Minimum lexicon-term occurrences a unit needs to be scored.
    pub min_evidence: Option<u64>,
}

fn default_harvest_concurrency() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestSection {
    /// Prompt templates (TOML), both policy and figure kinds.
    pub templates: PathBuf,
    /// Policy topics, one per line.
    pub topics: PathBuf,
    /// Public figures (CSV `name,category,alignment`).
    pub figures: PathBuf,
    pub policy_replicates: u32,
    pub figure_replicates: u32,
    #[serde(default = "default_harvest_concurrency")]
    pub concurrency: usize,
}

/// A measured model: the id used in every output table plus the endpoint
/// that serves it.
#[derive(Debug, Deserialize)]
pub struct ModelEndpoint {
    pub id: String,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
pub struct JudgeSection {
    /// Directory holding viewpoint.txt, sentiment.txt, and stance.txt.
    pub rubrics: PathBuf,
    /// Significance level for the sentiment asymmetry test.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

fn default_max_invalid_frac() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsSection {
    /// Orientation test banks (TOML), administered to every model.
    pub banks: Vec<PathBuf>,
    /// Framing prefix pool, one per line.
    pub prefixes: PathBuf,
    /// Framing suffix pool, one per line.
    pub suffixes: PathBuf,
    pub runs: u32,
    /// Optional few-shot preamble wrapped around every prompt.
    pub fewshot_preamble: Option<PathBuf>,
    /// Runs with more than this fraction of invalid answers are excluded.
    #[serde(default = "default_max_invalid_frac")]
    pub max_invalid_frac: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// Published unit ratings (CSV `unit,rating`).
    pub ratings: PathBuf,
}

/// Derives a stage-specific seed from the pipeline seed by hashing the
/// stage name, so stages draw independent streams but a config seed pins
/// them all.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(stage.as_bytes());
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(eight)
}

impl RunConfig {
    /// Parses and validates a config file. Path fields come back resolved
    /// against the file's directory, and validation reports every problem
    /// found, not just the first.
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        let problems = config.problems();
        if !problems.is_empty() {
            bail!(
                "invalid config {}:\n  - {}",
                path.display(),
                problems.join("\n  - ")
            );
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(out) = &mut self.out {
            resolve(out);
        }
        if let Some(cache) = &mut self.cache {
            resolve(cache);
        }
        if let Some(corpus) = &mut self.corpus {
            resolve(&mut corpus.congress);
            if let Some(p) = &mut corpus.reference {
                resolve(p);
            }
            if let Some(p) = &mut corpus.reference_ranks {
                resolve(p);
            }
            resolve(&mut corpus.stopwords);
            corpus.extra_stopwords.iter_mut().for_each(&resolve);
        }
        if let Some(p) = &mut self.slant.corpus {
            resolve(p);
        }
        if let Some(harvest) = &mut self.harvest {
            resolve(&mut harvest.templates);
            resolve(&mut harvest.topics);
            resolve(&mut harvest.figures);
        }
        if let Some(judge) = &mut self.judge {
            resolve(&mut judge.rubrics);
        }
        if let Some(tests) = &mut self.tests {
            tests.banks.iter_mut().for_each(&resolve);
            resolve(&mut tests.prefixes);
            resolve(&mut tests.suffixes);
            if let Some(p) = &mut tests.fewshot_preamble {
                resolve(p);
            }
        }
        if let Some(validate) = &mut self.validate {
            resolve(&mut validate.ratings);
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if let Some(corpus) = &self.corpus {
            need(&mut problems, &corpus.congress, "[corpus] congress");
            need(&mut problems, &corpus.stopwords, "[corpus] stopwords");
            for p in &corpus.extra_stopwords {
                need(&mut problems, p, "[corpus] extra_stopwords entry");
            }
            match (&corpus.reference, &corpus.reference_ranks) {
                (Some(p), None) => need(&mut problems, p, "[corpus] reference"),
                (None, Some(p)) => need(&mut problems, p, "[corpus] reference_ranks"),
                (Some(_), Some(_)) => problems.push(
                    "[corpus] set either reference or reference_ranks, not both".into(),
                ),
                (None, None) => problems
                    .push("[corpus] needs a reference corpus or precomputed reference_ranks".into()),
            }
        }
        if let Some(p) = &self.slant.corpus {
            need(&mut problems, p, "[slant] corpus");
        }
        if let Some(harvest) = &self.harvest {
            need(&mut problems, &harvest.templates, "[harvest] templates");
            need(&mut problems, &harvest.topics, "[harvest] topics");
            need(&mut problems, &harvest.figures, "[harvest] figures");
            if harvest.policy_replicates == 0 {
                problems.push("[harvest] policy_replicates must be at least 1".into());
            }
            if harvest.figure_replicates == 0 {
                problems.push("[harvest] figure_replicates must be at least 1".into());
            }
            if harvest.concurrency == 0 {
                problems.push("[harvest] concurrency must be at least 1".into());
            }
        }
        let mut seen_ids = HashSet::new();
        for model in &self.models {
            if model.id.trim().is_empty() {
                problems.push("[[models]] entry with an empty id".into());
            }
            if !seen_ids.insert(model.id.as_str()) {
                problems.push(format!("[[models]] duplicate id `{}`", model.id));
            }
            check_endpoint(&model.endpoint, &format!("[[models]] `{}`", model.id), &mut problems);
        }
        if let Some(judge) = &self.judge {
            need(&mut problems, &judge.rubrics, "[judge] rubrics directory");
            check_endpoint(&judge.endpoint, "[judge]", &mut problems);
            if !(0.0..=1.0).contains(&judge.alpha) {
                problems.push("[judge] alpha must be within [0, 1]".into());
            }
        }
        if let Some(tests) = &self.tests {
            if tests.banks.is_empty() {
                problems.push("[tests] banks must list at least one test bank".into());
            }
            for bank in &tests.banks {
                need(&mut problems, bank, "[tests] bank");
            }
            need(&mut problems, &tests.prefixes, "[tests] prefixes");
            need(&mut problems, &tests.suffixes, "[tests] suffixes");
            if let Some(p) = &tests.fewshot_preamble {
                need(&mut problems, p, "[tests] fewshot_preamble");
            }
            if tests.runs == 0 {
                problems.push("[tests] runs must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&tests.max_invalid_frac) {
                problems.push("[tests] max_invalid_frac must be within [0, 1]".into());
            }
        }
        if let Some(validate) = &self.validate {
            need(&mut problems, &validate.ratings, "[validate] ratings");
        }
        problems
    }
}

fn need(problems: &mut Vec<String>, path: &Path, what: &str) {
    if !path.exists() {
        problems.push(format!("{what} not found: {}", path.display()));
    }
}

fn check_endpoint(endpoint: &EndpointConfig, what: &str, problems: &mut Vec<String>) {
    if !(endpoint.url.starts_with("http://") || endpoint.url.starts_with("https://")) {
        problems.push(format!("{what} url must be http(s): `{}`", endpoint.url));
    }
    if endpoint.model.trim().is_empty() {
        problems.push(format!("{what} model must not be empty"));
    }
    if let Some(rate) = endpoint.rate_limit_per_sec {
        if !(rate > 0.0) {
            problems.push(format!("{what} rate_limit_per_sec must be positive"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_track_the_pipeline_seed() {
        assert_eq!(stage_seed(7, "harvest"), stage_seed(7, "harvest"));
        assert_ne!(stage_seed(7, "harvest"), stage_seed(7, "tests"));
        assert_ne!(stage_seed(7, "harvest"), stage_seed(8, "harvest"));
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "congress.jsonl", "");
        write(dir.path(), "reference.jsonl", "");
        write(dir.path(), "stopwords.txt", "the\n");
        let config_path = write(
            dir.path(),
            "run.toml",
            r#"
seed = 42

[corpus]
congress = "congress.jsonl"
reference = "reference.jsonl"
stopwords = "stopwords.txt"
"#,
        );
        let config = RunConfig::load(&config_path).unwrap();
        let corpus = config.corpus.unwrap();
        assert_eq!(corpus.congress, dir.path().join("congress.jsonl"));
        assert_eq!(corpus.stopwords, dir.path().join("stopwords.txt"));
    }

    #[test]
    fn validation_reports_every_problem_at_once() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write(
            dir.path(),
            "run.toml",
            r#"
seed = 1

[corpus]
congress = "missing.jsonl"
stopwords = "missing.txt"

[harvest]
templates = "missing.toml"
topics = "missing-topics.txt"
figures = "missing.csv"
policy_replicates = 0
figure_replicates = 1

[[models]]
id = "m1"
url = "ftp://nope"
model = "m1"

[[models]]
id = "m1"
url = "http://localhost:1/v1"
model = "m1"
"#,
        );
        let err = RunConfig::load(&config_path).unwrap_err().to_string();
        for needle in [
            "congress not found",
            "stopwords not found",
            "reference corpus or precomputed reference_ranks",
            "templates not found",
            "topics not found",
            "figures not found",
            "policy_replicates",
            "duplicate id `m1`",
            "url must be http(s)",
        ] {
            assert!(err.contains(needle), "missing `{needle}` in:\n{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write(dir.path(), "run.toml", "seed = 1\nbanana = true\n");
        let err = RunConfig::load(&config_path).unwrap_err();
        assert!(format!("{err:#}").contains("banana"), "{err:#}");
    }

    #[test]
    fn seed_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write(dir.path(), "run.toml", "[slant]\n");
        let err = RunConfig::load(&config_path).unwrap_err();
        assert!(format!("{err:#}").contains("seed"), "{err:#}");
    }

    #[test]
    fn endpoint_defaults_apply_through_flatten() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write(
            dir.path(),
            "run.toml",
            r#"
seed = 3

[[models]]
id = "m1"
url = "http://localhost:9000/v1/chat/completions"
model = "backend-model"
"#,
        );
        let config = RunConfig::load(&config_path).unwrap();
        let endpoint = &config.models[0].endpoint;
        assert_eq!(endpoint.model, "backend-model");
        assert_eq!(endpoint.max_retries, 3);
        assert_eq!(endpoint.retry_base_ms, 250);
        assert_eq!(endpoint.timeout_secs, 60);
        assert!(endpoint.credential_env.is_none());
    }
}
