//! Prompt planning and response harvesting against chat-completion endpoints.
//!
//! A harvest is planned up front as a deterministic task list (model ×
//! slot × replicate, with per-task template choice, temperature, and seed
//! drawn from one RNG), then executed with disk caching, bounded
//! concurrency, rate limiting, and retry-with-backoff. Completed and
//! refused responses are cached; transport failures are recorded but
//! retried on the next run.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jsonl::{self, RowError};

/// Placeholder that prompt templates use for the topic or figure name.
pub const SLOT: &str = "{slot}";

pub(crate) fn sha256_hex(data: &str) -> String {
    let digest = Sha256::digest(data.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("template {id}: {message}")]
    InvalidTemplate { id: String, message: String },
    #[error("template {template} expects a slot value but none was given")]
    MissingSlotValue { template: String },
    #[error("template {template} has no slot but a value was given")]
    UnusedSlotValue { template: String },
    #[error("task references unknown template {id}")]
    UnknownTemplate { id: String },
    #[error("no templates to plan over")]
    EmptyTemplates,
    #[error("replicates must be at least 1")]
    InvalidReplicates,
    #[error("endpoint URL {url} is not http(s)")]
    InvalidUrl { url: String },
    #[error("credential environment variable {env} is not set")]
    MissingCredential { env: String },
    #[error("endpoint rejected credentials with HTTP {status}")]
    AuthRejected { status: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    /// Open-ended prompt about a policy topic; slot is the topic.
    Policy,
    /// Prompt about a public figure; slot is the figure's name.
    Figure,
    /// Orientation-test item wrapper; slot optional.
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    pub kind: TemplateKind,
}

impl PromptTemplate {
    /// Policy and figure templates take exactly one slot; test templates
    /// take at most one.
    pub fn validate(&self) -> Result<(), HarvestError> {
        let slots = self.text.matches(SLOT).count();
        let ok = match self.kind {
            TemplateKind::Policy | TemplateKind::Figure => slots == 1,
            TemplateKind::Test => slots <= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(HarvestError::InvalidTemplate {
                id: self.id.clone(),
                message: format!(
                    "expected {} slot placeholder, found {slots}",
                    match self.kind {
                        TemplateKind::Test => "at most one",
                        _ => "exactly one",
                    }
                ),
            })
        }
    }
}

/// Substitutes `value` for the slot placeholder. All other text, including
/// other brace sequences, is kept literally.
pub fn render_prompt(
    template: &PromptTemplate,
    value: Option<&str>,
) -> Result<String, HarvestError> {
    let has_slot = template.text.contains(SLOT);
    match (has_slot, value) {
        (true, Some(v)) => Ok(template.text.replace(SLOT, v)),
        (false, None) => Ok(template.text.clone()),
        (true, None) => Err(HarvestError::MissingSlotValue {
            template: template.id.clone(),
        }),
        (false, Some(_)) => Err(HarvestError::UnusedSlotValue {
            template: template.id.clone(),
        }),
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    #[serde(default)]
    templates: Vec<PromptTemplate>,
}

/// Loads `[[templates]]` from a TOML file and validates each entry.
pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, HarvestError> {
    let raw = std::fs::read_to_string(path).map_err(|e| HarvestError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let file: TemplateFile = toml::from_str(&raw).map_err(|e| HarvestError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut seen = std::collections::HashSet::new();
    for template in &file.templates {
        template.validate()?;
        if !seen.insert(template.id.clone()) {
            return Err(HarvestError::Config {
                path: path.to_owned(),
                message: format!("duplicate template id {}", template.id),
            });
        }
    }
    Ok(file.templates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub index: usize,
    pub model_id: String,
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_value: Option<String>,
    pub replicate: u32,
    pub temperature: f64,
    /// Passed to the endpoint so stochastic backends can be replayed.
    pub task_seed: u64,
}

/// Plans `models × slots × replicates` tasks in that nesting order. Each
/// task draws a template (uniform, with replacement), a temperature in
/// [0, 1], and a task seed from the one seeded RNG, so a given seed always
/// yields the identical plan.
pub fn plan_tasks(
    models: &[String],
    templates: &[PromptTemplate],
    slots: &[String],
    replicates: u32,
    seed: u64,
) -> Result<Vec<GenerationTask>, HarvestError> {
    if templates.is_empty() {
        return Err(HarvestError::EmptyTemplates);
    }
    if replicates == 0 {
        return Err(HarvestError::InvalidReplicates);
    }
    for template in templates {
        template.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(models.len() * slots.len() * replicates as usize);
    for model in models {
        for slot in slots {
            for replicate in 0..replicates {
                let template = &templates[rng.gen_range(0..templates.len())];
                tasks.push(GenerationTask {
                    index: tasks.len(),
                    model_id: model.clone(),
                    template_id: template.id.clone(),
                    slot_value: Some(slot.clone()),
                    replicate,
                    temperature: rng.gen_range(0.0..=1.0),
                    task_seed: rng.gen(),
                });
            }
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    /// Substantive completion.
    Ok,
    /// The model declined to answer.
    Refused,
    /// Request failed after retries; not cached, retried next run.
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub task: GenerationTask,
    pub response_text: String,
    pub endpoint: String,
    pub timestamp: DateTime<Utc>,
    pub status: ResponseStatus,
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_base_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Provider-side model name sent in the request body.
    pub model: String,
    /// Environment variable holding the bearer token; the value itself is
    /// never written to task or record files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_sec: Option<f64>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub status: ResponseStatus,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

/// Disk cache of completed responses, one JSON file per key (named by the
/// key's SHA-256). Only `Ok` and `Refused` outcomes belong here, so a
/// rerun re-attempts exactly the transport failures.
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: &Path) -> Result<Self, HarvestError> {
        std::fs::create_dir_all(dir).map_err(|e| HarvestError::Io {
            path: dir.to_owned(),
            source: e,
        })?;
        Ok(Cache {
            dir: dir.to_owned(),
        })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sha256_hex(key)))
    }

    /// Missing or unreadable entries read as absent and get re-fetched.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let raw = std::fs::read_to_string(self.entry_path(key)).ok()?;
        serde_json::from_str(&raw).ok()
    }

    pub fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), HarvestError> {
        debug_assert_ne!(entry.status, ResponseStatus::TransportError);
        static NONCE: AtomicU64 = AtomicU64::new(0);
        let path = self.entry_path(key);
        // The temp name must be unique per call: concurrent writers of the
        // same key would otherwise share it, and whichever rename runs second
        // finds the file already gone. Distinct temp files make the final
        // renames atomic last-writer-wins.
        let tmp = path.with_extension(format!(
            "{}-{}.tmp",
            std::process::id(),
            NONCE.fetch_add(1, Ordering::Relaxed)
        ));
        let io_err = |e: std::io::Error| HarvestError::Io {
            path: path.clone(),
            source: e,
        };
        let body = serde_json::to_string(entry).expect("cache entries serialize");
        std::fs::write(&tmp, body).map_err(io_err)?;
        std::fs::rename(&tmp, &path).map_err(io_err)
    }
}

/// One pending chat call.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub cache_key: String,
    pub prompt: String,
    pub temperature: f64,
    /// Forwarded to the endpoint for backends that honor sampling seeds.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatOutcome {
    pub text: String,
    pub status: ResponseStatus,
    pub timestamp: DateTime<Utc>,
}

#[derive(Deserialize)]
struct ChatCompletion {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

enum Attempt {
    Done(ChatOutcome),
    /// Rate limits, server errors, transport failures, unparseable bodies.
    Retry(String),
    /// Non-retryable client error; becomes a transport-error outcome.
    Fail(String),
}

/// Issues chat calls for one endpoint with rate limiting and retries.
pub struct Executor {
    agent: ureq::Agent,
    url: String,
    model: String,
    credential: Option<String>,
    min_interval: Option<Duration>,
    next_slot: Mutex<Instant>,
    max_retries: u32,
    retry_base_ms: u64,
}

impl Executor {
    pub fn new(config: &EndpointConfig) -> Result<Self, HarvestError> {
        if !(config.url.starts_with("http://") || config.url.starts_with("https://")) {
            return Err(HarvestError::InvalidUrl {
                url: config.url.clone(),
            });
        }
        let credential = match &config.credential_env {
            None => None,
            Some(env) => Some(
                std::env::var(env)
                    .ok()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| HarvestError::MissingCredential { env: env.clone() })?,
            ),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let min_interval = config
            .rate_limit_per_sec
            .filter(|r| *r > 0.0)
            .map(|r| Duration::from_secs_f64(1.0 / r));
        Ok(Executor {
            agent,
            url: config.url.clone(),
            model: config.model.clone(),
            credential,
            min_interval,
            next_slot: Mutex::new(Instant::now()),
            max_retries: config.max_retries,
            retry_base_ms: config.retry_base_ms,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Blocks until this call's rate-limit slot arrives.
    fn pace(&self) {
        let Some(interval) = self.min_interval else {
            return;
        };
        let now = Instant::now();
        let slot = {
            let mut next = self.next_slot.lock().expect("rate limiter lock");
            let slot = (*next).max(now);
            *next = slot + interval;
            slot
        };
        let wait = slot.saturating_duration_since(now);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<Attempt, HarvestError> {
        self.pace();
        let mut post = self.agent.post(&self.url);
        if let Some(credential) = &self.credential {
            post = post.header("Authorization", format!("Bearer {credential}"));
        }
        let sent = post.send_json(serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "seed": request.seed,
        }));
        let mut response = match sent {
            Ok(response) => response,
            Err(e) => return Ok(Attempt::Retry(format!("transport: {e}"))),
        };
        let status = response.status().as_u16();
        match status {
            401 | 403 => Err(HarvestError::AuthRejected { status }),
            200..=299 => {
                let completion: ChatCompletion = match response.body_mut().read_json() {
                    Ok(c) => c,
                    Err(e) => return Ok(Attempt::Retry(format!("unparseable body: {e}"))),
                };
                let Some(choice) = completion.choices.into_iter().next() else {
                    return Ok(Attempt::Retry("response had no choices".into()));
                };
                let content = choice.message.content.unwrap_or_default();
                let outcome = if content.is_empty() {
                    ChatOutcome {
                        text: choice.message.refusal.unwrap_or_default(),
                        status: ResponseStatus::Refused,
                        timestamp: Utc::now(),
                    }
                } else {
                    ChatOutcome {
                        text: content,
                        status: ResponseStatus::Ok,
                        timestamp: Utc::now(),
                    }
                };
                Ok(Attempt::Done(outcome))
            }
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"))),
            _ => Ok(Attempt::Fail(format!("HTTP {status}"))),
        }
    }

    /// One request through the retry loop. `Err` only for fatal auth
    /// rejections; everything else resolves to an outcome.
    fn fetch(&self, request: &ChatRequest) -> Result<ChatOutcome, HarvestError> {
        let mut last_problem = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let backoff = self.retry_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(request)? {
                Attempt::Done(outcome) => return Ok(outcome),
                Attempt::Fail(problem) => {
                    return Ok(ChatOutcome {
                        text: problem,
                        status: ResponseStatus::TransportError,
                        timestamp: Utc::now(),
                    })
                }
                Attempt::Retry(problem) => {
                    log::warn!("attempt {attempt} failed ({problem}); will retry");
                    last_problem = problem;
                }
            }
        }
        Ok(ChatOutcome {
            text: format!("retries exhausted: {last_problem}"),
            status: ResponseStatus::TransportError,
            timestamp: Utc::now(),
        })
    }

    /// Resolves every request, serving cache hits without network traffic
    /// and fanning misses out over up to `concurrency` worker threads.
    /// Results keep the input order. Fatal auth errors abort the run.
    pub fn run(
        &self,
        requests: &[ChatRequest],
        cache: &Cache,
        concurrency: usize,
    ) -> Result<Vec<ChatOutcome>, HarvestError> {
        let mut outcomes: Vec<Option<ChatOutcome>> = Vec::with_capacity(requests.len());
        let mut misses = VecDeque::new();
        // Requests with the same cache key are fetched once; the rest of the
        // batch shares the outcome (judge batches repeat prompts verbatim
        // whenever the upstream responses repeat).
        let mut first_with_key: HashMap<&str, usize> = HashMap::new();
        let mut followers: HashMap<usize, Vec<usize>> = HashMap::new();
        for (idx, request) in requests.iter().enumerate() {
            match cache.get(&request.cache_key) {
                Some(entry) => outcomes.push(Some(ChatOutcome {
                    text: entry.text,
                    status: entry.status,
                    timestamp: entry.timestamp,
                })),
                None => {
                    outcomes.push(None);
                    match first_with_key.entry(&request.cache_key) {
                        std::collections::hash_map::Entry::Occupied(first) => {
                            followers.entry(*first.get()).or_default().push(idx);
                        }
                        std::collections::hash_map::Entry::Vacant(slot) => {
                            slot.insert(idx);
                            misses.push_back(idx);
                        }
                    }
                }
            }
        }
        if misses.is_empty() {
            return Ok(outcomes.into_iter().map(|o| o.expect("all hits")).collect());
        }

        let workers = concurrency.max(1).min(misses.len());
        let queue = Mutex::new(misses);
        let fetched: Mutex<Vec<(usize, ChatOutcome)>> = Mutex::new(Vec::new());
        let fatal: Mutex<Option<HarvestError>> = Mutex::new(None);
        let abort = AtomicBool::new(false);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let idx = queue.lock().expect("queue lock").pop_front();
                    let Some(idx) = idx else { break };
                    let result = self.fetch(&requests[idx]).and_then(|outcome| {
                        if outcome.status != ResponseStatus::TransportError {
                            cache.put(
                                &requests[idx].cache_key,
                                &CacheEntry {
                                    status: outcome.status,
                                    text: outcome.text.clone(),
                                    timestamp: outcome.timestamp,
                                },
                            )?;
                        }
                        Ok(outcome)
                    });
                    match result {
                        Ok(outcome) => fetched.lock().expect("results lock").push((idx, outcome)),
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            let mut slot = fatal.lock().expect("fatal lock");
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = fatal.into_inner().expect("fatal lock") {
            return Err(e);
        }
        for (idx, outcome) in fetched.into_inner().expect("results lock") {
            if let Some(extra) = followers.get(&idx) {
                for &dup in extra {
                    outcomes[dup] = Some(outcome.clone());
                }
            }
            outcomes[idx] = Some(outcome);
        }
        Ok(outcomes
            .into_iter()
            .map(|o| o.expect("every miss was fetched"))
            .collect())
    }
}

/// Cache key for a generation task; stable across runs so reruns hit.
pub fn generation_cache_key(task: &GenerationTask) -> String {
    format!(
        "gen|{}|{}|{}|{}|{}",
        task.model_id,
        task.template_id,
        task.slot_value.as_deref().unwrap_or(""),
        task.replicate,
        task.task_seed
    )
}

/// Renders and executes `tasks` against one endpoint, returning records
/// sorted by task index. The endpoint's URL is recorded on each record;
/// credentials never are.
pub fn execute(
    tasks: &[GenerationTask],
    templates: &[PromptTemplate],
    config: &EndpointConfig,
    cache: &Cache,
    concurrency: usize,
) -> Result<Vec<GenerationRecord>, HarvestError> {
    let by_id: HashMap<&str, &PromptTemplate> = templates
        .iter()
        .map(|t| (t.id.as_str(), t))
        .collect();
    let mut requests = Vec::with_capacity(tasks.len());
    for task in tasks {
        let template = by_id
            .get(task.template_id.as_str())
            .ok_or_else(|| HarvestError::UnknownTemplate {
                id: task.template_id.clone(),
            })?;
        requests.push(ChatRequest {
            cache_key: generation_cache_key(task),
            prompt: render_prompt(template, task.slot_value.as_deref())?,
            temperature: task.temperature,
            seed: Some(task.task_seed),
        });
    }
    let executor = Executor::new(config)?;
    let outcomes = executor.run(&requests, cache, concurrency)?;
    let mut records: Vec<GenerationRecord> = tasks
        .iter()
        .zip(outcomes)
        .map(|(task, outcome)| GenerationRecord {
            task: task.clone(),
            response_text: outcome.text,
            endpoint: config.url.clone(),
            timestamp: outcome.timestamp,
            status: outcome.status,
        })
        .collect();
    records.sort_by_key(|r| r.task.index);
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureCategory {
    President,
    Senator,
    Governor,
    Justice,
    Journalist,
    WesternLeader,
}

/// Public alignment used when splitting sentiment by side; `Center`
/// figures are annotated but sit out the left/right comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Right,
    Center,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicFigure {
    pub name: String,
    pub category: FigureCategory,
    pub alignment: Alignment,
}

/// Reads a `name,category,alignment` CSV.
pub fn load_figures(path: &Path) -> Result<Vec<PublicFigure>, HarvestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarvestError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut figures = Vec::new();
    for (idx, row) in reader.deserialize::<PublicFigure>().enumerate() {
        let figure = row.map_err(|e| HarvestError::Parse {
            path: path.to_owned(),
            line: idx + 2,
            message: e.to_string(),
        })?;
        figures.push(figure);
    }
    Ok(figures)
}

pub fn write_tasks(path: &Path, tasks: &[GenerationTask]) -> Result<(), HarvestError> {
    jsonl::write_rows(path, tasks).map_err(|e| HarvestError::Io {
        path: path.to_owned(),
        source: e,
    })
}

pub fn read_tasks(path: &Path) -> Result<Vec<GenerationTask>, HarvestError> {
    jsonl::read_rows(path).map_err(|e| row_error(path, e))
}

pub fn write_records(path: &Path, records: &[GenerationRecord]) -> Result<(), HarvestError> {
    jsonl::write_rows(path, records).map_err(|e| HarvestError::Io {
        path: path.to_owned(),
        source: e,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<GenerationRecord>, HarvestError> {
    jsonl::read_rows(path).map_err(|e| row_error(path, e))
}

fn row_error(path: &Path, e: RowError) -> HarvestError {
    match e {
        RowError::Io(source) => HarvestError::Io {
            path: path.to_owned(),
            source,
        },
        RowError::Parse { line, message } => HarvestError::Parse {
            path: path.to_owned(),
            line,
            message,
        },
    }
}
