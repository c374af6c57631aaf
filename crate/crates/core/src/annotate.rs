//! Judge-model annotation of harvested text.
//!
//! A judge endpoint labels policy text with a political viewpoint and
//! figure-directed text with a sentiment, and maps free-form test answers
//! onto a fixed answer set. Labels carry both the categorical value and its
//! numeric code (left/negative −1, centrist/neutral 0, right/positive +1).
//! Unparseable, refused, or failed judgments count as annotation failures
//! and are excluded from aggregation rather than guessed at.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harvest::{
    Alignment, Cache, ChatRequest, Executor, HarvestError, ResponseStatus,
};
use crate::jsonl::{self, RowError};
use crate::stats::{welch_t_test, StatsError, WelchTTest};

#[derive(Debug, Error)]
pub enum AnnotateError {
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
    #[error("rubric {file} is missing the {placeholder} placeholder")]
    MissingPlaceholder { file: String, placeholder: String },
    #[error("cannot annotate empty text")]
    EmptyText,
    #[error("stance detection needs a non-empty answer set")]
    EmptyAnswers,
    #[error("group {group} has no valid labels")]
    EmptyGroup { group: String },
    #[error("model {model} has no valid {side}-aligned labels")]
    MissingAlignmentGroup { model: String, side: String },
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    Left,
    Centrist,
    Right,
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Viewpoint::Left => "left",
            Viewpoint::Centrist => "centrist",
            Viewpoint::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewpointLabel {
    pub categorical: Viewpoint,
    /// −1 left, 0 centrist, +1 right.
    pub numeric: i8,
}

impl From<Viewpoint> for ViewpointLabel {
    fn from(categorical: Viewpoint) -> Self {
        let numeric = match categorical {
            Viewpoint::Left => -1,
            Viewpoint::Centrist => 0,
            Viewpoint::Right => 1,
        };
        ViewpointLabel {
            categorical,
            numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentLabel {
    pub categorical: Sentiment,
    /// −1 negative, 0 neutral, +1 positive.
    pub numeric: i8,
}

/// A parsed judge label together with the raw judge output it came from,
/// kept for auditing. `label` is `None` when the output parsed to nothing
/// (including refusals and transport failures).
#[derive(Debug, Clone, PartialEq)]
pub struct Annotated<T> {
    pub label: Option<T>,
    pub raw: String,
}

impl From<Sentiment> for SentimentLabel {
    fn from(categorical: Sentiment) -> Self {
        let numeric = match categorical {
            Sentiment::Negative => -1,
            Sentiment::Neutral => 0,
            Sentiment::Positive => 1,
        };
        SentimentLabel {
            categorical,
            numeric,
        }
    }
}

/// Trim, lowercase, and drop one trailing period — the judge is told to
/// answer with a single word, and this absorbs the common deviations.
pub(crate) fn normalize_answer(raw: &str) -> String {
    let trimmed = raw.trim().to_lowercase();
    trimmed
        .strip_suffix('.')
        .map(str::to_owned)
        .unwrap_or(trimmed)
}

/// `None` when the judge's output is not a recognizable viewpoint word.
pub fn parse_viewpoint(raw: &str) -> Option<ViewpointLabel> {
    let answer = normalize_answer(raw);
    let categorical = match answer.as_str() {
        "left" | "left-leaning" => Viewpoint::Left,
        "centrist" => Viewpoint::Centrist,
        "right" | "right-leaning" => Viewpoint::Right,
        _ => return None,
    };
    Some(categorical.into())
}

/// `None` when the judge's output is not a recognizable sentiment word.
pub fn parse_sentiment(raw: &str) -> Option<SentimentLabel> {
    let answer = normalize_answer(raw);
    let categorical = match answer.as_str() {
        "negative" => Sentiment::Negative,
        "neutral" => Sentiment::Neutral,
        "positive" => Sentiment::Positive,
        _ => return None,
    };
    Some(categorical.into())
}

/// The judge's mapping of a free-form response onto an answer set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceResult {
    /// Canonical allowed answer, or `None` when the response picks nothing.
    pub chosen: Option<String>,
    pub raw_judge_output: String,
}

/// Case-insensitively matches the judge's output against `allowed`,
/// returning the answer in its canonical spelling.
pub fn detect_stance(allowed: &[String], raw: &str) -> Result<Option<String>, AnnotateError> {
    if allowed.is_empty() {
        return Err(AnnotateError::EmptyAnswers);
    }
    let answer = normalize_answer(raw);
    Ok(allowed
        .iter()
        .find(|a| normalize_answer(a) == answer)
        .cloned())
}

const VIEWPOINT_FILE: &str = "viewpoint.txt";
const SENTIMENT_FILE: &str = "sentiment.txt";
const STANCE_FILE: &str = "stance.txt";

/// Judge instructions, one file per annotation kind. The viewpoint rubric
/// embeds `{text}`, sentiment embeds `{figure}` and `{text}`, and stance
/// embeds `{answers}` and `{response}`.
#[derive(Debug, Clone)]
pub struct Rubrics {
    viewpoint: String,
    sentiment: String,
    stance: String,
}

impl Rubrics {
    pub fn load(dir: &Path) -> Result<Self, AnnotateError> {
        let read = |file: &str| -> Result<String, AnnotateError> {
            let path = dir.join(file);
            std::fs::read_to_string(&path).map_err(|e| AnnotateError::Io { path, source: e })
        };
        let require = |file: &str, body: &str, placeholder: &str| -> Result<(), AnnotateError> {
            if body.contains(placeholder) {
                Ok(())
            } else {
                Err(AnnotateError::MissingPlaceholder {
                    file: file.to_owned(),
                    placeholder: placeholder.to_owned(),
                })
            }
        };
        let viewpoint = read(VIEWPOINT_FILE)?;
        require(VIEWPOINT_FILE, &viewpoint, "{text}")?;
        let sentiment = read(SENTIMENT_FILE)?;
        require(SENTIMENT_FILE, &sentiment, "{figure}")?;
        require(SENTIMENT_FILE, &sentiment, "{text}")?;
        let stance = read(STANCE_FILE)?;
        require(STANCE_FILE, &stance, "{answers}")?;
        require(STANCE_FILE, &stance, "{response}")?;
        Ok(Rubrics {
            viewpoint,
            sentiment,
            stance,
        })
    }

    pub fn viewpoint_prompt(&self, text: &str) -> Result<String, AnnotateError> {
        if text.trim().is_empty() {
            return Err(AnnotateError::EmptyText);
        }
        Ok(self.viewpoint.replace("{text}", text))
    }

    pub fn sentiment_prompt(&self, figure: &str, text: &str) -> Result<String, AnnotateError> {
        if text.trim().is_empty() {
            return Err(AnnotateError::EmptyText);
        }
        Ok(self
            .sentiment
            .replace("{figure}", figure)
            .replace("{text}", text))
    }

    pub fn stance_prompt(&self, allowed: &[String], response: &str) -> Result<String, AnnotateError> {
        if allowed.is_empty() {
            return Err(AnnotateError::EmptyAnswers);
        }
        Ok(self
            .stance
            .replace("{answers}", &allowed.join(" | "))
            .replace("{response}", response))
    }
}

/// A response-to-classify paired with its allowed answers.
#[derive(Debug, Clone, Copy)]
pub struct StanceQuery<'a> {
    pub allowed: &'a [String],
    pub response: &'a str,
}

/// Annotates text through a judge endpoint at temperature 0, caching by
/// judge model and prompt digest.
pub struct Judge {
    executor: Executor,
    rubrics: Rubrics,
}

impl Judge {
    pub fn new(executor: Executor, rubrics: Rubrics) -> Self {
        Judge { executor, rubrics }
    }

    pub fn model(&self) -> &str {
        self.executor.model()
    }

    pub fn rubrics(&self) -> &Rubrics {
        &self.rubrics
    }

    fn request(&self, kind: &str, prompt: String) -> ChatRequest {
        ChatRequest {
            cache_key: format!(
                "judge|{kind}|{}|{}",
                self.executor.model(),
                crate::harvest::sha256_hex(&prompt)
            ),
            prompt,
            temperature: 0.0,
            seed: None,
        }
    }

    /// Labels each text, `None` where the judge failed, refused, or
    /// answered off-rubric.
    pub fn viewpoint_batch(
        &self,
        texts: &[String],
        cache: &Cache,
        concurrency: usize,
    ) -> Result<Vec<Annotated<ViewpointLabel>>, AnnotateError> {
        let requests = texts
            .iter()
            .map(|text| {
                self.rubrics
                    .viewpoint_prompt(text)
                    .map(|p| self.request("viewpoint", p))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outcomes = self.executor.run(&requests, cache, concurrency)?;
        Ok(outcomes
            .into_iter()
            .map(|o| Annotated {
                label: match o.status {
                    ResponseStatus::Ok => parse_viewpoint(&o.text),
                    _ => None,
                },
                raw: o.text,
            })
            .collect())
    }

    pub fn viewpoint(
        &self,
        text: &str,
        cache: &Cache,
    ) -> Result<Annotated<ViewpointLabel>, AnnotateError> {
        Ok(self
            .viewpoint_batch(std::slice::from_ref(&text.to_owned()), cache, 1)?
            .pop()
            .expect("one label per text"))
    }

    /// Labels sentiment toward each `(figure, text)` pair.
    pub fn sentiment_batch(
        &self,
        items: &[(String, String)],
        cache: &Cache,
        concurrency: usize,
    ) -> Result<Vec<Annotated<SentimentLabel>>, AnnotateError> {
        let requests = items
            .iter()
            .map(|(figure, text)| {
                self.rubrics
                    .sentiment_prompt(figure, text)
                    .map(|p| self.request("sentiment", p))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outcomes = self.executor.run(&requests, cache, concurrency)?;
        Ok(outcomes
            .into_iter()
            .map(|o| Annotated {
                label: match o.status {
                    ResponseStatus::Ok => parse_sentiment(&o.text),
                    _ => None,
                },
                raw: o.text,
            })
            .collect())
    }

    pub fn sentiment(
        &self,
        figure: &str,
        text: &str,
        cache: &Cache,
    ) -> Result<Annotated<SentimentLabel>, AnnotateError> {
        Ok(self
            .sentiment_batch(&[(figure.to_owned(), text.to_owned())], cache, 1)?
            .pop()
            .expect("one label per item"))
    }

    /// Maps each response onto its allowed answers. Blank responses (e.g.
    /// the model refused) short-circuit to no stance without a judge call.
    pub fn stance_batch(
        &self,
        queries: &[StanceQuery],
        cache: &Cache,
        concurrency: usize,
    ) -> Result<Vec<StanceResult>, AnnotateError> {
        let mut requests = Vec::new();
        let mut request_slots = Vec::with_capacity(queries.len());
        for query in queries {
            if query.allowed.is_empty() {
                return Err(AnnotateError::EmptyAnswers);
            }
            if query.response.trim().is_empty() {
                request_slots.push(None);
            } else {
                let prompt = self.rubrics.stance_prompt(query.allowed, query.response)?;
                request_slots.push(Some(requests.len()));
                requests.push(self.request("stance", prompt));
            }
        }
        let outcomes = self.executor.run(&requests, cache, concurrency)?;
        queries
            .iter()
            .zip(request_slots)
            .map(|(query, slot)| {
                let Some(slot) = slot else {
                    return Ok(StanceResult {
                        chosen: None,
                        raw_judge_output: String::new(),
                    });
                };
                let outcome = &outcomes[slot];
                let chosen = match outcome.status {
                    ResponseStatus::Ok => detect_stance(query.allowed, &outcome.text)?,
                    _ => None,
                };
                Ok(StanceResult {
                    chosen,
                    raw_judge_output: outcome.text.clone(),
                })
            })
            .collect()
    }

    pub fn stance(
        &self,
        allowed: &[String],
        response: &str,
        cache: &Cache,
    ) -> Result<StanceResult, AnnotateError> {
        Ok(self
            .stance_batch(&[StanceQuery { allowed, response }], cache, 1)?
            .pop()
            .expect("one result per query"))
    }
}

/// One annotated unit attributed to a group (typically a model id).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub group: String,
    /// `None` marks an annotation failure.
    pub numeric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMean {
    pub group: String,
    pub mean: f64,
    pub n: usize,
    pub failures: usize,
}

/// Means of valid labels per group, sorted by group name. A group whose
/// labels all failed is an error; a high overall failure rate logs a
/// warning.
pub fn aggregate_labels(records: &[LabeledRecord]) -> Result<Vec<GroupMean>, AnnotateError> {
    let mut groups: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    for record in records {
        let entry = groups.entry(&record.group).or_insert((0.0, 0, 0));
        match record.numeric {
            Some(value) => {
                entry.0 += value;
                entry.1 += 1;
            }
            None => entry.2 += 1,
        }
    }
    let total_failures: usize = groups.values().map(|(_, _, f)| f).sum();
    if !records.is_empty() && total_failures as f64 / records.len() as f64 > 0.05 {
        log::warn!(
            "{total_failures} of {} annotations failed; results may be unreliable",
            records.len()
        );
    }
    groups
        .into_iter()
        .map(|(group, (sum, n, failures))| {
            if n == 0 {
                return Err(AnnotateError::EmptyGroup {
                    group: group.to_owned(),
                });
            }
            Ok(GroupMean {
                group: group.to_owned(),
                mean: sum / n as f64,
                n,
                failures,
            })
        })
        .collect()
}

/// A sentiment label attributed to a model and the target's alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLabel {
    pub model: String,
    pub alignment: Alignment,
    pub numeric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryRow {
    pub model: String,
    pub mean_left: f64,
    pub mean_right: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
    pub degenerate: bool,
}

impl AsymmetryRow {
    /// Signed asymmetry: positive means friendlier toward right-aligned
    /// figures.
    pub fn gap(&self) -> f64 {
        self.mean_right - self.mean_left
    }
}

/// Per model, Welch-tests sentiment toward left-aligned vs right-aligned
/// figures (center-aligned ones sit out). `significant` is `p < alpha`,
/// two-tailed. Rows sort by model name.
pub fn sentiment_asymmetry(
    labels: &[AlignedLabel],
    alpha: f64,
) -> Result<Vec<AsymmetryRow>, AnnotateError> {
    let mut by_model: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for label in labels {
        let entry = by_model.entry(&label.model).or_default();
        let Some(value) = label.numeric else { continue };
        match label.alignment {
            Alignment::Left => entry.0.push(value),
            Alignment::Right => entry.1.push(value),
            Alignment::Center => {}
        }
    }
    by_model
        .into_iter()
        .map(|(model, (left, right))| {
            let missing = |side: &str| AnnotateError::MissingAlignmentGroup {
                model: model.to_owned(),
                side: side.to_owned(),
            };
            if left.is_empty() {
                return Err(missing("left"));
            }
            if right.is_empty() {
                return Err(missing("right"));
            }
            let WelchTTest {
                t,
                df,
                p,
                degenerate,
            } = welch_t_test(&left, &right)?;
            Ok(AsymmetryRow {
                model: model.to_owned(),
                mean_left: left.iter().sum::<f64>() / left.len() as f64,
                mean_right: right.iter().sum::<f64>() / right.len() as f64,
                t,
                df,
                p,
                significant: p < alpha,
                degenerate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Viewpoint,
    Sentiment,
}

/// One judge annotation tied back to the generation it labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    /// Index of the generation record this annotates.
    pub record_index: usize,
    pub model_id: String,
    pub kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<i8>,
    /// Raw judge output, kept for auditing failures.
    pub raw: String,
}

pub fn write_annotations(path: &Path, rows: &[AnnotationRow]) -> Result<(), AnnotateError> {
    jsonl::write_rows(path, rows).map_err(|e| AnnotateError::Io {
        path: path.to_owned(),
        source: e,
    })
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRow>, AnnotateError> {
    jsonl::read_rows(path).map_err(|e| match e {
        RowError::Io(source) => AnnotateError::Io {
            path: path.to_owned(),
            source,
        },
        RowError::Parse { line, message } => AnnotateError::Parse {
            path: path.to_owned(),
            line,
            message,
        },
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AnnotateError + '_ {
    move |e| AnnotateError::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub fn write_group_means_csv(path: &Path, rows: &[GroupMean]) -> Result<(), AnnotateError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record(["group", "mean", "n", "failures"])
        .map_err(csv_err(path))?;
    for row in rows {
        writer
            .write_record([
                row.group.clone(),
                row.mean.to_string(),
                row.n.to_string(),
                row.failures.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(|e| AnnotateError::Io {
        path: path.to_owned(),
        source: e,
    })
}

pub fn write_asymmetry_csv(path: &Path, rows: &[AsymmetryRow]) -> Result<(), AnnotateError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record([
            "model",
            "mean_left",
            "mean_right",
            "t",
            "df",
            "p",
            "significant",
            "degenerate",
        ])
        .map_err(csv_err(path))?;
    for row in rows {
        writer
            .write_record([
                row.model.clone(),
                row.mean_left.to_string(),
                row.mean_right.to_string(),
                row.t.to_string(),
                row.df.to_string(),
                row.p.to_string(),
                row.significant.to_string(),
                row.degenerate.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(|e| AnnotateError::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Read back a CSV written by [`write_group_means_csv`].
pub fn read_group_means_csv(path: &Path) -> Result<Vec<GroupMean>, AnnotateError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let (group, mean, n, failures): (String, f64, usize, usize) =
            record.map_err(csv_err(path))?;
        rows.push(GroupMean {
            group,
            mean,
            n,
            failures,
        });
    }
    Ok(rows)
}

/// Read back a CSV written by [`write_asymmetry_csv`].
pub fn read_asymmetry_csv(path: &Path) -> Result<Vec<AsymmetryRow>, AnnotateError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let (model, mean_left, mean_right, t, df, p, significant, degenerate): (
            String,
            f64,
            f64,
            f64,
            f64,
            f64,
            bool,
            bool,
        ) = record.map_err(csv_err(path))?;
        rows.push(AsymmetryRow {
            model,
            mean_left,
            mean_right,
            t,
            df,
            p,
            significant,
            degenerate,
        });
    }
    Ok(rows)
}
