//! Combines the four method scores into one cross-method ranking.
//!
//! Each method's per-model scores are z-normalized over the ranked models,
//! the four z-scores are averaged into a combined score, and models are
//! ranked by |combined| ascending — rank 1 is the least slanted. The sign
//! of `combined` still carries direction: negative leans left, positive
//! leans right. Models missing any method are excluded and reported, not
//! silently filled in.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{self, AnnotateError, AsymmetryRow, GroupMean};
use crate::politests::{self, ModelAxes, PolitestError};
use crate::slant::{self, SlantError, UnitScore};
use crate::stats::{pearson, zscore_normalize, StatsError};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("duplicate {method} score for model {model_id}")]
    DuplicateScore { model_id: String, method: Method },
    #[error("need at least 2 models with all four methods, have {complete}")]
    TooFewModels { complete: usize },
    #[error("need at least 3 rated units in common, have {have}")]
    TooFewValidationUnits { have: usize },
    #[error("unknown bias rating {label}")]
    UnknownRating { label: String },
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Slant(#[from] SlantError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Politest(#[from] PolitestError),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Partisan-bigram divergence delta (negative = Democrat-like usage).
    Slant,
    /// Mean viewpoint label of policy generations.
    Viewpoint,
    /// Sentiment gap, mean toward right-aligned minus left-aligned figures.
    Sentiment,
    /// Mean of the economic and social orientation-test axes.
    Tests,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Slant,
        Method::Viewpoint,
        Method::Sentiment,
        Method::Tests,
    ];

    fn index(self) -> usize {
        match self {
            Method::Slant => 0,
            Method::Viewpoint => 1,
            Method::Sentiment => 2,
            Method::Tests => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Slant => "slant",
            Method::Viewpoint => "viewpoint",
            Method::Sentiment => "sentiment",
            Method::Tests => "tests",
        })
    }
}

/// One model's score under one method, oriented so that negative leans
/// left and positive leans right.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub model_id: String,
    pub method: Method,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub rank: usize,
    pub model_id: String,
    pub z_slant: f64,
    pub z_viewpoint: f64,
    pub z_sentiment: f64,
    pub z_tests: f64,
    pub combined: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedModel {
    pub model_id: String,
    pub missing: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRanking {
    /// Sorted by (magnitude, model id); rank 1 is least slanted.
    pub rows: Vec<RankingRow>,
    /// Models dropped for missing methods, sorted by model id.
    pub excluded: Vec<ExcludedModel>,
    /// Methods whose scores did not vary across models (z-scores all 0).
    pub zero_variance: Vec<Method>,
}

/// Folds per-method scores into the combined ranking. Only models with
/// all four methods are ranked; at least two are required so the
/// z-normalization is meaningful.
pub fn combine(scores: &[MethodScore]) -> Result<AggregateRanking, AggregateError> {
    let mut by_model: HashMap<&str, [Option<f64>; 4]> = HashMap::new();
    for score in scores {
        let slot = &mut by_model.entry(&score.model_id).or_default()[score.method.index()];
        if slot.is_some() {
            return Err(AggregateError::DuplicateScore {
                model_id: score.model_id.clone(),
                method: score.method,
            });
        }
        *slot = Some(score.value);
    }

    let mut complete: Vec<&str> = Vec::new();
    let mut excluded: Vec<ExcludedModel> = Vec::new();
    for (model, values) in &by_model {
        let missing: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| values[m.index()].is_none())
            .collect();
        if missing.is_empty() {
            complete.push(model);
        } else {
            excluded.push(ExcludedModel {
                model_id: (*model).to_owned(),
                missing,
            });
        }
    }
    complete.sort_unstable();
    excluded.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    if complete.len() < 2 {
        return Err(AggregateError::TooFewModels {
            complete: complete.len(),
        });
    }

    let mut zero_variance = Vec::new();
    let mut z_columns: [Vec<f64>; 4] = Default::default();
    for method in Method::ALL {
        let column: Vec<f64> = complete
            .iter()
            .map(|m| by_model[m][method.index()].expect("complete model"))
            .collect();
        let normalized = zscore_normalize(&column)?;
        if normalized.zero_variance {
            zero_variance.push(method);
        }
        z_columns[method.index()] = normalized.values;
    }

    let mut rows: Vec<RankingRow> = complete
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let z = [
                z_columns[0][i],
                z_columns[1][i],
                z_columns[2][i],
                z_columns[3][i],
            ];
            let combined = z.iter().sum::<f64>() / 4.0;
            RankingRow {
                rank: 0,
                model_id: (*model).to_owned(),
                z_slant: z[0],
                z_viewpoint: z[1],
                z_sentiment: z[2],
                z_tests: z[3],
                combined,
                magnitude: combined.abs(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.magnitude
            .total_cmp(&b.magnitude)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(AggregateRanking {
        rows,
        excluded,
        zero_variance,
    })
}

/// Published outlet bias rating on the five-point left-right scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiasRating {
    Left,
    LeanLeft,
    Center,
    LeanRight,
    Right,
}

impl BiasRating {
    /// −2 (left) through +2 (right).
    pub fn code(self) -> i8 {
        match self {
            BiasRating::Left => -2,
            BiasRating::LeanLeft => -1,
            BiasRating::Center => 0,
            BiasRating::LeanRight => 1,
            BiasRating::Right => 2,
        }
    }
}

impl FromStr for BiasRating {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized: String = s
            .to_lowercase()
            .chars()
            .map(|c| if c == '-' || c == '_' { ' ' } else { c })
            .collect();
        match normalized.split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
            "left" => Ok(BiasRating::Left),
            "lean left" => Ok(BiasRating::LeanLeft),
            "center" => Ok(BiasRating::Center),
            "lean right" => Ok(BiasRating::LeanRight),
            "right" => Ok(BiasRating::Right),
            _ => Err(AggregateError::UnknownRating {
                label: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for BiasRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasRating::Left => "left",
            BiasRating::LeanLeft => "lean left",
            BiasRating::Center => "center",
            BiasRating::LeanRight => "lean right",
            BiasRating::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub unit: String,
    pub rating: BiasRating,
    pub code: i8,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Pearson correlation between rating codes and slant deltas.
    pub r: f64,
    pub n: usize,
    pub rows: Vec<ValidationRow>,
}

/// Correlates measured slant deltas with published ratings over the units
/// both sides know. Needs at least 3 shared units.
pub fn validate_against_ratings(
    deltas: &HashMap<String, f64>,
    ratings: &HashMap<String, BiasRating>,
) -> Result<ValidationReport, AggregateError> {
    let shared: BTreeSet<&str> = deltas
        .keys()
        .map(String::as_str)
        .filter(|u| ratings.contains_key(*u))
        .collect();
    if shared.len() < 3 {
        return Err(AggregateError::TooFewValidationUnits { have: shared.len() });
    }
    let rows: Vec<ValidationRow> = shared
        .iter()
        .map(|unit| {
            let rating = ratings[*unit];
            ValidationRow {
                unit: (*unit).to_owned(),
                rating,
                code: rating.code(),
                delta: deltas[*unit],
            }
        })
        .collect();
    let codes: Vec<f64> = rows.iter().map(|r| r.code as f64).collect();
    let measured: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let r = pearson(&codes, &measured)?;
    Ok(ValidationReport {
        r,
        n: rows.len(),
        rows,
    })
}

/// Load published ratings: CSV with columns `unit,rating`, where the rating
/// is a [`BiasRating`] spelling such as `lean_left` or `Lean Left`.
pub fn read_ratings_csv(path: &Path) -> Result<HashMap<String, BiasRating>, AggregateError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut ratings = HashMap::new();
    for record in reader.deserialize() {
        let (unit, label): (String, String) = record.map_err(csv_err(path))?;
        ratings.insert(unit, label.parse::<BiasRating>()?);
    }
    Ok(ratings)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AggregateError + '_ {
    move |e| AggregateError::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AggregateError + '_ {
    move |e| AggregateError::Io {
        path: path.to_owned(),
        source: e,
    }
}

pub fn write_ranking_csv(path: &Path, ranking: &AggregateRanking) -> Result<(), AggregateError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record([
            "rank",
            "model",
            "z_slant",
            "z_viewpoint",
            "z_sentiment",
            "z_tests",
            "combined",
            "magnitude",
        ])
        .map_err(csv_err(path))?;
    for row in &ranking.rows {
        writer
            .write_record([
                row.rank.to_string(),
                row.model_id.clone(),
                row.z_slant.to_string(),
                row.z_viewpoint.to_string(),
                row.z_sentiment.to_string(),
                row.z_tests.to_string(),
                row.combined.to_string(),
                row.magnitude.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn write_validation_csv(path: &Path, report: &ValidationReport) -> Result<(), AggregateError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer
        .write_record(["unit", "rating", "code", "delta"])
        .map_err(csv_err(path))?;
    for row in &report.rows {
        writer
            .write_record([
                row.unit.clone(),
                row.rating.to_string(),
                row.code.to_string(),
                row.delta.to_string(),
            ])
            .map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Deterministic horizontal bar chart of combined scores, rank order top
/// to bottom; left-leaning bars extend left of the center line.
fn render_ranking_svg(ranking: &AggregateRanking) -> String {
    const BAR_H: usize = 24;
    const GAP: usize = 12;
    const LABEL_W: usize = 170;
    const CHART_W: usize = 400;
    const MARGIN: usize = 20;

    let rows = &ranking.rows;
    let height = MARGIN * 2 + rows.len() * (BAR_H + GAP);
    let width = LABEL_W + CHART_W + MARGIN * 2;
    let center = (LABEL_W + MARGIN + CHART_W / 2) as f64;
    let max_magnitude = rows
        .iter()
        .map(|r| r.magnitude)
        .fold(f64::MIN_POSITIVE, f64::max);
    let scale = (CHART_W as f64 / 2.0 - 4.0) / max_magnitude;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{center:.2}\" y1=\"{MARGIN}\" x2=\"{center:.2}\" y2=\"{}\" stroke=\"#999999\" stroke-width=\"1\"/>\n",
        height - MARGIN
    ));
    for (i, row) in rows.iter().enumerate() {
        let y = MARGIN + i * (BAR_H + GAP);
        let bar_len = row.combined.abs() * scale;
        let (x, color) = if row.combined < 0.0 {
            (center - bar_len, "#3b6bd6")
        } else {
            (center, "#d64a3b")
        };
        svg.push_str(&format!(
            "  <text x=\"{MARGIN}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\">{}. {}</text>\n",
            y + BAR_H / 2 + 4,
            row.rank,
            xml_escape(&row.model_id)
        ));
        svg.push_str(&format!(
            "  <rect x=\"{x:.2}\" y=\"{y}\" width=\"{bar_len:.2}\" height=\"{BAR_H}\" fill=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"#333333\">{:+.3}</text>\n",
            center + CHART_W as f64 / 2.0 + 2.0 - 38.0,
            y + BAR_H / 2 + 4,
            row.combined
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Everything the final report can carry; optional sections that are
/// `None` or empty are omitted from the output directory.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportSections<'a> {
    pub slant_units: Option<&'a [UnitScore]>,
    pub viewpoints: Option<&'a [GroupMean]>,
    pub sentiment: Option<&'a [AsymmetryRow]>,
    pub tests: Option<&'a [ModelAxes]>,
    pub validation: Option<&'a ValidationReport>,
}

/// Writes the report directory: `ranking.csv`, `ranking.svg`,
/// `metadata.txt`, and whichever optional sections are present. Returns
/// the written paths. Output depends only on the inputs, so identical
/// inputs produce byte-identical files.
pub fn emit_report(
    dir: &Path,
    ranking: &AggregateRanking,
    sections: ReportSections,
) -> Result<Vec<PathBuf>, AggregateError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut omitted: Vec<&str> = Vec::new();

    let ranking_csv = dir.join("ranking.csv");
    write_ranking_csv(&ranking_csv, ranking)?;
    written.push(ranking_csv);

    match sections.slant_units.filter(|s| !s.is_empty()) {
        Some(units) => {
            let path = dir.join("slant.csv");
            slant::write_units_csv(&path, units)?;
            written.push(path);
        }
        None => omitted.push("slant.csv"),
    }
    match sections.viewpoints.filter(|s| !s.is_empty()) {
        Some(rows) => {
            let path = dir.join("viewpoints.csv");
            annotate::write_group_means_csv(&path, rows)?;
            written.push(path);
        }
        None => omitted.push("viewpoints.csv"),
    }
    match sections.sentiment.filter(|s| !s.is_empty()) {
        Some(rows) => {
            let path = dir.join("sentiment.csv");
            annotate::write_asymmetry_csv(&path, rows)?;
            written.push(path);
        }
        None => omitted.push("sentiment.csv"),
    }
    match sections.tests.filter(|s| !s.is_empty()) {
        Some(rows) => {
            let path = dir.join("tests.csv");
            politests::write_summary_csv(&path, rows)?;
            written.push(path);
        }
        None => omitted.push("tests.csv"),
    }
    match sections.validation.filter(|v| !v.rows.is_empty()) {
        Some(report) => {
            let path = dir.join("validation.csv");
            write_validation_csv(&path, report)?;
            written.push(path);
        }
        None => omitted.push("validation.csv"),
    }

    let svg_path = dir.join("ranking.svg");
    std::fs::write(&svg_path, render_ranking_svg(ranking)).map_err(io_err(&svg_path))?;
    written.push(svg_path);

    let mut metadata = String::new();
    metadata.push_str(
        "ranking key: |combined| of the four per-method z-scores, ascending; \
         rank 1 is least slanted. The sign of `combined` gives direction \
         (negative = left-leaning, positive = right-leaning).\n",
    );
    metadata.push_str(&format!("models ranked: {}\n", ranking.rows.len()));
    if ranking.excluded.is_empty() {
        metadata.push_str("models excluded: none\n");
    } else {
        for excluded in &ranking.excluded {
            let missing: Vec<String> =
                excluded.missing.iter().map(Method::to_string).collect();
            metadata.push_str(&format!(
                "models excluded: {} (missing: {})\n",
                excluded.model_id,
                missing.join(", ")
            ));
        }
    }
    if ranking.zero_variance.is_empty() {
        metadata.push_str("zero-variance methods: none\n");
    } else {
        let methods: Vec<String> = ranking
            .zero_variance
            .iter()
            .map(Method::to_string)
            .collect();
        metadata.push_str(&format!(
            "zero-variance methods: {} (z-scores forced to 0)\n",
            methods.join(", ")
        ));
    }
    match sections.validation {
        Some(report) => metadata.push_str(&format!(
            "validation: r = {} over {} units\n",
            report.r, report.n
        )),
        None => metadata.push_str("validation: not run\n"),
    }
    if !omitted.is_empty() {
        metadata.push_str(&format!("sections omitted: {}\n", omitted.join(", ")));
    }
    let metadata_path = dir.join("metadata.txt");
    std::fs::write(&metadata_path, metadata).map_err(io_err(&metadata_path))?;
    written.push(metadata_path);

    Ok(written)
}
