//! Pipeline stages behind the subcommands. Every stage reads inputs named
//! in the config, writes its artifacts under the output directory, and is
//! idempotent given an unchanged cache.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use slantscope::aggregate::{
    self, combine, emit_report, read_ratings_csv, validate_against_ratings, Method, MethodScore,
    ReportSections,
};
use slantscope::annotate::{
    aggregate_labels, read_asymmetry_csv, read_group_means_csv, sentiment_asymmetry,
    write_annotations, write_asymmetry_csv, write_group_means_csv, AlignedLabel, AnnotationKind,
    AnnotationRow, Judge, LabeledRecord, Rubrics,
};
use slantscope::corpus::{count_text, load_stopwords, read_jsonl, BigramCountTable, Party};
use slantscope::harvest::{
    execute, load_figures, load_templates, plan_tasks, read_records, write_records, write_tasks,
    Cache, Executor, GenerationRecord, GenerationTask, PromptTemplate, PublicFigure,
    ResponseStatus, TemplateKind,
};
use slantscope::lexicon::{build_partisan_lexicon, PartisanLexicon, ReferenceRanking};
use slantscope::politests::{
    administer, load_test, load_text_pool, read_summary_csv, rescale_and_average, write_runs_csv,
    write_summary_csv, AdministerOptions, AdministrationResult, ModelAxes, TestDefinition,
};
use slantscope::slant::{read_units_csv, score_corpus_units, write_units_csv, TermDistribution};

use crate::config::{stage_seed, CorpusSection, RunConfig, UnitKey};

/// Everything a stage needs: validated config, resolved directories, cache.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub cache: Cache,
    pub concurrency: usize,
    pub seed: u64,
    pub dry_run: bool,
}

impl Ctx {
    fn corpus(&self) -> anyhow::Result<&CorpusSection> {
        self.config
            .corpus
            .as_ref()
            .context("config has no [corpus] section")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn stopword_set(corpus: &CorpusSection) -> anyhow::Result<HashSet<String>> {
    let mut words = load_stopwords(&corpus.stopwords).context("loading stopwords")?;
    for extra in &corpus.extra_stopwords {
        words.extend(load_stopwords(extra).context("loading extra stopwords")?);
    }
    Ok(words)
}

/// Pooled per-party bigram tables from the labeled corpus.
fn party_tables(
    corpus: &CorpusSection,
    stopwords: &HashSet<String>,
) -> anyhow::Result<(BigramCountTable, BigramCountTable)> {
    let docs = read_jsonl(&corpus.congress).context("reading labeled corpus")?;
    let mut dem = BigramCountTable::new();
    let mut rep = BigramCountTable::new();
    let mut unlabeled = 0usize;
    for doc in &docs {
        match doc.party {
            Some(Party::Democratic) => count_text(&mut dem, &doc.text, stopwords),
            Some(Party::Republican) => count_text(&mut rep, &doc.text, stopwords),
            None => unlabeled += 1,
        }
    }
    if unlabeled > 0 {
        log::warn!("{unlabeled} documents without a party label were skipped");
    }
    Ok((dem, rep))
}

fn reference_ranking(
    corpus: &CorpusSection,
    stopwords: &HashSet<String>,
) -> anyhow::Result<ReferenceRanking> {
    if let Some(path) = &corpus.reference_ranks {
        return ReferenceRanking::read_csv(path).context("reading reference ranks");
    }
    let path = corpus
        .reference
        .as_ref()
        .context("config names neither a reference corpus nor reference_ranks")?;
    let docs = read_jsonl(path).context("reading reference corpus")?;
    let mut table = BigramCountTable::new();
    for doc in &docs {
        count_text(&mut table, &doc.text, stopwords);
    }
    Ok(ReferenceRanking::from_counts(&table))
}

/// `lexicon`: build the partisan bigram lexicon and write `lexicon.csv`.
pub fn lexicon(ctx: &Ctx) -> anyhow::Result<()> {
    let corpus = ctx.corpus()?;
    let stopwords = stopword_set(corpus)?;
    let (dem, rep) = party_tables(corpus, &stopwords)?;
    log::info!(
        "counted {} Democratic and {} Republican bigram occurrences",
        dem.total(),
        rep.total()
    );
    let reference = reference_ranking(corpus, &stopwords)?;
    let params = ctx.config.lexicon.params();
    let lexicon =
        build_partisan_lexicon(&dem, &rep, &reference, params).context("building lexicon")?;
    let path = ctx.path("lexicon.csv");
    lexicon.write_csv(&path).context("writing lexicon")?;
    println!(
        "lexicon: {} Democratic + {} Republican terms -> {}",
        lexicon.dem_terms().len(),
        lexicon.rep_terms().len(),
        path.display()
    );
    Ok(())
}

fn load_lexicon(ctx: &Ctx) -> anyhow::Result<PartisanLexicon> {
    let path = ctx.path("lexicon.csv");
    if !path.exists() {
        bail!(
            "{} not found — run the `lexicon` subcommand first",
            path.display()
        );
    }
    PartisanLexicon::read_csv(&path, ctx.config.lexicon.params()).context("reading lexicon")
}

fn unit_key(doc: &slantscope::corpus::Document, key: UnitKey) -> String {
    match (key, doc.year) {
        (UnitKey::Source, _) | (UnitKey::SourceYear, None) => doc.source.clone(),
        (UnitKey::SourceYear, Some(year)) => format!("{}-{year}", doc.source),
    }
}

/// `slant`: score corpus units and/or harvested model output against the
/// lexicon. Corpus units go to `corpus_units.csv`, models to `slant.csv`.
pub fn slant(ctx: &Ctx) -> anyhow::Result<()> {
    let corpus = ctx.corpus()?;
    let stopwords = stopword_set(corpus)?;
    let lexicon = load_lexicon(ctx)?;
    let (dem, rep) = party_tables(corpus, &stopwords)?;
    let dem_ref = TermDistribution::project(&dem, &lexicon, 1)
        .context("projecting the Democratic reference")?;
    let rep_ref = TermDistribution::project(&rep, &lexicon, 1)
        .context("projecting the Republican reference")?;
    let min_evidence = ctx.config.slant.min_evidence.unwrap_or(1);

    let mut wrote_any = false;
    if let Some(path) = &ctx.config.slant.corpus {
        let docs = read_jsonl(path).context("reading slant corpus")?;
        let mut units: BTreeMap<String, BigramCountTable> = BTreeMap::new();
        for doc in &docs {
            let table = units.entry(unit_key(doc, ctx.config.slant.unit)).or_default();
            count_text(table, &doc.text, &stopwords);
        }
        let scores = score_corpus_units(&units, &lexicon, &dem_ref, &rep_ref, min_evidence);
        for skipped in &scores.skipped {
            log::warn!("unit {} skipped: {}", skipped.unit, skipped.reason);
        }
        let out = ctx.path("corpus_units.csv");
        write_units_csv(&out, &scores.scored).context("writing corpus unit scores")?;
        println!(
            "slant: {} corpus units scored ({} skipped) -> {}",
            scores.scored.len(),
            scores.skipped.len(),
            out.display()
        );
        wrote_any = true;
    }

    let records_path = ctx.path("records.jsonl");
    if records_path.exists() {
        let records = read_records(&records_path).context("reading harvest records")?;
        let mut units: BTreeMap<String, BigramCountTable> = BTreeMap::new();
        for record in &records {
            if record.status != ResponseStatus::Ok {
                continue;
            }
            let table = units.entry(record.task.model_id.clone()).or_default();
            count_text(table, &record.response_text, &stopwords);
        }
        let scores = score_corpus_units(&units, &lexicon, &dem_ref, &rep_ref, min_evidence);
        for skipped in &scores.skipped {
            log::warn!("model {} skipped: {}", skipped.unit, skipped.reason);
        }
        let out = ctx.path("slant.csv");
        write_units_csv(&out, &scores.scored).context("writing model slant scores")?;
        println!(
            "slant: {} models scored ({} skipped) -> {}",
            scores.scored.len(),
            scores.skipped.len(),
            out.display()
        );
        wrote_any = true;
    }

    if !wrote_any {
        bail!("nothing to score: set [slant] corpus or run `harvest` first");
    }
    Ok(())
}

/// `harvest`: plan the interview tasks and execute them per endpoint.
pub fn harvest(ctx: &Ctx) -> anyhow::Result<()> {
    let section = ctx
        .config
        .harvest
        .as_ref()
        .context("config has no [harvest] section")?;
    if ctx.config.models.is_empty() {
        bail!("config declares no [[models]]");
    }
    let templates = load_templates(&section.templates).context("loading templates")?;
    let topics = load_lines(&section.topics).context("loading topics")?;
    let figures = load_figures(&section.figures).context("loading figures")?;
    let figure_names: Vec<String> = figures.iter().map(|f| f.name.clone()).collect();
    let model_ids: Vec<String> = ctx.config.models.iter().map(|m| m.id.clone()).collect();

    let policy_templates: Vec<PromptTemplate> = templates
        .iter()
        .filter(|t| t.kind == TemplateKind::Policy)
        .cloned()
        .collect();
    let figure_templates: Vec<PromptTemplate> = templates
        .iter()
        .filter(|t| t.kind == TemplateKind::Figure)
        .cloned()
        .collect();

    let mut tasks: Vec<GenerationTask> = Vec::new();
    if !policy_templates.is_empty() && !topics.is_empty() {
        tasks.extend(
            plan_tasks(
                &model_ids,
                &policy_templates,
                &topics,
                section.policy_replicates,
                stage_seed(ctx.seed, "harvest-policy"),
            )
            .context("planning policy tasks")?,
        );
    }
    if !figure_templates.is_empty() && !figure_names.is_empty() {
        let mut figure_tasks = plan_tasks(
            &model_ids,
            &figure_templates,
            &figure_names,
            section.figure_replicates,
            stage_seed(ctx.seed, "harvest-figures"),
        )
        .context("planning figure tasks")?;
        for task in &mut figure_tasks {
            task.index += tasks.len();
        }
        tasks.append(&mut figure_tasks);
    }
    if tasks.is_empty() {
        bail!("the plan is empty: no usable templates or slot values");
    }
    let tasks_path = ctx.path("tasks.jsonl");
    write_tasks(&tasks_path, &tasks).context("writing task plan")?;
    println!("harvest: planned {} tasks -> {}", tasks.len(), tasks_path.display());
    if ctx.dry_run {
        println!("harvest: dry run, skipping execution");
        return Ok(());
    }

    let mut records: Vec<GenerationRecord> = Vec::new();
    for model in &ctx.config.models {
        let own: Vec<GenerationTask> = tasks
            .iter()
            .filter(|t| t.model_id == model.id)
            .cloned()
            .collect();
        let executed = execute(&own, &templates, &model.endpoint, &ctx.cache, ctx.concurrency)
            .with_context(|| format!("harvesting from model `{}`", model.id))?;
        records.extend(executed);
    }
    records.sort_by_key(|r| r.task.index);
    let mut by_status = [0usize; 3];
    for record in &records {
        by_status[match record.status {
            ResponseStatus::Ok => 0,
            ResponseStatus::Refused => 1,
            ResponseStatus::TransportError => 2,
        }] += 1;
    }
    let records_path = ctx.path("records.jsonl");
    write_records(&records_path, &records).context("writing records")?;
    println!(
        "harvest: {} ok, {} refused, {} transport errors -> {}",
        by_status[0],
        by_status[1],
        by_status[2],
        records_path.display()
    );
    if by_status[2] > 0 {
        log::warn!(
            "{} tasks failed in transport and are not cached; rerun `harvest` to retry them",
            by_status[2]
        );
    }
    Ok(())
}

fn load_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn build_judge(ctx: &Ctx) -> anyhow::Result<(Judge, f64)> {
    let section = ctx
        .config
        .judge
        .as_ref()
        .context("config has no [judge] section")?;
    let rubrics = Rubrics::load(&section.rubrics).context("loading rubrics")?;
    let executor = Executor::new(&section.endpoint).context("connecting the judge endpoint")?;
    Ok((Judge::new(executor, rubrics), section.alpha))
}

/// `annotate`: judge-label harvested output — policy viewpoints and
/// public-figure sentiment — then aggregate per model.
pub fn annotate(ctx: &Ctx) -> anyhow::Result<()> {
    let section = ctx
        .config
        .harvest
        .as_ref()
        .context("config has no [harvest] section (needed for template kinds and figures)")?;
    let records_path = ctx.path("records.jsonl");
    if !records_path.exists() {
        bail!(
            "{} not found — run the `harvest` subcommand first",
            records_path.display()
        );
    }
    let records = read_records(&records_path).context("reading harvest records")?;
    let templates = load_templates(&section.templates).context("loading templates")?;
    let kinds: HashMap<&str, TemplateKind> = templates
        .iter()
        .map(|t| (t.id.as_str(), t.kind))
        .collect();
    let figures = load_figures(&section.figures).context("loading figures")?;
    let alignment: HashMap<&str, &PublicFigure> =
        figures.iter().map(|f| (f.name.as_str(), f)).collect();
    let (judge, alpha) = build_judge(ctx)?;

    let ok_of_kind = |kind: TemplateKind| -> Vec<&GenerationRecord> {
        records
            .iter()
            .filter(|r| r.status == ResponseStatus::Ok)
            .filter(|r| kinds.get(r.task.template_id.as_str()) == Some(&kind))
            .collect()
    };

    let mut annotations: Vec<AnnotationRow> = Vec::new();

    let policy = ok_of_kind(TemplateKind::Policy);
    let texts: Vec<String> = policy.iter().map(|r| r.response_text.clone()).collect();
    let viewpoints = judge
        .viewpoint_batch(&texts, &ctx.cache, ctx.concurrency)
        .context("judging viewpoints")?;
    let mut viewpoint_rows: Vec<LabeledRecord> = Vec::new();
    for (record, annotated) in policy.iter().zip(&viewpoints) {
        viewpoint_rows.push(LabeledRecord {
            group: record.task.model_id.clone(),
            numeric: annotated.label.as_ref().map(|l| f64::from(l.numeric)),
        });
        annotations.push(AnnotationRow {
            record_index: record.task.index,
            model_id: record.task.model_id.clone(),
            kind: AnnotationKind::Viewpoint,
            figure: None,
            label: annotated.label.as_ref().map(|l| l.categorical.to_string()),
            numeric: annotated.label.as_ref().map(|l| l.numeric),
            raw: annotated.raw.clone(),
        });
    }

    let figure_records = ok_of_kind(TemplateKind::Figure);
    let mut items: Vec<(String, String)> = Vec::new();
    let mut with_figures: Vec<&GenerationRecord> = Vec::new();
    for record in figure_records {
        let Some(figure) = &record.task.slot_value else {
            log::warn!("figure record {} has no slot value", record.task.index);
            continue;
        };
        items.push((figure.clone(), record.response_text.clone()));
        with_figures.push(record);
    }
    let sentiments = judge
        .sentiment_batch(&items, &ctx.cache, ctx.concurrency)
        .context("judging sentiment")?;
    let mut aligned: Vec<AlignedLabel> = Vec::new();
    for (record, annotated) in with_figures.iter().zip(&sentiments) {
        let figure_name = record.task.slot_value.clone().unwrap_or_default();
        match alignment.get(figure_name.as_str()) {
            Some(figure) => aligned.push(AlignedLabel {
                model: record.task.model_id.clone(),
                alignment: figure.alignment,
                numeric: annotated.label.as_ref().map(|l| f64::from(l.numeric)),
            }),
            None => log::warn!("figure `{figure_name}` is not in the figures file"),
        }
        annotations.push(AnnotationRow {
            record_index: record.task.index,
            model_id: record.task.model_id.clone(),
            kind: AnnotationKind::Sentiment,
            figure: Some(figure_name),
            label: annotated.label.as_ref().map(|l| l.categorical.to_string()),
            numeric: annotated.label.as_ref().map(|l| l.numeric),
            raw: annotated.raw.clone(),
        });
    }

    let annotations_path = ctx.path("annotations.jsonl");
    write_annotations(&annotations_path, &annotations).context("writing annotations")?;

    let means = aggregate_labels(&viewpoint_rows).context("aggregating viewpoints")?;
    let viewpoints_path = ctx.path("viewpoints.csv");
    write_group_means_csv(&viewpoints_path, &means).context("writing viewpoint means")?;

    let asymmetry = sentiment_asymmetry(&aligned, alpha).context("testing sentiment asymmetry")?;
    let sentiment_path = ctx.path("sentiment.csv");
    write_asymmetry_csv(&sentiment_path, &asymmetry).context("writing sentiment asymmetry")?;

    println!(
        "annotate: {} annotations -> {}; {} viewpoint groups -> {}; {} models -> {}",
        annotations.len(),
        annotations_path.display(),
        means.len(),
        viewpoints_path.display(),
        asymmetry.len(),
        sentiment_path.display()
    );
    Ok(())
}

/// `tests`: administer every configured test bank to every model, then
/// rescale and average onto the two axes.
pub fn tests(ctx: &Ctx) -> anyhow::Result<()> {
    let section = ctx
        .config
        .tests
        .as_ref()
        .context("config has no [tests] section")?;
    if ctx.config.models.is_empty() {
        bail!("config declares no [[models]]");
    }
    let banks: Vec<TestDefinition> = section
        .banks
        .iter()
        .map(|p| load_test(p).with_context(|| format!("loading test bank {}", p.display())))
        .collect::<anyhow::Result<_>>()?;
    let prefixes = load_text_pool(&section.prefixes).context("loading prefixes")?;
    let suffixes = load_text_pool(&section.suffixes).context("loading suffixes")?;
    let fewshot = section
        .fewshot_preamble
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let (judge, _alpha) = build_judge(ctx)?;

    let mut all_results: Vec<AdministrationResult> = Vec::new();
    let mut summary: Vec<ModelAxes> = Vec::new();
    for model in &ctx.config.models {
        let executor =
            Executor::new(&model.endpoint).with_context(|| format!("endpoint for `{}`", model.id))?;
        let mut results: Vec<AdministrationResult> = Vec::new();
        for bank in &banks {
            let options = AdministerOptions {
                prefixes: &prefixes,
                suffixes: &suffixes,
                runs: section.runs,
                seed: stage_seed(ctx.seed, &format!("tests-{}-{}", model.id, bank.id)),
                fewshot_preamble: fewshot.as_deref(),
            };
            results.extend(
                administer(
                    bank,
                    &executor,
                    &model.id,
                    &judge,
                    options,
                    &ctx.cache,
                    ctx.concurrency,
                )
                .with_context(|| format!("administering `{}` to `{}`", bank.id, model.id))?,
            );
        }
        match rescale_and_average(&results, &banks, section.max_invalid_frac) {
            Ok(axes) => {
                for excluded in &axes.excluded {
                    log::warn!(
                        "excluded run {} of `{}` for `{}`: {} invalid answers",
                        excluded.run_index,
                        excluded.test_id,
                        model.id,
                        excluded.invalid_count
                    );
                }
                summary.push(ModelAxes {
                    model: model.id.clone(),
                    econ: axes.econ,
                    social: axes.social,
                });
            }
            Err(e) => log::warn!("model `{}` has no valid runs and is excluded: {e}", model.id),
        }
        all_results.extend(results);
    }

    let runs_path = ctx.path("tests_runs.csv");
    write_runs_csv(&runs_path, &all_results).context("writing per-run scores")?;
    let summary_path = ctx.path("tests.csv");
    write_summary_csv(&summary_path, &summary).context("writing test summary")?;
    println!(
        "tests: {} runs -> {}; {} models -> {}",
        all_results.len(),
        runs_path.display(),
        summary.len(),
        summary_path.display()
    );
    Ok(())
}

/// `aggregate`: combine the four method tables into the Z-score ranking and
/// emit the report directory.
pub fn aggregate(ctx: &Ctx) -> anyhow::Result<()> {
    let require = |name: &str| -> anyhow::Result<PathBuf> {
        let path = ctx.path(name);
        if !path.exists() {
            bail!("{} not found — run the stage that writes it first", path.display());
        }
        Ok(path)
    };
    let slant_units = read_units_csv(&require("slant.csv")?).context("reading slant.csv")?;
    let viewpoints =
        read_group_means_csv(&require("viewpoints.csv")?).context("reading viewpoints.csv")?;
    let sentiment =
        read_asymmetry_csv(&require("sentiment.csv")?).context("reading sentiment.csv")?;
    let tests = read_summary_csv(&require("tests.csv")?).context("reading tests.csv")?;

    let mut scores: Vec<MethodScore> = Vec::new();
    scores.extend(slant_units.iter().map(|u| MethodScore {
        model_id: u.unit.clone(),
        method: Method::Slant,
        value: u.score.delta,
    }));
    scores.extend(viewpoints.iter().map(|g| MethodScore {
        model_id: g.group.clone(),
        method: Method::Viewpoint,
        value: g.mean,
    }));
    scores.extend(sentiment.iter().map(|row| MethodScore {
        model_id: row.model.clone(),
        method: Method::Sentiment,
        value: row.gap(),
    }));
    scores.extend(tests.iter().map(|axes| MethodScore {
        model_id: axes.model.clone(),
        method: Method::Tests,
        value: (axes.econ + axes.social) / 2.0,
    }));

    let ranking = combine(&scores).context("combining method scores")?;
    for excluded in &ranking.excluded {
        let missing: Vec<String> = excluded.missing.iter().map(Method::to_string).collect();
        log::warn!(
            "model `{}` excluded from the ranking: missing {}",
            excluded.model_id,
            missing.join(", ")
        );
    }
    for method in &ranking.zero_variance {
        log::warn!("method {method} had zero variance; its z-scores are 0");
    }

    let validation = match (&ctx.config.validate, ctx.path("corpus_units.csv").exists()) {
        (Some(section), true) => {
            let units = read_units_csv(&ctx.path("corpus_units.csv"))
                .context("reading corpus_units.csv")?;
            let deltas: HashMap<String, f64> = units
                .iter()
                .map(|u| (u.unit.clone(), u.score.delta))
                .collect();
            let ratings = read_ratings_csv(&section.ratings).context("reading ratings")?;
            Some(validate_against_ratings(&deltas, &ratings).context("validating")?)
        }
        _ => None,
    };

    let report_dir = ctx.path("report");
    let written = emit_report(
        &report_dir,
        &ranking,
        ReportSections {
            slant_units: Some(&slant_units),
            viewpoints: Some(&viewpoints),
            sentiment: Some(&sentiment),
            tests: Some(&tests),
            validation: validation.as_ref(),
        },
    )
    .context("writing report")?;

    println!("ranking (1 = least slanted):");
    for row in &ranking.rows {
        println!(
            "  {:>3}  {:<24}  combined {:+.4}  magnitude {:.4}",
            row.rank, row.model_id, row.combined, row.magnitude
        );
    }
    for excluded in &ranking.excluded {
        println!("  excluded: {}", excluded.model_id);
    }
    println!("report: {} files -> {}", written.len(), report_dir.display());
    Ok(())
}

/// `validate`: correlate corpus-unit slant with published ratings.
pub fn validate(ctx: &Ctx) -> anyhow::Result<()> {
    let section = ctx
        .config
        .validate
        .as_ref()
        .context("config has no [validate] section")?;
    let units_path = ctx.path("corpus_units.csv");
    if !units_path.exists() {
        bail!(
            "{} not found — run `slant` with a [slant] corpus first",
            units_path.display()
        );
    }
    let units = read_units_csv(&units_path).context("reading corpus unit scores")?;
    let deltas: HashMap<String, f64> = units
        .iter()
        .map(|u| (u.unit.clone(), u.score.delta))
        .collect();
    let ratings = read_ratings_csv(&section.ratings).context("reading ratings")?;
    let report = validate_against_ratings(&deltas, &ratings).context("validating")?;
    let out = ctx.path("validation.csv");
    aggregate::write_validation_csv(&out, &report).context("writing validation rows")?;
    println!(
        "validate: r = {:.4} over {} units -> {}",
        report.r,
        report.n,
        out.display()
    );
    Ok(())
}
