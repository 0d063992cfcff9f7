//! End-to-end longitudinal experiment: per-timestamp retrieval runs for
//! the configured systems, evaluation tables, significance tests, the
//! never-seen ablation, and corpus-drift reports.
//!
//! Runs are always persisted first and every report is computed from the
//! persisted files, so reports can be regenerated bit-identically
//! without re-searching (see [`rebuild_reports`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{self, Snapshot, Timestamp};
use crate::error::{Error, Result};
use crate::eval::{
    EvalReport, Qrels, Run, ablation_filter_new, condense_run, ndcg_at_k, paired_ttest_bonferroni,
};
use crate::history::{self, FeedbackStore};
use crate::index::{InvertedIndex, Rm3Params, WeightedQuery};
use crate::rewrite::{
    BoostParams, HistoricalArchive, KeyqueryParams, boost_rerank, export_rewrites, keyquery_rewrite,
    rf_expand,
};
use crate::text::{self, Tokenizer};

/// Retrieval systems runnable natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SystemKind {
    Bm25,
    Bm25Rm3,
    Boost,
    Rf,
    Keyquery,
}

impl SystemKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SystemKind::Bm25 => "bm25",
            SystemKind::Bm25Rm3 => "bm25-rm3",
            SystemKind::Boost => "boost",
            SystemKind::Rf => "rf",
            SystemKind::Keyquery => "keyquery",
        }
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, SystemKind::Boost | SystemKind::Rf | SystemKind::Keyquery)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(SystemKind::Bm25),
            "bm25-rm3" => Ok(SystemKind::Bm25Rm3),
            "boost" => Ok(SystemKind::Boost),
            "rf" => Ok(SystemKind::Rf),
            "keyquery" => Ok(SystemKind::Keyquery),
            other => Err(Error::Config(format!(
                "unknown system {other:?} (expected bm25 | bm25-rm3 | boost | rf | keyquery)"
            ))),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One snapshot directory with its timestamp label. The directory must
/// contain `corpus.jsonl` and `queries.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSource {
    pub timestamp: Timestamp,
    pub dir: PathBuf,
}

/// Rewriting parameters shared by the systems.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteParams {
    pub boost: BoostParams,
    /// Number of feedback terms appended by the rf system.
    pub rf_terms: usize,
    pub keyquery: KeyqueryParams,
    pub rm3: Rm3Params,
}

impl Default for RewriteParams {
    fn default() -> Self {
        RewriteParams {
            boost: BoostParams::default(),
            rf_terms: 10,
            keyquery: KeyqueryParams::default(),
            rm3: Rm3Params::default(),
        }
    }
}

/// An externally produced run injected into evaluation at one timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalRun {
    pub tag: String,
    pub timestamp: Timestamp,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub snapshots: Vec<SnapshotSource>,
    pub qrels_manifest: PathBuf,
    pub systems: Vec<SystemKind>,
    pub external_runs: Vec<ExternalRun>,
    pub params: RewriteParams,
    /// Metric cutoff (nDCG@cutoff).
    pub cutoff: usize,
    /// Retrieval depth of the persisted runs.
    pub depth: usize,
    pub alpha: f64,
    pub stopword_file: Option<PathBuf>,
    pub outdir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(
        snapshots: Vec<SnapshotSource>,
        qrels_manifest: PathBuf,
        systems: Vec<SystemKind>,
        outdir: PathBuf,
    ) -> Self {
        ExperimentConfig {
            snapshots,
            qrels_manifest,
            systems,
            external_runs: Vec::new(),
            params: RewriteParams::default(),
            cutoff: 10,
            depth: 100,
            alpha: 0.05,
            stopword_file: None,
            outdir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots.len() < 2 {
            return Err(Error::Config(
                "an experiment needs at least 2 snapshots (the first provides history only)"
                    .into(),
            ));
        }
        let mut seen_ts = BTreeSet::new();
        for source in &self.snapshots {
            if !seen_ts.insert(&source.timestamp) {
                return Err(Error::Config(format!(
                    "duplicate snapshot timestamp {}",
                    source.timestamp
                )));
            }
        }
        let mut sorted = self.snapshots.clone();
        sorted.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
        if sorted != self.snapshots {
            return Err(Error::Config(
                "snapshots must be listed in ascending timestamp order".into(),
            ));
        }
        if self.systems.is_empty() {
            return Err(Error::Config("no systems configured".into()));
        }
        let mut tags: BTreeSet<&str> = BTreeSet::new();
        for system in &self.systems {
            if !tags.insert(system.tag()) {
                return Err(Error::Config(format!("system {system} listed twice")));
            }
        }
        if !self.systems.contains(&SystemKind::Bm25) {
            return Err(Error::Config(
                "the bm25 baseline is required; comparison tables are defined against it".into(),
            ));
        }
        for external in &self.external_runs {
            if external.tag.is_empty() || external.tag.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "bad external run tag {:?}",
                    external.tag
                )));
            }
            if tags.contains(external.tag.as_str()) {
                return Err(Error::Config(format!(
                    "external run tag {} collides with a native system",
                    external.tag
                )));
            }
            if !self.snapshots.iter().any(|s| s.timestamp == external.timestamp) {
                return Err(Error::Config(format!(
                    "external run {} references unknown timestamp {}",
                    external.tag, external.timestamp
                )));
            }
        }
        if self.cutoff == 0 || self.depth == 0 {
            return Err(Error::Config("cutoff and depth must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        self.params.boost.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.params.keyquery.validate()?;
        if self.params.rf_terms == 0 {
            return Err(Error::Config("rf_terms must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean-difference cell of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub mean_diff: f64,
    pub std_dev: f64,
    pub significant: bool,
    pub num_queries: usize,
}

/// What an experiment produced, keyed by system tag and timestamp label.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub evaluated: Vec<Timestamp>,
    pub mean_ndcg: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_ndcg_condensed: BTreeMap<String, BTreeMap<String, f64>>,
    pub ablation: BTreeMap<String, BTreeMap<String, AblationCell>>,
    pub files: Vec<PathBuf>,
}

struct Context {
    tokenizer: Tokenizer,
    timestamps: Vec<Timestamp>,
    queries_by_step: Vec<Vec<(String, String)>>,
    archive: HistoricalArchive,
    store: FeedbackStore,
}

impl Context {
    /// Queries of step `i` whose normalized text occurred at an earlier
    /// timestamp.
    fn eligible_queries(&self, step: usize) -> Vec<(String, String)> {
        let mut prior: BTreeSet<String> = BTreeSet::new();
        for earlier in &self.queries_by_step[..step] {
            prior.extend(earlier.iter().map(|(_, q)| text::normalize_query(q)));
        }
        self.queries_by_step[step]
            .iter()
            .filter(|(_, q)| prior.contains(&text::normalize_query(q)))
            .cloned()
            .collect()
    }
}

fn load_context(config: &ExperimentConfig) -> Result<Context> {
    let tokenizer = match &config.stopword_file {
        Some(path) => Tokenizer::from_stopword_file(path)?,
        None => Tokenizer::new(),
    };
    let mut archive = HistoricalArchive::new();
    let mut timestamps = Vec::new();
    let mut queries_by_step = Vec::new();
    for source in &config.snapshots {
        let snapshot = corpus::ingest_snapshot(
            &source.dir.join("corpus.jsonl"),
            source.timestamp.clone(),
        )?;
        let queries = corpus::load_queries(&source.dir.join("queries.tsv"))?;
        let index = InvertedIndex::build(&snapshot, tokenizer.clone());
        archive.push(snapshot, index)?;
        timestamps.push(source.timestamp.clone());
        queries_by_step.push(queries);
    }
    let store = history::load_store(&config.qrels_manifest)?;
    Ok(Context {
        tokenizer,
        timestamps,
        queries_by_step,
        archive,
        store,
    })
}

fn run_path(outdir: &Path, tag: &str, ts: &Timestamp) -> PathBuf {
    outdir.join("runs").join(format!("{tag}_{ts}.run"))
}

/// Produces one system's run over the eligible queries of one timestamp,
/// together with the rewritten queries (empty for systems that do not
/// rewrite).
fn build_run(
    system: SystemKind,
    context: &Context,
    now: &Timestamp,
    eligible: &[(String, String)],
    config: &ExperimentConfig,
) -> Result<(Run, Vec<(String, WeightedQuery)>)> {
    let index = context
        .archive
        .index_at(now)
        .ok_or_else(|| Error::Integrity(format!("no index for {now}")))?;
    let mut run = Run::new(system.tag());
    let mut rewrites = Vec::new();
    for (qid, query_text) in eligible {
        let Ok(query) = WeightedQuery::from_text(qid.clone(), query_text, &context.tokenizer)
        else {
            // Queries that tokenize to nothing cannot be searched.
            continue;
        };
        let ranking = match system {
            SystemKind::Bm25 => index.search(&query, config.depth)?,
            SystemKind::Bm25Rm3 => {
                let expanded = crate::index::rm3_expand(index, &query, &config.params.rm3)?;
                let ranking = index.search(&expanded, config.depth)?;
                rewrites.push((qid.clone(), expanded));
                ranking
            }
            SystemKind::Boost => {
                let base = index.search(&query, config.depth)?;
                boost_rerank(&base, &context.store, now, &config.params.boost)
            }
            SystemKind::Rf => {
                let expanded = rf_expand(
                    &query,
                    &context.store,
                    &context.archive,
                    now,
                    config.params.rf_terms,
                )?;
                let ranking = index.search(&expanded, config.depth)?;
                rewrites.push((qid.clone(), expanded));
                ranking
            }
            SystemKind::Keyquery => {
                let rewritten = keyquery_rewrite(
                    &query,
                    &context.store,
                    &context.archive,
                    now,
                    &config.params.keyquery,
                )?;
                let ranking = index.search(&rewritten, config.depth)?;
                rewrites.push((qid.clone(), rewritten));
                ranking
            }
        };
        run.insert_ranking(&ranking)?;
    }
    Ok((run, rewrites))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, content: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Runs the full experiment: searches, persists runs and rewrites, then
/// derives every report from the persisted files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let context = load_context(config)?;
    ensure_dir(&config.outdir)?;
    ensure_dir(&config.outdir.join("runs"))?;
    ensure_dir(&config.outdir.join("rewrites"))?;

    let mut run_files = Vec::new();
    for step in 1..context.timestamps.len() {
        let now = &context.timestamps[step];
        let eligible = context.eligible_queries(step);
        if eligible.is_empty() {
            continue;
        }
        for system in &config.systems {
            let (run, rewrites) = build_run(*system, &context, now, &eligible, config)?;
            let path = run_path(&config.outdir, system.tag(), now);
            run.write_trec(&path)?;
            run_files.push(path);
            if !rewrites.is_empty() {
                let rewrite_path = config
                    .outdir
                    .join("rewrites")
                    .join(format!("{}_{now}.tsv", system.tag()));
                export_rewrites(&rewrites, &rewrite_path)?;
                run_files.push(rewrite_path);
            }
        }
    }

    let mut outcome = build_reports(config, &context)?;
    outcome.files.extend(run_files);
    outcome.files.sort();
    write_manifest(config, &mut outcome)?;
    Ok(outcome)
}

/// Recomputes every report from the runs already persisted in the output
/// directory, without searching. Byte-identical to the report files a
/// full [`run_experiment`] writes.
pub fn rebuild_reports(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let context = load_context(config)?;
    let mut outcome = build_reports(config, &context)?;
    outcome.files.sort();
    Ok(outcome)
}

fn mean_and_std(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = if diffs.len() > 1 {
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn significance_tsv(
    reports: &BTreeMap<String, &EvalReport>,
    baseline: &str,
    num_comparisons: usize,
    alpha: f64,
) -> String {
    let mut out = String::from("system\tmean\tp_raw\tp_adjusted\tmarker\n");
    writeln!(out, "{baseline}\t{:.4}\t-\t-\t", reports[baseline].mean)
        .expect("writing to string cannot fail");
    match paired_ttest_bonferroni(reports, baseline, num_comparisons, alpha) {
        Ok(results) => {
            for (system, result) in results {
                let marker = if result.significant { "*" } else { "" };
                writeln!(
                    out,
                    "{system}\t{:.4}\t{:.6}\t{:.6}\t{marker}",
                    reports[&system].mean, result.p_raw, result.p_adjusted
                )
                .expect("writing to string cannot fail");
            }
        }
        Err(e) => {
            writeln!(out, "#undefined\t{e}").expect("writing to string cannot fail");
        }
    }
    out
}

fn build_reports(config: &ExperimentConfig, context: &Context) -> Result<ExperimentOutcome> {
    ensure_dir(&config.outdir)?;
    ensure_dir(&config.outdir.join("eval"))?;
    ensure_dir(&config.outdir.join("corpus"))?;

    let mut files = Vec::new();
    let mut evaluated = Vec::new();
    let mut mean_ndcg: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut mean_condensed: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut ablation: BTreeMap<String, BTreeMap<String, AblationCell>> = BTreeMap::new();

    for step in 1..context.timestamps.len() {
        let now = &context.timestamps[step];
        if context.eligible_queries(step).is_empty() {
            continue;
        }
        evaluated.push(now.clone());

        let qrels = Qrels::from_observations(context.store.observations_at(now));

        // Collect the runs participating at this timestamp.
        let mut runs: BTreeMap<String, Run> = BTreeMap::new();
        for system in &config.systems {
            let path = run_path(&config.outdir, system.tag(), now);
            runs.insert(system.tag().to_string(), Run::parse_trec(&path)?);
        }
        for external in &config.external_runs {
            if external.timestamp == *now {
                runs.insert(external.tag.clone(), Run::parse_trec(&external.path)?);
            }
        }
        let num_comparisons = runs.len().saturating_sub(1).max(1);

        let mut plain: BTreeMap<String, EvalReport> = BTreeMap::new();
        let mut condensed: BTreeMap<String, EvalReport> = BTreeMap::new();
        for (tag, run) in &runs {
            let report = ndcg_at_k(run, &qrels, config.cutoff)?;
            let condensed_report = ndcg_at_k(&condense_run(run, &qrels), &qrels, config.cutoff)?;
            let mut per_query_tsv = String::from("qid\tndcg\tndcg_condensed\n");
            for (qid, score) in &report.per_query {
                let c = condensed_report.per_query.get(qid).copied().unwrap_or(0.0);
                writeln!(per_query_tsv, "{qid}\t{score}\t{c}")
                    .expect("writing to string cannot fail");
            }
            writeln!(
                per_query_tsv,
                "mean\t{}\t{}",
                report.mean, condensed_report.mean
            )
            .expect("writing to string cannot fail");
            write_file(
                &config.outdir.join("eval").join(format!("perquery_{tag}_{now}.tsv")),
                &per_query_tsv,
                &mut files,
            )?;
            mean_ndcg
                .entry(tag.clone())
                .or_default()
                .insert(now.as_str().to_string(), report.mean);
            mean_condensed
                .entry(tag.clone())
                .or_default()
                .insert(now.as_str().to_string(), condensed_report.mean);
            plain.insert(tag.clone(), report);
            condensed.insert(tag.clone(), condensed_report);
        }

        let plain_refs: BTreeMap<String, &EvalReport> =
            plain.iter().map(|(k, v)| (k.clone(), v)).collect();
        let condensed_refs: BTreeMap<String, &EvalReport> =
            condensed.iter().map(|(k, v)| (k.clone(), v)).collect();
        write_file(
            &config.outdir.join("eval").join(format!("significance_ndcg_{now}.tsv")),
            &significance_tsv(&plain_refs, "bm25", num_comparisons, config.alpha),
            &mut files,
        )?;
        write_file(
            &config
                .outdir
                .join("eval")
                .join(format!("significance_ndcg_condensed_{now}.tsv")),
            &significance_tsv(&condensed_refs, "bm25", num_comparisons, config.alpha),
            &mut files,
        )?;

        // Never-seen ablation: drop documents observed in any earlier
        // snapshot from runs and qrels, then evaluate condensed nDCG.
        let previous: Vec<&Snapshot> = context.timestamps[..step]
            .iter()
            .map(|ts| context.archive.snapshot_at(ts).expect("snapshot loaded"))
            .collect();
        let mut filtered_reports: BTreeMap<String, EvalReport> = BTreeMap::new();
        for (tag, run) in &runs {
            let (filtered_run, filtered_qrels) = ablation_filter_new(run, &qrels, &previous)?;
            let condensed_run = condense_run(&filtered_run, &filtered_qrels);
            filtered_reports.insert(
                tag.clone(),
                ndcg_at_k(&condensed_run, &filtered_qrels, config.cutoff)?,
            );
        }
        let filtered_refs: BTreeMap<String, &EvalReport> =
            filtered_reports.iter().map(|(k, v)| (k.clone(), v)).collect();
        let significance =
            paired_ttest_bonferroni(&filtered_refs, "bm25", num_comparisons, config.alpha).ok();
        let baseline_report = &filtered_reports["bm25"];
        for (tag, report) in &filtered_reports {
            if tag == "bm25" {
                continue;
            }
            let diffs: Vec<f64> = report
                .per_query
                .iter()
                .filter_map(|(qid, score)| baseline_report.per_query.get(qid).map(|b| score - b))
                .collect();
            if diffs.is_empty() {
                continue;
            }
            let (mean_diff, std_dev) = mean_and_std(&diffs);
            let significant = significance
                .as_ref()
                .and_then(|s| s.get(tag))
                .map(|r| r.significant)
                .unwrap_or(false);
            ablation.entry(tag.clone()).or_default().insert(
                now.as_str().to_string(),
                AblationCell {
                    mean_diff,
                    std_dev,
                    significant,
                    num_queries: diffs.len(),
                },
            );
        }
    }

    // System x timestamp mean tables.
    let ts_labels: Vec<String> = evaluated.iter().map(|t| t.as_str().to_string()).collect();
    let matrix_tsv = |means: &BTreeMap<String, BTreeMap<String, f64>>| -> String {
        let mut out = String::from("system");
        for label in &ts_labels {
            out.push('\t');
            out.push_str(label);
        }
        out.push('\n');
        for (tag, by_ts) in means {
            out.push_str(tag);
            for label in &ts_labels {
                match by_ts.get(label) {
                    Some(v) => write!(out, "\t{v:.4}").expect("writing to string cannot fail"),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    };
    write_file(
        &config.outdir.join("eval").join("ndcg.tsv"),
        &matrix_tsv(&mean_ndcg),
        &mut files,
    )?;
    write_file(
        &config.outdir.join("eval").join("ndcg_condensed.tsv"),
        &matrix_tsv(&mean_condensed),
        &mut files,
    )?;

    let mut ablation_tsv = String::from("system");
    for label in &ts_labels {
        write!(
            ablation_tsv,
            "\t{label} mean_diff\t{label} std_dev\t{label} marker"
        )
        .expect("writing to string cannot fail");
    }
    ablation_tsv.push('\n');
    for (tag, by_ts) in &ablation {
        ablation_tsv.push_str(tag);
        for label in &ts_labels {
            match by_ts.get(label) {
                Some(cell) => {
                    let marker = if cell.significant { "*" } else { "" };
                    write!(
                        ablation_tsv,
                        "\t{:+.4}\t{:.4}\t{marker}",
                        cell.mean_diff, cell.std_dev
                    )
                    .expect("writing to string cannot fail");
                }
                None => ablation_tsv.push_str("\t-\t-\t-"),
            }
        }
        ablation_tsv.push('\n');
    }
    write_file(
        &config.outdir.join("eval").join("ablation.tsv"),
        &ablation_tsv,
        &mut files,
    )?;

    // Corpus drift: similarity eCDF over consecutive diffs plus the
    // query-overlap matrix.
    let mut changesets = Vec::new();
    for pair in context.timestamps.windows(2) {
        let older = context.archive.snapshot_at(&pair[0]).expect("snapshot loaded");
        let newer = context.archive.snapshot_at(&pair[1]).expect("snapshot loaded");
        changesets.push(corpus::diff_snapshots(older, newer)?);
    }
    let ecdf = corpus::similarity_profile(changesets.iter());
    let mut ecdf_tsv = String::from("s3\tcum_fraction\n");
    for (s3, fraction) in &ecdf {
        writeln!(ecdf_tsv, "{s3}\t{fraction}").expect("writing to string cannot fail");
    }
    write_file(
        &config.outdir.join("corpus").join("similarity_ecdf.tsv"),
        &ecdf_tsv,
        &mut files,
    )?;

    let topic_sets: BTreeMap<Timestamp, Vec<String>> = context
        .timestamps
        .iter()
        .zip(&context.queries_by_step)
        .map(|(ts, queries)| {
            (ts.clone(), queries.iter().map(|(_, q)| q.clone()).collect())
        })
        .collect();
    let overlap = corpus::query_overlap(&topic_sets);
    write_file(
        &config.outdir.join("corpus").join("query_overlap.tsv"),
        &overlap.to_tsv(),
        &mut files,
    )?;

    Ok(ExperimentOutcome {
        evaluated,
        mean_ndcg,
        mean_ndcg_condensed: mean_condensed,
        ablation,
        files,
    })
}

fn write_manifest(config: &ExperimentConfig, outcome: &mut ExperimentOutcome) -> Result<()> {
    let mut manifest = String::new();
    for file in &outcome.files {
        let shown = file.strip_prefix(&config.outdir).unwrap_or(file);
        writeln!(manifest, "{}", shown.display()).expect("writing to string cannot fail");
    }
    let path = config.outdir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    outcome.files.push(path);
    Ok(())
}
