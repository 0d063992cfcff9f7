//! TREC-style evaluation: nDCG@k, condensed lists, paired significance
//! testing with Bonferroni correction, and the never-seen-document
//! ablation filter.
//!
//! Conventions pinned here and used everywhere: linear gain (the grade
//! itself), log2(rank + 1) discount, unjudged documents gain 0, and
//! queries whose judgments contain no positive grade are excluded from
//! means because their ideal DCG is undefined.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Snapshot;
use crate::error::{Error, Result};
use crate::history::Observation;
use crate::index::Ranking;

/// One run entry: a retrieved document with its rank and score.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// A TREC run: per-query ranked result lists under one system tag.
/// Per query, ranks are contiguous from 1, scores are non-increasing,
/// and no document appears twice.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    tag: String,
    rankings: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn entries(&self, qid: &str) -> Option<&[RunEntry]> {
        self.rankings.get(qid).map(Vec::as_slice)
    }

    pub fn num_queries(&self) -> usize {
        self.rankings.len()
    }

    pub fn insert_ranking(&mut self, ranking: &Ranking) -> Result<()> {
        let entries: Vec<RunEntry> = ranking
            .entries()
            .iter()
            .map(|e| RunEntry {
                doc_id: e.doc_id.clone(),
                rank: e.rank,
                score: e.score,
            })
            .collect();
        self.insert_entries(ranking.qid().to_string(), entries)
    }

    pub fn insert_entries(&mut self, qid: String, entries: Vec<RunEntry>) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, entry) in entries.iter().enumerate() {
            if entry.rank != i + 1 {
                return Err(Error::Integrity(format!(
                    "run {}: query {qid} has rank {} at position {}",
                    self.tag,
                    entry.rank,
                    i + 1
                )));
            }
            if i > 0 && entries[i - 1].score < entry.score {
                return Err(Error::Integrity(format!(
                    "run {}: query {qid} scores increase at rank {}",
                    self.tag, entry.rank
                )));
            }
            if !seen.insert(entry.doc_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "run {}: query {qid} lists {} twice",
                    self.tag, entry.doc_id
                )));
            }
        }
        if self.rankings.insert(qid.clone(), entries).is_some() {
            return Err(Error::Integrity(format!(
                "run {}: duplicate query {qid}",
                self.tag
            )));
        }
        Ok(())
    }

    /// Parses the TREC run format `qid Q0 docno rank score tag`.
    pub fn parse_trec(path: &Path) -> Result<Run> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut tag: Option<String> = None;
        let mut per_query: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            let rank: usize = fields[3]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad rank {:?}", fields[3])))?;
            let score: f64 = fields[4]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad score {:?}", fields[4])))?;
            match &tag {
                None => tag = Some(fields[5].to_string()),
                Some(t) if t != fields[5] => {
                    return Err(Error::parse(
                        path,
                        idx + 1,
                        format!("mixed run tags {t:?} and {:?}", fields[5]),
                    ));
                }
                _ => {}
            }
            per_query.entry(fields[0].to_string()).or_default().push(RunEntry {
                doc_id: fields[2].to_string(),
                rank,
                score,
            });
        }
        let mut run = Run::new(tag.unwrap_or_else(|| "run".to_string()));
        for (qid, entries) in per_query {
            run.insert_entries(qid, entries)?;
        }
        Ok(run)
    }

    /// Emits the canonical TREC form: single spaces, queries in id order.
    pub fn emit_trec(&self) -> String {
        let mut out = String::new();
        for (qid, entries) in &self.rankings {
            for entry in entries {
                out.push_str(&format!(
                    "{qid} Q0 {} {} {} {}\n",
                    entry.doc_id, entry.rank, entry.score, self.tag
                ));
            }
        }
        out
    }

    pub fn write_trec(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.emit_trec()).map_err(|e| Error::io(path, e))
    }
}

/// Graded judgments: qid -> doc_id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations<'a>(observations: impl IntoIterator<Item = &'a Observation>) -> Qrels {
        let mut qrels = Qrels::new();
        for obs in observations {
            qrels
                .judgments
                .entry(obs.qid.clone())
                .or_default()
                .insert(obs.doc_id.clone(), obs.rel);
        }
        qrels
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, rel: u8) {
        self.judgments
            .entry(qid.into())
            .or_default()
            .insert(doc_id.into(), rel);
    }

    pub fn judgment(&self, qid: &str, doc_id: &str) -> Option<u8> {
        self.judgments.get(qid).and_then(|docs| docs.get(doc_id)).copied()
    }

    pub fn judged_docs(&self, qid: &str) -> Option<&BTreeMap<String, u8>> {
        self.judgments.get(qid)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Drops every judgment whose doc_id fails the predicate; queries
    /// left without judgments are removed.
    pub fn retain_docs(&self, keep: impl Fn(&str) -> bool) -> Qrels {
        let mut out = Qrels::new();
        for (qid, docs) in &self.judgments {
            let kept: BTreeMap<String, u8> = docs
                .iter()
                .filter(|(doc, _)| keep(doc))
                .map(|(doc, rel)| (doc.clone(), *rel))
                .collect();
            if !kept.is_empty() {
                out.judgments.insert(qid.clone(), kept);
            }
        }
        out
    }

    pub fn parse_trec(path: &Path) -> Result<Qrels> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut qrels = Qrels::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let rel: u8 = fields[3]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad grade {:?}", fields[3])))?;
            if rel > crate::history::MAX_GRADE {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("relevance grade {rel} outside 0..={}", crate::history::MAX_GRADE),
                ));
            }
            qrels.insert(fields[0], fields[2], rel);
        }
        Ok(qrels)
    }

    pub fn emit_trec(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.judgments {
            for (doc, rel) in docs {
                out.push_str(&format!("{qid} 0 {doc} {rel}\n"));
            }
        }
        out
    }

    pub fn write_trec(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.emit_trec()).map_err(|e| Error::io(path, e))
    }
}

/// Per-query metric scores plus their mean and exclusion diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries in the run with no qrels entry at all.
    pub excluded_no_judgments: BTreeSet<String>,
    /// Queries whose qrels contain no positive grade.
    pub excluded_no_positive: BTreeSet<String>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("qid\t{}@{}\n", self.metric, self.k);
        for (qid, score) in &self.per_query {
            out.push_str(&format!("{qid}\t{score}\n"));
        }
        out.push_str(&format!("mean\t{}\n", self.mean));
        out.push_str(&format!(
            "#excluded_no_judgments\t{}\n#excluded_no_positive\t{}\n",
            self.excluded_no_judgments.len(),
            self.excluded_no_positive.len()
        ));
        out
    }
}

/// nDCG@k for one ranked document list against one query's judgments.
/// Returns None when the judgments contain no positive grade.
pub fn ndcg_single(ranked_docs: &[&str], judged: &BTreeMap<String, u8>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u8> = judged.values().copied().filter(|g| *g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| *g as f64 / ((i + 2) as f64).log2())
        .sum();
    let dcg: f64 = ranked_docs
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc)| {
            let gain = judged.get(*doc).copied().unwrap_or(0) as f64;
            gain / ((i + 2) as f64).log2()
        })
        .sum();
    Some(dcg / idcg)
}

/// nDCG@k over a run. Queries without qrels or without positive
/// judgments are excluded from the mean and reported in the diagnostics
/// fields.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::Precondition("ndcg cutoff must be >= 1".into()));
    }
    let mut report = EvalReport {
        metric: "ndcg".into(),
        k,
        per_query: BTreeMap::new(),
        mean: 0.0,
        excluded_no_judgments: BTreeSet::new(),
        excluded_no_positive: BTreeSet::new(),
    };
    for qid in run.queries() {
        let Some(judged) = qrels.judged_docs(qid) else {
            report.excluded_no_judgments.insert(qid.to_string());
            continue;
        };
        let ranked: Vec<&str> = run
            .entries(qid)
            .unwrap()
            .iter()
            .map(|e| e.doc_id.as_str())
            .collect();
        match ndcg_single(&ranked, judged, k) {
            Some(score) => {
                report.per_query.insert(qid.to_string(), score);
            }
            None => {
                report.excluded_no_positive.insert(qid.to_string());
            }
        }
    }
    if !report.per_query.is_empty() {
        report.mean = report.per_query.values().sum::<f64>() / report.per_query.len() as f64;
    }
    Ok(report)
}

/// Removes unjudged documents from every result list and re-ranks
/// contiguously, preserving order and scores. Composing with
/// [`ndcg_at_k`] yields the condensed metric variant.
pub fn condense_run(run: &Run, qrels: &Qrels) -> Run {
    let mut out = Run::new(run.tag().to_string());
    for qid in run.queries() {
        let entries: Vec<RunEntry> = run
            .entries(qid)
            .unwrap()
            .iter()
            .filter(|e| qrels.judgment(qid, &e.doc_id).is_some())
            .enumerate()
            .map(|(i, e)| RunEntry {
                doc_id: e.doc_id.clone(),
                rank: i + 1,
                score: e.score,
            })
            .collect();
        out.rankings.insert(qid.to_string(), entries);
    }
    out
}

/// Outcome of one paired comparison against the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceResult {
    pub mean_diff: f64,
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    /// True when the difference vector had zero variance and the p-value
    /// is a limit rather than a t-test result.
    pub degenerate: bool,
}

/// Two-sided paired t-test of every system against `baseline` over the
/// shared query set, with Bonferroni adjustment
/// p_adjusted = min(1, p_raw * num_comparisons).
pub fn paired_ttest_bonferroni(
    reports: &BTreeMap<String, &EvalReport>,
    baseline: &str,
    num_comparisons: usize,
    alpha: f64,
) -> Result<BTreeMap<String, SignificanceResult>> {
    if num_comparisons == 0 {
        return Err(Error::Precondition("num_comparisons must be >= 1".into()));
    }
    let base = reports
        .get(baseline)
        .ok_or_else(|| Error::Precondition(format!("baseline {baseline} missing from reports")))?;
    let mut out = BTreeMap::new();
    for (system, report) in reports {
        if system == baseline {
            continue;
        }
        let diffs: Vec<f64> = report
            .per_query
            .iter()
            .filter_map(|(qid, score)| base.per_query.get(qid).map(|b| score - b))
            .collect();
        let n = diffs.len();
        if n < 2 {
            return Err(Error::Precondition(format!(
                "system {system} shares fewer than 2 queries with {baseline}"
            )));
        }
        // A constant difference vector has zero variance; the t statistic
        // is undefined and the limits apply.
        let constant = diffs.windows(2).all(|w| w[0] == w[1]);
        let mean = if constant {
            diffs[0]
        } else {
            diffs.iter().sum::<f64>() / n as f64
        };
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (t_stat, p_raw, degenerate) = if constant || var == 0.0 {
            if mean == 0.0 {
                (0.0, 1.0, true)
            } else {
                (f64::INFINITY * mean.signum(), 0.0, true)
            }
        } else {
            let t = mean / (var / n as f64).sqrt();
            let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("valid t distribution for n >= 2");
            let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
            (t, p, false)
        };
        let p_adjusted = (p_raw * num_comparisons as f64).min(1.0);
        out.insert(
            system.clone(),
            SignificanceResult {
                mean_diff: mean,
                t_stat,
                p_raw,
                p_adjusted,
                significant: p_adjusted < alpha,
                degenerate,
            },
        );
    }
    Ok(out)
}

/// Drops every document that occurs in any previous snapshot from both
/// the run and the qrels, re-ranking the survivors contiguously. What
/// remains references only documents never seen before.
pub fn ablation_filter_new(
    run: &Run,
    qrels: &Qrels,
    previous_snapshots: &[&Snapshot],
) -> Result<(Run, Qrels)> {
    if previous_snapshots.is_empty() {
        return Err(Error::Precondition(
            "ablation requires at least one previous snapshot".into(),
        ));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    for snapshot in previous_snapshots {
        seen.extend(snapshot.doc_ids());
    }
    let mut filtered = Run::new(run.tag().to_string());
    for qid in run.queries() {
        let entries: Vec<RunEntry> = run
            .entries(qid)
            .unwrap()
            .iter()
            .filter(|e| !seen.contains(e.doc_id.as_str()))
            .enumerate()
            .map(|(i, e)| RunEntry {
                doc_id: e.doc_id.clone(),
                rank: i + 1,
                score: e.score,
            })
            .collect();
        filtered.rankings.insert(qid.to_string(), entries);
    }
    let filtered_qrels = qrels.retain_docs(|doc| !seen.contains(doc));
    Ok((filtered, filtered_qrels))
}
