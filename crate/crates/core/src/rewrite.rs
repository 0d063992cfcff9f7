//! Counterfactual query rewriting from historical relevance feedback.
//!
//! Three approaches share the same inputs (a query, the feedback store,
//! and per-timestamp snapshots/indexes) and degrade to plain retrieval
//! when a query has no usable history:
//!
//! * score boosting multiplies retrieval scores by per-observation
//!   factors,
//! * relevance-feedback expansion appends the top tf-idf terms of the
//!   previously positive documents,
//! * keyquery construction enumerates candidate expansions and keeps the
//!   minimal one that ranks all previously positive documents to the top
//!   while staying general enough.
//!
//! Superseded document versions are used as if they were still current:
//! texts and collection statistics come from the snapshot where the
//! feedback was observed, and deleted documents are re-injected into a
//! union index when keyquery candidates are tested.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use itertools::Itertools;
use rayon::prelude::*;

use crate::corpus::{DocumentVersion, Snapshot, Timestamp};
use crate::error::{Error, Result};
use crate::eval::ndcg_single;
use crate::history::FeedbackStore;
use crate::index::{InvertedIndex, Ranking, WeightedQuery, relevance_model, tfidf_terms};

/// Boost weighting. `lambda` must lie strictly inside (0, 1) so both
/// squared factors stay positive; `mu` scales the top grade.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostParams {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            lambda: 0.7,
            mu: 2.0,
        }
    }
}

impl BoostParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        let params = BoostParams { lambda, mu };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda {} outside (0, 1)",
                self.lambda
            )));
        }
        if self.mu <= 0.0 {
            return Err(Error::Config(format!("mu {} must be positive", self.mu)));
        }
        Ok(())
    }

    /// Per-observation score multiplier for one relevance grade.
    pub fn multiplier(&self, rel: u8) -> f64 {
        match rel {
            0 => (1.0 - self.lambda) * (1.0 - self.lambda),
            1 => self.lambda * self.lambda,
            _ => self.lambda * self.lambda * self.mu,
        }
    }
}

/// Rescales every ranked document's score by the product of the
/// multipliers of its observations before `now`, then re-sorts.
/// Documents without history keep their score untouched, so an empty
/// store leaves the ranking bit-identical.
pub fn boost_rerank(
    ranking: &Ranking,
    store: &FeedbackStore,
    now: &Timestamp,
    params: &BoostParams,
) -> Ranking {
    let qid = ranking.qid();
    let rescored: Vec<(String, f64)> = ranking
        .entries()
        .iter()
        .map(|entry| {
            let observations = store.observations_for(qid, &entry.doc_id, now);
            let score = if observations.is_empty() {
                entry.score
            } else {
                observations
                    .iter()
                    .fold(entry.score, |acc, obs| acc * params.multiplier(obs.rel))
            };
            (entry.doc_id.clone(), score)
        })
        .collect();
    Ranking::from_scores(qid.to_string(), rescored)
}

/// Per-timestamp snapshots paired with their indexes. The rewriting
/// operations resolve historical document versions and collection
/// statistics through this archive.
#[derive(Debug, Default)]
pub struct HistoricalArchive {
    entries: BTreeMap<Timestamp, (Snapshot, InvertedIndex)>,
}

impl HistoricalArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, snapshot: Snapshot, index: InvertedIndex) -> Result<()> {
        if snapshot.timestamp() != index.timestamp() {
            return Err(Error::Integrity(format!(
                "snapshot {} paired with index {}",
                snapshot.timestamp(),
                index.timestamp()
            )));
        }
        let ts = snapshot.timestamp().clone();
        if self.entries.contains_key(&ts) {
            return Err(Error::Integrity(format!("duplicate timestamp {ts}")));
        }
        self.entries.insert(ts, (snapshot, index));
        Ok(())
    }

    pub fn timestamps(&self) -> impl Iterator<Item = &Timestamp> {
        self.entries.keys()
    }

    pub fn snapshot_at(&self, ts: &Timestamp) -> Option<&Snapshot> {
        self.entries.get(ts).map(|(s, _)| s)
    }

    pub fn index_at(&self, ts: &Timestamp) -> Option<&InvertedIndex> {
        self.entries.get(ts).map(|(_, i)| i)
    }

    pub fn document(&self, doc_id: &str, ts: &Timestamp) -> Option<&DocumentVersion> {
        self.snapshot_at(ts).and_then(|s| s.get(doc_id))
    }
}

/// Resolves D+ as (doc version, grade) pairs, each document taken from
/// its most recent positive timestamp before `now`.
fn positive_versions<'a>(
    store: &FeedbackStore,
    archive: &'a HistoricalArchive,
    qid: &str,
    now: &Timestamp,
) -> Result<Vec<(&'a DocumentVersion, u8)>> {
    let latest = store.latest_positive_versions(qid, now);
    let mut out = Vec::with_capacity(latest.len());
    for (doc_id, (ts, grade)) in &latest {
        let doc = archive.document(doc_id, ts).ok_or_else(|| {
            Error::Integrity(format!(
                "history references {doc_id} at {ts} but the snapshot does not contain it"
            ))
        })?;
        out.push((doc, *grade));
    }
    Ok(out)
}

/// Most recent timestamp before `now` at which positive feedback for the
/// query was observed. Feedback statistics are taken from that
/// snapshot's index.
fn feedback_statistics_timestamp(docs: &[(&DocumentVersion, u8)]) -> Timestamp {
    docs.iter()
        .map(|(doc, _)| doc.timestamp.clone())
        .max()
        .expect("positive set is non-empty")
}

/// Expands the query with the `k` highest tf-idf terms of the previously
/// positive documents, each appended with weight 1 (duplicates merge by
/// summation). Queries without positive history are returned unchanged.
pub fn rf_expand(
    query: &WeightedQuery,
    store: &FeedbackStore,
    archive: &HistoricalArchive,
    now: &Timestamp,
    k: usize,
) -> Result<WeightedQuery> {
    if k == 0 {
        return Err(Error::Precondition("rf expansion requires k >= 1".into()));
    }
    let positives = positive_versions(store, archive, query.source_qid(), now)?;
    if positives.is_empty() {
        return Ok(query.clone());
    }
    let stats_ts = feedback_statistics_timestamp(&positives);
    let index = archive.index_at(&stats_ts).ok_or_else(|| {
        Error::Integrity(format!("no index for historical timestamp {stats_ts}"))
    })?;
    let docs: Vec<&DocumentVersion> = positives.iter().map(|(d, _)| *d).collect();
    let terms = tfidf_terms(&docs, index, k)?;
    Ok(query.append_terms(terms.iter().map(|(t, _)| t.as_str())))
}

/// Keyquery search parameters: targets must rank within `top_k`, the
/// candidate must return more than `min_results` documents, candidates
/// are drawn from the `vocab_size` strongest expansion terms, and
/// subsets are capped at `max_candidate_terms` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyqueryParams {
    pub top_k: usize,
    pub min_results: usize,
    pub vocab_size: usize,
    pub max_candidate_terms: usize,
}

impl Default for KeyqueryParams {
    fn default() -> Self {
        KeyqueryParams {
            top_k: 10,
            min_results: 25,
            vocab_size: 10,
            max_candidate_terms: 3,
        }
    }
}

impl KeyqueryParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.vocab_size == 0 || self.max_candidate_terms == 0 {
            return Err(Error::Config(
                "keyquery parameters must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One enumerated candidate: the original query extended with an ordered
/// subset of the expansion vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyqueryCandidate {
    pub query: WeightedQuery,
    pub term_subset: Vec<String>,
    pub generation_index: usize,
}

/// Enumerates candidates deterministically: the original query first,
/// then every subset of `rm3_terms` of size 1..=max_candidate_terms, in
/// order of subset size and lexicographic position of member indices.
pub fn generate_candidates(
    query: &WeightedQuery,
    rm3_terms: &[String],
    params: &KeyqueryParams,
) -> Vec<KeyqueryCandidate> {
    let vocab: Vec<&String> = rm3_terms.iter().take(params.vocab_size).collect();
    let mut candidates = vec![KeyqueryCandidate {
        query: query.clone(),
        term_subset: Vec::new(),
        generation_index: 0,
    }];
    let mut generation_index = 1;
    for size in 1..=params.max_candidate_terms.min(vocab.len()) {
        for subset in (0..vocab.len()).combinations(size) {
            let terms: Vec<String> = subset.iter().map(|i| vocab[*i].clone()).collect();
            candidates.push(KeyqueryCandidate {
                query: query.append_terms(terms.iter().map(String::as_str)),
                term_subset: terms,
                generation_index,
            });
            generation_index += 1;
        }
    }
    candidates
}

/// Evidence gathered when checking a candidate against the first two
/// keyquery criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyqueryVerdict {
    /// Every target ranked within top_k and more than min_results
    /// documents matched.
    pub satisfies_i_and_ii: bool,
    /// Number of documents with positive score for the candidate.
    pub result_count: usize,
    /// Rank of each target within the searched depth, if retrieved.
    pub target_ranks: BTreeMap<String, Option<usize>>,
}

/// Checks specificity (every target in the top_k) and generality (more
/// than min_results matches) for one candidate against the union index.
pub fn is_keyquery(
    candidate: &WeightedQuery,
    targets: &BTreeSet<String>,
    index: &InvertedIndex,
    params: &KeyqueryParams,
) -> Result<KeyqueryVerdict> {
    params.validate()?;
    if targets.is_empty() {
        return Err(Error::Precondition("keyquery check requires targets".into()));
    }
    for target in targets {
        if !index.contains_doc(target) {
            return Err(Error::Precondition(format!(
                "target {target} is not in the index"
            )));
        }
    }
    let depth = params.top_k.max(params.min_results + 1);
    let ranking = index.search(candidate, depth)?;
    let result_count = index.count_matches(candidate);
    let mut target_ranks = BTreeMap::new();
    let mut all_in_top_k = true;
    for target in targets {
        let rank = ranking.rank_of(target);
        if rank.map_or(true, |r| r > params.top_k) {
            all_in_top_k = false;
        }
        target_ranks.insert(target.clone(), rank);
    }
    Ok(KeyqueryVerdict {
        satisfies_i_and_ii: all_in_top_k && result_count > params.min_results,
        result_count,
        target_ranks,
    })
}

/// Selects the keyquery among enumerated candidates: a candidate is a
/// keyquery iff it satisfies the first two criteria and no satisfying
/// candidate with a strictly smaller term subset exists (the original
/// query is the empty subset). Among keyqueries the one with the highest
/// nDCG@10 over the graded targets wins; ties fall back to the lowest
/// generation index. Without any keyquery the original query is
/// returned.
pub fn select_keyquery(
    candidates: &[KeyqueryCandidate],
    targets: &BTreeMap<String, u8>,
    index: &InvertedIndex,
    params: &KeyqueryParams,
) -> Result<WeightedQuery> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidates to select from".into()));
    }
    let target_ids: BTreeSet<String> = targets.keys().cloned().collect();
    let verdicts: Vec<KeyqueryVerdict> = candidates
        .par_iter()
        .map(|c| is_keyquery(&c.query, &target_ids, index, params))
        .collect::<Result<Vec<_>>>()?;

    let satisfying: Vec<(usize, BTreeSet<&str>)> = candidates
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.satisfies_i_and_ii)
        .map(|(c, _)| {
            (
                c.generation_index,
                c.term_subset.iter().map(String::as_str).collect(),
            )
        })
        .collect();

    let is_minimal = |subset: &BTreeSet<&str>| {
        !satisfying
            .iter()
            .any(|(_, other)| other.len() < subset.len() && other.is_subset(subset))
    };

    let mut best: Option<(f64, usize, &KeyqueryCandidate)> = None;
    for (candidate, verdict) in candidates.iter().zip(&verdicts) {
        if !verdict.satisfies_i_and_ii {
            continue;
        }
        let subset: BTreeSet<&str> = candidate.term_subset.iter().map(String::as_str).collect();
        if !is_minimal(&subset) {
            continue;
        }
        let depth = params.top_k.max(params.min_results + 1).max(10);
        let ranking = index.search(&candidate.query, depth)?;
        let ranked: Vec<&str> = ranking.entries().iter().map(|e| e.doc_id.as_str()).collect();
        let ndcg = ndcg_single(&ranked, targets, 10).unwrap_or(0.0);
        let better = match &best {
            None => true,
            Some((best_ndcg, best_index, _)) => {
                ndcg > *best_ndcg
                    || (ndcg == *best_ndcg && candidate.generation_index < *best_index)
            }
        };
        if better {
            best = Some((ndcg, candidate.generation_index, candidate));
        }
    }
    Ok(best
        .map(|(_, _, c)| c.query.clone())
        .unwrap_or_else(|| candidates[0].query.clone()))
}

/// End-to-end keyquery rewriting for one query: resolves D+, derives the
/// expansion vocabulary from the relevance model over the historical
/// versions of the positive documents, enumerates candidates, and
/// selects against the union of the current corpus and the missing
/// historical versions. Queries without positive history fall back to
/// the original query.
pub fn keyquery_rewrite(
    query: &WeightedQuery,
    store: &FeedbackStore,
    archive: &HistoricalArchive,
    now: &Timestamp,
    params: &KeyqueryParams,
) -> Result<WeightedQuery> {
    params.validate()?;
    let positives = positive_versions(store, archive, query.source_qid(), now)?;
    if positives.is_empty() {
        return Ok(query.clone());
    }
    let current_index = archive
        .index_at(now)
        .ok_or_else(|| Error::Precondition(format!("no index for timestamp {now}")))?;
    let current_snapshot = archive
        .snapshot_at(now)
        .ok_or_else(|| Error::Precondition(format!("no snapshot for timestamp {now}")))?;

    // Expansion vocabulary: relevance model over D+ with uniform
    // document weights, statistics from the most recent feedback
    // snapshot, original query terms excluded.
    let stats_ts = feedback_statistics_timestamp(&positives);
    let stats_index = archive.index_at(&stats_ts).ok_or_else(|| {
        Error::Integrity(format!("no index for historical timestamp {stats_ts}"))
    })?;
    let weighted_docs: Vec<(String, f64)> = positives
        .iter()
        .map(|(doc, _)| (doc.doc_id.clone(), 1.0))
        .collect();
    let vocabulary: Vec<String> = relevance_model(stats_index, &weighted_docs)
        .into_iter()
        .map(|(term, _)| term)
        .filter(|term| !query.contains_term(term))
        .take(params.vocab_size)
        .collect();

    let candidates = generate_candidates(query, &vocabulary, params);

    // Union corpus: the current snapshot plus historical versions of
    // positive documents that no longer exist. Current versions win.
    let counterfactual: Vec<&DocumentVersion> = positives
        .iter()
        .map(|(doc, _)| *doc)
        .filter(|doc| !current_snapshot.contains(&doc.doc_id))
        .collect();
    let union_index = current_index.with_documents(counterfactual.iter().copied());

    let targets: BTreeMap<String, u8> = positives
        .iter()
        .map(|(doc, grade)| (doc.doc_id.clone(), *grade))
        .collect();
    select_keyquery(&candidates, &targets, &union_index, params)
}

/// Writes rewritten queries as `qid<TAB>space-separated terms` so they
/// can feed external systems. Weights are dropped.
pub fn export_rewrites(rewrites: &[(String, WeightedQuery)], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (qid, query) in rewrites {
        writeln!(out, "{qid}\t{}", query.term_text()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
