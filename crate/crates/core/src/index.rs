//! Per-snapshot inverted index with BM25 retrieval, feedback term
//! extraction, and RM3 query expansion.
//!
//! The index is immutable after construction and deterministic for a
//! given snapshot: postings and per-document term vectors are held in
//! ordered maps, and scoring accumulates contributions in a fixed order,
//! so identical inputs produce bit-identical rankings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentVersion, Snapshot, Timestamp};
use crate::error::{Error, Result};
use crate::text::Tokenizer;

/// BM25 term-frequency saturation.
pub const BM25_K1: f64 = 1.2;
/// BM25 length normalization.
pub const BM25_B: f64 = 0.75;

const INDEX_FORMAT: &str = "chronir-index";
const INDEX_VERSION: u32 = 1;

/// One postings entry: a document and the term's frequency in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: String,
    pub term_freq: u64,
}

/// Immutable term -> postings structure with collection statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    timestamp: Timestamp,
    tokenizer: Tokenizer,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: BTreeMap<String, u64>,
    // Forward view: doc_id -> (term, tf) sorted by term. Needed by the
    // relevance model and for augmenting the index with extra documents.
    doc_terms: BTreeMap<String, Vec<(String, u64)>>,
    num_docs: usize,
    avg_doc_length: f64,
}

impl InvertedIndex {
    /// Builds the index for a snapshot. Deterministic: documents are
    /// consumed in doc_id order regardless of ingestion order.
    pub fn build(snapshot: &Snapshot, tokenizer: Tokenizer) -> Self {
        let mut index = InvertedIndex {
            timestamp: snapshot.timestamp().clone(),
            tokenizer,
            postings: BTreeMap::new(),
            doc_lengths: BTreeMap::new(),
            doc_terms: BTreeMap::new(),
            num_docs: 0,
            avg_doc_length: 0.0,
        };
        for doc in snapshot.iter() {
            index.add_document(doc);
        }
        index.refresh_stats();
        index
    }

    fn add_document(&mut self, doc: &DocumentVersion) {
        let tokens = self.tokenizer.tokens(&doc.text);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for token in &tokens {
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
        self.doc_lengths.insert(doc.doc_id.clone(), tokens.len() as u64);
        for (term, tf) in &counts {
            let list = self.postings.entry(term.clone()).or_default();
            let pos = list
                .binary_search_by(|p| p.doc_id.as_str().cmp(doc.doc_id.as_str()))
                .unwrap_err();
            list.insert(
                pos,
                Posting {
                    doc_id: doc.doc_id.clone(),
                    term_freq: *tf,
                },
            );
        }
        self.doc_terms
            .insert(doc.doc_id.clone(), counts.into_iter().collect());
    }

    fn refresh_stats(&mut self) {
        self.num_docs = self.doc_lengths.len();
        let total: u64 = self.doc_lengths.values().sum();
        self.avg_doc_length = if self.num_docs == 0 {
            0.0
        } else {
            total as f64 / self.num_docs as f64
        };
    }

    /// Returns a copy of this index extended with documents whose ids are
    /// not yet present. Documents with colliding ids are skipped: the
    /// indexed version wins.
    pub fn with_documents<'a>(
        &self,
        extra: impl IntoIterator<Item = &'a DocumentVersion>,
    ) -> InvertedIndex {
        let mut index = self.clone();
        for doc in extra {
            if !index.doc_lengths.contains_key(&doc.doc_id) {
                index.add_document(doc);
            }
        }
        index.refresh_stats();
        index
    }

    pub fn timestamp(&self) -> &Timestamp {
        &self.timestamp
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn contains_doc(&self, doc_id: &str) -> bool {
        self.doc_lengths.contains_key(doc_id)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u64> {
        self.doc_lengths.get(doc_id).copied()
    }

    /// Number of distinct documents containing `term`.
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn doc_term_counts(&self, doc_id: &str) -> Option<&[(String, u64)]> {
        self.doc_terms.get(doc_id).map(Vec::as_slice)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    /// Smoothed BM25 idf, strictly positive for any indexed term.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_frequency(term) as f64;
        let n = self.num_docs as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`depth` documents by summed per-term BM25 contribution scaled
    /// by the query term weight. Documents matching no query term are
    /// excluded; ties break by ascending doc_id.
    pub fn search(&self, query: &WeightedQuery, depth: usize) -> Result<Ranking> {
        if depth == 0 {
            return Err(Error::Precondition("search depth must be >= 1".into()));
        }
        let mut scores: HashMap<&str, f64> = HashMap::new();
        for (term, weight) in query.terms() {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for posting in postings {
                let dl = self.doc_lengths[&posting.doc_id] as f64;
                let tf = posting.term_freq as f64;
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length);
                let contribution = weight * idf * (tf * (BM25_K1 + 1.0)) / (tf + norm);
                *scores.entry(posting.doc_id.as_str()).or_insert(0.0) += contribution;
            }
        }
        let scored: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(doc, score)| (doc.to_string(), score))
            .collect();
        let mut ranking = Ranking::from_scores(query.source_qid().to_string(), scored);
        ranking.truncate(depth);
        Ok(ranking)
    }

    /// Number of documents containing at least one query term. Because
    /// weights and idf are strictly positive this equals the number of
    /// documents with positive retrieval score.
    pub fn count_matches(&self, query: &WeightedQuery) -> usize {
        let mut docs: BTreeSet<&str> = BTreeSet::new();
        for (term, _) in query.terms() {
            if let Some(postings) = self.postings.get(term) {
                docs.extend(postings.iter().map(|p| p.doc_id.as_str()));
            }
        }
        docs.len()
    }

    /// Persists the index as versioned JSON. Derived statistics are
    /// rebuilt on load, so the file carries only postings, lengths, and
    /// the tokenizer configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            timestamp: self.timestamp.clone(),
            stopwords: self.tokenizer.stopwords().iter().cloned().collect(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self.postings.clone(),
        };
        let out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer(out, &file).map_err(|e| Error::IndexFormat {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<InvertedIndex> {
        let reader = std::io::BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let file: IndexFile = serde_json::from_reader(reader).map_err(|e| Error::IndexFormat {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if file.format != INDEX_FORMAT {
            return Err(Error::IndexFormat {
                path: path.display().to_string(),
                msg: format!("unknown format {:?}", file.format),
            });
        }
        if file.version != INDEX_VERSION {
            return Err(Error::IndexFormat {
                path: path.display().to_string(),
                msg: format!("unsupported version {}", file.version),
            });
        }
        let mut doc_terms: BTreeMap<String, Vec<(String, u64)>> = BTreeMap::new();
        for doc_id in file.doc_lengths.keys() {
            doc_terms.insert(doc_id.clone(), Vec::new());
        }
        for (term, postings) in &file.postings {
            for posting in postings {
                doc_terms
                    .get_mut(&posting.doc_id)
                    .ok_or_else(|| Error::IndexFormat {
                        path: path.display().to_string(),
                        msg: format!("posting references unknown doc {}", posting.doc_id),
                    })?
                    .push((term.clone(), posting.term_freq));
            }
        }
        let mut index = InvertedIndex {
            timestamp: file.timestamp,
            tokenizer: Tokenizer::with_stopwords(file.stopwords.into_iter().collect()),
            postings: file.postings,
            doc_lengths: file.doc_lengths,
            doc_terms,
            num_docs: 0,
            avg_doc_length: 0.0,
        };
        index.refresh_stats();
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    timestamp: Timestamp,
    stopwords: Vec<String>,
    doc_lengths: BTreeMap<String, u64>,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Bag of (term, weight) pairs. Terms are unique; constructing a query
/// merges duplicate terms by summing their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    source_qid: String,
    terms: Vec<(String, f64)>,
}

impl WeightedQuery {
    pub fn new(
        source_qid: impl Into<String>,
        term_weights: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self> {
        let mut terms: Vec<(String, f64)> = Vec::new();
        for (term, weight) in term_weights {
            if weight <= 0.0 || !weight.is_finite() {
                return Err(Error::Precondition(format!(
                    "query term {term:?} has non-positive weight {weight}"
                )));
            }
            match terms.iter_mut().find(|(t, _)| *t == term) {
                Some((_, w)) => *w += weight,
                None => terms.push((term, weight)),
            }
        }
        if terms.is_empty() {
            return Err(Error::Precondition("query has no terms".into()));
        }
        Ok(WeightedQuery {
            source_qid: source_qid.into(),
            terms,
        })
    }

    /// Tokenizes free text into a unit-weight query.
    pub fn from_text(qid: impl Into<String>, text: &str, tokenizer: &Tokenizer) -> Result<Self> {
        WeightedQuery::new(qid, tokenizer.tokens(text).into_iter().map(|t| (t, 1.0)))
    }

    pub fn source_qid(&self) -> &str {
        &self.source_qid
    }

    pub fn terms(&self) -> &[(String, f64)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn weight(&self, term: &str) -> Option<f64> {
        self.terms.iter().find(|(t, _)| t == term).map(|(_, w)| *w)
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.terms.iter().any(|(t, _)| t == term)
    }

    pub fn term_set(&self) -> BTreeSet<&str> {
        self.terms.iter().map(|(t, _)| t.as_str()).collect()
    }

    /// Appends terms with weight 1 each, merging duplicates by summation.
    pub fn append_terms<'a>(&self, extra: impl IntoIterator<Item = &'a str>) -> WeightedQuery {
        let mut terms = self.terms.clone();
        for term in extra {
            match terms.iter_mut().find(|(t, _)| t == term) {
                Some((_, w)) => *w += 1.0,
                None => terms.push((term.to_string(), 1.0)),
            }
        }
        WeightedQuery {
            source_qid: self.source_qid.clone(),
            terms,
        }
    }

    /// Rescales weights to sum to 1.
    pub fn normalized(&self) -> WeightedQuery {
        let total: f64 = self.terms.iter().map(|(_, w)| w).sum();
        WeightedQuery {
            source_qid: self.source_qid.clone(),
            terms: self
                .terms
                .iter()
                .map(|(t, w)| (t.clone(), w / total))
                .collect(),
        }
    }

    /// Space-joined term strings, weights dropped. Used by the rewrite
    /// export format.
    pub fn term_text(&self) -> String {
        self.terms
            .iter()
            .map(|(t, _)| t.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One ranked document.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordered retrieval result: scores non-increasing, ties broken by
/// ascending doc_id, ranks contiguous from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    qid: String,
    entries: Vec<RankedDoc>,
}

impl Ranking {
    /// Sorts scored documents into a ranking, dropping non-positive
    /// scores.
    pub fn from_scores(qid: String, scored: Vec<(String, f64)>) -> Ranking {
        let mut kept: Vec<(String, f64)> = scored.into_iter().filter(|(_, s)| *s > 0.0).collect();
        kept.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        Ranking {
            qid,
            entries: kept
                .into_iter()
                .enumerate()
                .map(|(i, (doc_id, score))| RankedDoc {
                    doc_id,
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn qid(&self) -> &str {
        &self.qid
    }

    pub fn entries(&self) -> &[RankedDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.rank)
    }
}

/// Feedback terms ranked by tf-idf over the concatenated documents:
/// score(t) = tf(t) * ln((N + 1) / (df(t) + 1)) with statistics from
/// `index`. Returns at most `k` terms with strictly positive scores, ties
/// broken lexicographically.
pub fn tfidf_terms(
    docs: &[&DocumentVersion],
    index: &InvertedIndex,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if docs.is_empty() {
        return Err(Error::Precondition(
            "no positive feedback documents to extract terms from".into(),
        ));
    }
    let mut tf: BTreeMap<String, u64> = BTreeMap::new();
    for doc in docs {
        for token in index.tokenizer().tokens(&doc.text) {
            *tf.entry(token).or_insert(0) += 1;
        }
    }
    let n = index.num_docs() as f64;
    let mut scored: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(term, freq)| {
            let df = index.doc_frequency(&term) as f64;
            let idf = ((n + 1.0) / (df + 1.0)).ln();
            (term, freq as f64 * idf)
        })
        .filter(|(_, score)| *score > 0.0)
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// RM3 expansion parameters. The defaults mirror the common platform
/// defaults: 3 feedback documents, 10 feedback terms, and an even mix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rm3Params {
    pub fb_docs: usize,
    pub fb_terms: usize,
    pub orig_weight: f64,
}

impl Default for Rm3Params {
    fn default() -> Self {
        Rm3Params {
            fb_docs: 3,
            fb_terms: 10,
            orig_weight: 0.5,
        }
    }
}

impl Rm3Params {
    fn validate(&self) -> Result<()> {
        if self.fb_docs == 0 || self.fb_terms == 0 {
            return Err(Error::Precondition(
                "rm3 requires fb_docs >= 1 and fb_terms >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.orig_weight) {
            return Err(Error::Precondition(format!(
                "rm3 orig_weight {} outside [0, 1]",
                self.orig_weight
            )));
        }
        Ok(())
    }
}

/// Relevance-model term distribution over weighted feedback documents:
/// P(t) is proportional to the weighted sum of per-document language
/// models P(t|d) = tf/|d|. Document weights are normalized internally.
/// Returns the full distribution sorted by probability (ties by term).
pub fn relevance_model(
    index: &InvertedIndex,
    weighted_docs: &[(String, f64)],
) -> Vec<(String, f64)> {
    let total_weight: f64 = weighted_docs.iter().map(|(_, w)| w).sum();
    if total_weight <= 0.0 {
        return Vec::new();
    }
    let mut probs: BTreeMap<&str, f64> = BTreeMap::new();
    for (doc_id, weight) in weighted_docs {
        let Some(counts) = index.doc_term_counts(doc_id) else {
            continue;
        };
        let Some(dl) = index.doc_length(doc_id) else {
            continue;
        };
        if dl == 0 {
            continue;
        }
        let w = weight / total_weight;
        for (term, tf) in counts {
            *probs.entry(term.as_str()).or_insert(0.0) += w * (*tf as f64 / dl as f64);
        }
    }
    let mut out: Vec<(String, f64)> = probs
        .into_iter()
        .map(|(t, p)| (t.to_string(), p))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    out.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("probabilities are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    out
}

/// Pseudo-relevance-feedback expansion: retrieves `fb_docs` documents,
/// estimates the relevance model over them with the BM25 scores as
/// document weights, keeps the `fb_terms` most probable terms, and mixes
/// the renormalized expansion model with the normalized original query
/// at `orig_weight` vs `1 - orig_weight`. Output weights sum to 1.
/// A query that retrieves nothing is returned normalized and unchanged.
pub fn rm3_expand(
    index: &InvertedIndex,
    query: &WeightedQuery,
    params: &Rm3Params,
) -> Result<WeightedQuery> {
    params.validate()?;
    let normalized = query.normalized();
    let ranking = index.search(query, params.fb_docs)?;
    if ranking.is_empty() {
        return Ok(normalized);
    }
    let weighted_docs: Vec<(String, f64)> = ranking
        .entries()
        .iter()
        .map(|e| (e.doc_id.clone(), e.score))
        .collect();
    let mut expansion = relevance_model(index, &weighted_docs);
    expansion.truncate(params.fb_terms);
    let expansion_mass: f64 = expansion.iter().map(|(_, p)| p).sum();
    if expansion_mass <= 0.0 {
        return Ok(normalized);
    }
    let expansion: BTreeMap<String, f64> = expansion
        .into_iter()
        .map(|(t, p)| (t, p / expansion_mass))
        .collect();

    let w = params.orig_weight;
    let mut terms: Vec<(String, f64)> = Vec::new();
    for (term, orig_p) in normalized.terms() {
        let exp_p = expansion.get(term).copied().unwrap_or(0.0);
        let mixed = w * orig_p + (1.0 - w) * exp_p;
        if mixed > 0.0 {
            terms.push((term.clone(), mixed));
        }
    }
    // Expansion-only terms, highest probability first.
    let mut rest: Vec<(&String, &f64)> = expansion
        .iter()
        .filter(|(t, _)| !normalized.contains_term(t))
        .collect();
    rest.sort_by(|a, b| {
        b.1.partial_cmp(a.1)
            .expect("probabilities are finite")
            .then_with(|| a.0.cmp(b.0))
    });
    for (term, exp_p) in rest {
        let mixed = (1.0 - w) * exp_p;
        if mixed > 0.0 {
            terms.push((term.clone(), mixed));
        }
    }
    WeightedQuery::new(query.source_qid(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Snapshot;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> DocumentVersion {
        DocumentVersion {
            doc_id: id.to_string(),
            timestamp: Timestamp::new("t0"),
            url: None,
            text: text.to_string(),
        }
    }

    fn index_of(docs: &[(&str, &str)]) -> InvertedIndex {
        let snapshot = Snapshot::from_documents(
            Timestamp::new("t0"),
            docs.iter().map(|(id, text)| doc(id, text)),
        )
        .unwrap();
        InvertedIndex::build(&snapshot, Tokenizer::new())
    }

    fn query(terms: &[&str]) -> WeightedQuery {
        WeightedQuery::new("q1", terms.iter().map(|t| (t.to_string(), 1.0))).unwrap()
    }

    /// Straight-line BM25 over raw documents, used as the scoring oracle.
    fn bm25_oracle(docs: &[(&str, &str)], terms: &[&str]) -> Vec<(String, f64)> {
        let tokenized: Vec<(String, Vec<String>)> = docs
            .iter()
            .map(|(id, text)| (id.to_string(), crate::text::tokenize(text)))
            .collect();
        let n = tokenized.len() as f64;
        let avg: f64 = tokenized.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
        let mut scores: Vec<(String, f64)> = Vec::new();
        for (id, tokens) in &tokenized {
            let mut score = 0.0;
            for term in terms {
                let tf = tokens.iter().filter(|t| t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = tokenized
                    .iter()
                    .filter(|(_, toks)| toks.iter().any(|t| t == term))
                    .count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * tokens.len() as f64 / avg);
                score += idf * (tf * (BM25_K1 + 1.0)) / (tf + norm);
            }
            if score > 0.0 {
                scores.push((id.clone(), score));
            }
        }
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scores
    }

    #[test]
    fn build_counts_terms_and_lengths() {
        let idx = index_of(&[("d1", "a a b")]);
        assert_eq!(
            idx.postings("a").unwrap(),
            &[Posting {
                doc_id: "d1".into(),
                term_freq: 2
            }]
        );
        assert_eq!(idx.postings("b").unwrap().len(), 1);
        assert_eq!(idx.avg_doc_length(), 3.0);
        assert_eq!(idx.num_docs(), 1);
    }

    #[test]
    fn build_empty_snapshot() {
        let idx = index_of(&[]);
        assert_eq!(idx.num_docs(), 0);
        assert!(idx.search(&query(&["a"]), 10).unwrap().is_empty());
    }

    #[test]
    fn doc_frequencies_match_hand_count() {
        let idx = index_of(&[("d1", "bird song"), ("d2", "bird nest"), ("d3", "ring tone")]);
        assert_eq!(idx.doc_frequency("bird"), 2);
        assert_eq!(idx.doc_frequency("song"), 1);
        assert_eq!(idx.doc_frequency("tone"), 1);
        assert_eq!(idx.doc_frequency("absent"), 0);
        // df equals the number of distinct docs in the postings list.
        for term in ["bird", "song", "ring"] {
            assert_eq!(idx.doc_frequency(term), idx.postings(term).unwrap().len());
        }
    }

    #[test]
    fn single_candidate_ranks_first() {
        let idx = index_of(&[("d1", "bird song"), ("d2", "phone tone")]);
        let ranking = idx.search(&query(&["song"]), 10).unwrap();
        assert_eq!(ranking.entries().len(), 1);
        assert_eq!(ranking.entries()[0].doc_id, "d1");
        assert_eq!(ranking.entries()[0].rank, 1);
    }

    #[test]
    fn out_of_vocabulary_query_is_empty_not_error() {
        let idx = index_of(&[("d1", "bird song")]);
        assert!(idx.search(&query(&["zebra"]), 10).unwrap().is_empty());
    }

    #[test]
    fn zero_depth_is_rejected() {
        let idx = index_of(&[("d1", "bird song")]);
        assert!(matches!(
            idx.search(&query(&["bird"]), 0).unwrap_err(),
            Error::Precondition(_)
        ));
    }

    #[test]
    fn search_matches_bm25_oracle() {
        let docs = [
            ("d1", "bird song bird melody"),
            ("d2", "song of the nightingale song song"),
            ("d3", "phone ring tones for free"),
            ("d4", "bird watching in france"),
            ("d5", "bird song recordings bird song archive"),
        ];
        let idx = index_of(&docs);
        let ranking = idx.search(&query(&["bird", "song"]), 10).unwrap();
        let expected = bm25_oracle(&docs, &["bird", "song"]);
        assert_eq!(ranking.len(), expected.len());
        for (entry, (doc, score)) in ranking.entries().iter().zip(&expected) {
            assert_eq!(&entry.doc_id, doc);
            assert!((entry.score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn ingestion_order_does_not_change_rankings() {
        let docs = vec![
            doc("d3", "bird song archive"),
            doc("d1", "bird song bird"),
            doc("d2", "phone tones"),
        ];
        let mut reversed = docs.clone();
        reversed.reverse();
        let a = InvertedIndex::build(
            &Snapshot::from_documents(Timestamp::new("t0"), docs).unwrap(),
            Tokenizer::new(),
        );
        let b = InvertedIndex::build(
            &Snapshot::from_documents(Timestamp::new("t0"), reversed).unwrap(),
            Tokenizer::new(),
        );
        assert_eq!(a, b);
        let ra = a.search(&query(&["bird", "song"]), 10).unwrap();
        let rb = b.search(&query(&["bird", "song"]), 10).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn corpus_growth_rescores_exactly_like_oracle() {
        // Adding a document without query terms changes scores only via
        // idf and avg_doc_length; recomputation must match the oracle
        // exactly.
        let mut docs = vec![
            ("d1", "bird song bird"),
            ("d2", "song archive"),
            ("d3", "phone tones"),
        ];
        let before = index_of(&docs).search(&query(&["bird", "song"]), 10).unwrap();
        docs.push(("d4", "completely unrelated text"));
        let after = index_of(&docs).search(&query(&["bird", "song"]), 10).unwrap();
        let expected = bm25_oracle(&docs, &["bird", "song"]);
        let order_before: Vec<&str> = before.entries().iter().map(|e| e.doc_id.as_str()).collect();
        let order_after: Vec<&str> = after.entries().iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(order_before, order_after);
        for (entry, (doc, score)) in after.entries().iter().zip(&expected) {
            assert_eq!(&entry.doc_id, doc);
            assert_eq!(entry.score, *score);
        }
    }

    #[test]
    fn tfidf_prefers_high_tf_low_df() {
        let idx = index_of(&[("d1", "apple apple banana"), ("d2", "banana cherry")]);
        let feedback = doc("f1", "apple apple banana");
        let top = tfidf_terms(&[&feedback], &idx, 1).unwrap();
        assert_eq!(top[0].0, "apple");
    }

    #[test]
    fn tfidf_truncation_noop_when_k_exceeds_vocab() {
        let idx = index_of(&[("d1", "apple banana"), ("d2", "cherry")]);
        let feedback = doc("f1", "apple banana");
        let top = tfidf_terms(&[&feedback], &idx, 100).unwrap();
        assert_eq!(top.len(), 2);
    }

    #[test]
    fn tfidf_rejects_empty_docs() {
        let idx = index_of(&[("d1", "a")]);
        assert!(matches!(
            tfidf_terms(&[], &idx, 5).unwrap_err(),
            Error::Precondition(_)
        ));
    }

    #[test]
    fn tfidf_matches_exhaustive_oracle() {
        let corpus: Vec<(String, String)> = (0..10)
            .map(|i| {
                let text = match i % 4 {
                    0 => format!("alpha beta gamma doc{i}"),
                    1 => format!("beta delta doc{i}"),
                    2 => format!("gamma epsilon zeta doc{i}"),
                    _ => format!("eta theta doc{i}"),
                };
                (format!("d{i}"), text)
            })
            .collect();
        let refs: Vec<(&str, &str)> = corpus
            .iter()
            .map(|(id, text)| (id.as_str(), text.as_str()))
            .collect();
        let idx = index_of(&refs);
        let feedback = [
            doc("f1", "alpha alpha beta"),
            doc("f2", "beta gamma gamma"),
            doc("f3", "alpha zeta"),
        ];
        let feedback_refs: Vec<&DocumentVersion> = feedback.iter().collect();
        let got = tfidf_terms(&feedback_refs, &idx, 10).unwrap();

        // Exhaustive score-and-sort over the concatenated feedback text.
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for d in &feedback {
            for tok in crate::text::tokenize(&d.text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let n = refs.len() as f64;
        let mut expected: Vec<(String, f64)> = counts
            .into_iter()
            .map(|(t, tf)| {
                let df = refs
                    .iter()
                    .filter(|(_, text)| crate::text::tokenize(text).contains(&t))
                    .count() as f64;
                (t, tf as f64 * ((n + 1.0) / (df + 1.0)).ln())
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        assert_eq!(got.len(), expected.len());
        for ((t1, s1), (t2, s2)) in got.iter().zip(&expected) {
            assert_eq!(t1, t2);
            assert!((s1 - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn tfidf_is_order_invariant() {
        let idx = index_of(&[("d1", "a b c"), ("d2", "c d")]);
        let f1 = doc("f1", "a a b");
        let f2 = doc("f2", "c d d");
        let forward = tfidf_terms(&[&f1, &f2], &idx, 10).unwrap();
        let backward = tfidf_terms(&[&f2, &f1], &idx, 10).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn rm3_degenerate_mixture_reproduces_original() {
        let idx = index_of(&[("d1", "x x y"), ("d2", "x y z")]);
        let q = query(&["x", "y"]);
        let params = Rm3Params {
            orig_weight: 1.0,
            ..Rm3Params::default()
        };
        let expanded = rm3_expand(&idx, &q, &params).unwrap();
        assert_eq!(expanded, q.normalized());
    }

    #[test]
    fn rm3_frequency_dominance() {
        let idx = index_of(&[("d1", "x x y"), ("d2", "x x y"), ("d3", "x x y")]);
        let expanded = rm3_expand(&idx, &query(&["x"]), &Rm3Params::default()).unwrap();
        for (term, _) in expanded.terms() {
            assert!(term == "x" || term == "y");
        }
        assert!(expanded.weight("x").unwrap() > expanded.weight("y").unwrap());
    }

    #[test]
    fn rm3_no_results_returns_normalized_original() {
        let idx = index_of(&[("d1", "a b")]);
        let q = query(&["zebra", "lion"]);
        let expanded = rm3_expand(&idx, &q, &Rm3Params::default()).unwrap();
        assert_eq!(expanded, q.normalized());
    }

    #[test]
    fn rm3_matches_relevance_model_oracle() {
        let docs = [
            ("d1", "wing wing feather"),
            ("d2", "wing beak"),
            ("d3", "feather nest wing"),
            ("d4", "stone brick"),
            ("d5", "wing feather feather song"),
            ("d6", "brick stone wall"),
            ("d7", "song nest"),
            ("d8", "wall stone"),
        ];
        let idx = index_of(&docs);
        let q = query(&["wing"]);
        let params = Rm3Params::default();
        let ranking = idx.search(&q, params.fb_docs).unwrap();

        // Independent RM1 computation over the same feedback documents.
        let total: f64 = ranking.entries().iter().map(|e| e.score).sum();
        let mut expected: BTreeMap<String, f64> = BTreeMap::new();
        for entry in ranking.entries() {
            let text = docs.iter().find(|(id, _)| *id == entry.doc_id).unwrap().1;
            let tokens = crate::text::tokenize(text);
            let dl = tokens.len() as f64;
            let mut seen = std::collections::HashSet::new();
            for tok in &tokens {
                if seen.insert(tok.clone()) {
                    let tf = tokens.iter().filter(|t| *t == tok).count() as f64;
                    *expected.entry(tok.clone()).or_insert(0.0) += (entry.score / total) * tf / dl;
                }
            }
        }
        let weighted: Vec<(String, f64)> = ranking
            .entries()
            .iter()
            .map(|e| (e.doc_id.clone(), e.score))
            .collect();
        let got = relevance_model(&idx, &weighted);
        assert_eq!(got.len(), expected.len());
        for (term, p) in &got {
            assert!((p - expected[term]).abs() < 1e-12, "term {term}");
        }
    }

    #[test]
    fn index_persistence_roundtrip() {
        let idx = index_of(&[("d1", "bird song"), ("d2", "phone tones"), ("d3", "")]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let loaded = InvertedIndex::load(&path).unwrap();
        assert_eq!(idx, loaded);
    }

    #[test]
    fn index_load_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        std::fs::write(
            &path,
            r#"{"format":"chronir-index","version":99,"timestamp":"t0","stopwords":[],"doc_lengths":{},"postings":{}}"#,
        )
        .unwrap();
        assert!(matches!(
            InvertedIndex::load(&path).unwrap_err(),
            Error::IndexFormat { .. }
        ));
    }

    #[test]
    fn with_documents_skips_collisions() {
        let idx = index_of(&[("d1", "old text")]);
        let extra = [doc("d1", "new text"), doc("d2", "fresh doc")];
        let union = idx.with_documents(extra.iter());
        assert_eq!(union.num_docs(), 2);
        // Colliding id keeps the indexed version.
        assert_eq!(union.doc_frequency("old"), 1);
        assert_eq!(union.doc_frequency("new"), 0);
        assert_eq!(union.doc_frequency("fresh"), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ranking_scores_are_non_increasing(texts in proptest::collection::vec("[a-d ]{0,20}", 1..12)) {
            let docs: Vec<DocumentVersion> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| doc(&format!("d{i}"), t))
                .collect();
            let snapshot = Snapshot::from_documents(Timestamp::new("t0"), docs).unwrap();
            let idx = InvertedIndex::build(&snapshot, Tokenizer::new());
            let ranking = idx.search(&query(&["a", "b"]), 50).unwrap();
            for pair in ranking.entries().windows(2) {
                prop_assert!(pair[0].score >= pair[1].score);
                if pair[0].score == pair[1].score {
                    prop_assert!(pair[0].doc_id < pair[1].doc_id);
                }
            }
            for (i, entry) in ranking.entries().iter().enumerate() {
                prop_assert_eq!(entry.rank, i + 1);
            }
        }

        #[test]
        fn rm3_weights_sum_to_one(
            texts in proptest::collection::vec("[a-e]( [a-e]){0,8}", 2..10),
            orig_weight in 0.05f64..1.0,
        ) {
            let docs: Vec<DocumentVersion> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| doc(&format!("d{i}"), t))
                .collect();
            let snapshot = Snapshot::from_documents(Timestamp::new("t0"), docs).unwrap();
            let idx = InvertedIndex::build(&snapshot, Tokenizer::new());
            let q = query(&["a", "c"]);
            let params = Rm3Params { orig_weight, ..Rm3Params::default() };
            let expanded = rm3_expand(&idx, &q, &params).unwrap();
            let sum: f64 = expanded.terms().iter().map(|(_, w)| w).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            // Every original term keeps at least its mixed share.
            let normalized = q.normalized();
            for (term, w) in normalized.terms() {
                let got = expanded.weight(term).unwrap();
                prop_assert!(got >= orig_weight * w - 1e-12);
            }
        }
    }
}
