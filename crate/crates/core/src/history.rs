//! Historical relevance feedback.
//!
//! Observations are (qid, doc_id, timestamp, grade) tuples loaded from
//! TREC qrels files; a manifest maps each qrels file to its timestamp
//! label. The store is immutable after loading and answers the per-query
//! lookups the rewriting approaches need. Lookups with a `before` cutoff
//! are strict: feedback observed at the current timestamp is never
//! visible to rewriting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::corpus::Timestamp;
use crate::error::{Error, Result};

/// Maximum relevance grade. Grades above this are rejected rather than
/// clamped so data errors surface instead of silently degrading.
pub const MAX_GRADE: u8 = 2;

/// One graded relevance judgment observed at one timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub qid: String,
    pub doc_id: String,
    pub timestamp: Timestamp,
    pub rel: u8,
}

impl Observation {
    pub fn new(qid: impl Into<String>, doc_id: impl Into<String>, timestamp: Timestamp, rel: u8) -> Result<Self> {
        if rel > MAX_GRADE {
            return Err(Error::Integrity(format!(
                "relevance grade {rel} outside 0..={MAX_GRADE}"
            )));
        }
        Ok(Observation {
            qid: qid.into(),
            doc_id: doc_id.into(),
            timestamp,
            rel,
        })
    }
}

/// Set of historical observations indexed by qid and (qid, doc_id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackStore {
    // qid -> doc_id -> observations sorted by timestamp
    by_query: BTreeMap<String, BTreeMap<String, Vec<Observation>>>,
    len: usize,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations(observations: impl IntoIterator<Item = Observation>) -> Result<Self> {
        let mut store = FeedbackStore::new();
        for obs in observations {
            store.add(obs)?;
        }
        Ok(store)
    }

    /// Inserts one observation. The (qid, doc_id, timestamp) triple must
    /// be unique.
    pub fn add(&mut self, obs: Observation) -> Result<()> {
        if obs.rel > MAX_GRADE {
            return Err(Error::Integrity(format!(
                "relevance grade {} outside 0..={MAX_GRADE}",
                obs.rel
            )));
        }
        let per_doc = self
            .by_query
            .entry(obs.qid.clone())
            .or_default()
            .entry(obs.doc_id.clone())
            .or_default();
        match per_doc.binary_search_by(|o| o.timestamp.cmp(&obs.timestamp)) {
            Ok(_) => Err(Error::Integrity(format!(
                "duplicate observation ({}, {}, {})",
                obs.qid, obs.doc_id, obs.timestamp
            ))),
            Err(pos) => {
                per_doc.insert(pos, obs);
                self.len += 1;
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// All (doc_id, timestamp) pairs positively judged for `qid` strictly
    /// before `before`. A document judged positive at several timestamps
    /// appears once per timestamp.
    pub fn positive_set(&self, qid: &str, before: &Timestamp) -> Vec<(String, Timestamp)> {
        let mut out = Vec::new();
        if let Some(per_doc) = self.by_query.get(qid) {
            for (doc_id, observations) in per_doc {
                for obs in observations {
                    if obs.timestamp < *before && obs.rel > 0 {
                        out.push((doc_id.clone(), obs.timestamp.clone()));
                    }
                }
            }
        }
        out
    }

    /// Positive feedback documents with the most recent qualifying
    /// timestamp and the grade observed there. This is the D+ a rewriting
    /// approach works from: one entry per document.
    pub fn latest_positive_versions(
        &self,
        qid: &str,
        before: &Timestamp,
    ) -> BTreeMap<String, (Timestamp, u8)> {
        let mut out: BTreeMap<String, (Timestamp, u8)> = BTreeMap::new();
        if let Some(per_doc) = self.by_query.get(qid) {
            for (doc_id, observations) in per_doc {
                // Observations are sorted ascending, so the last positive
                // one before the cutoff wins.
                for obs in observations.iter().rev() {
                    if obs.timestamp < *before && obs.rel > 0 {
                        out.insert(doc_id.clone(), (obs.timestamp.clone(), obs.rel));
                        break;
                    }
                }
            }
        }
        out
    }

    /// Observations for (qid, doc_id) strictly before `before`, in
    /// ascending timestamp order.
    pub fn observations_for(&self, qid: &str, doc_id: &str, before: &Timestamp) -> Vec<&Observation> {
        self.by_query
            .get(qid)
            .and_then(|per_doc| per_doc.get(doc_id))
            .map(|observations| {
                observations
                    .iter()
                    .filter(|o| o.timestamp < *before)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All observations made exactly at `timestamp`, across queries.
    pub fn observations_at(&self, timestamp: &Timestamp) -> Vec<&Observation> {
        let mut out = Vec::new();
        for per_doc in self.by_query.values() {
            for observations in per_doc.values() {
                for obs in observations {
                    if obs.timestamp == *timestamp {
                        out.push(obs);
                    }
                }
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.by_query
            .values()
            .flat_map(|per_doc| per_doc.values().flatten())
    }
}

/// Parses a TREC qrels file (`qid 0 docno rel`, whitespace-separated) and
/// stamps every observation with `timestamp`.
pub fn load_qrels(path: &Path, timestamp: &Timestamp) -> Result<Vec<Observation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut observations = Vec::new();
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
            .map_err(|_| Error::parse(path, idx + 1, format!("bad relevance grade {:?}", fields[3])))?;
        if rel > MAX_GRADE {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("relevance grade {rel} outside 0..={MAX_GRADE}"),
            ));
        }
        observations.push(Observation {
            qid: fields[0].to_string(),
            doc_id: fields[2].to_string(),
            timestamp: timestamp.clone(),
            rel,
        });
    }
    Ok(observations)
}

pub fn write_qrels<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    path: &Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for obs in observations {
        writeln!(out, "{} 0 {} {}", obs.qid, obs.doc_id, obs.rel).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parses a qrels manifest (`timestamp<TAB>path`, paths relative to the
/// manifest's directory) into (timestamp, resolved path) pairs.
pub fn load_manifest(path: &Path) -> Result<Vec<(Timestamp, PathBuf)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (ts, rel_path) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected timestamp<TAB>path"))?;
        let resolved = base.join(rel_path);
        entries.push((Timestamp::new(ts), resolved));
    }
    Ok(entries)
}

/// Loads every qrels file listed in a manifest into one store.
pub fn load_store(manifest_path: &Path) -> Result<FeedbackStore> {
    let mut store = FeedbackStore::new();
    for (timestamp, path) in load_manifest(manifest_path)? {
        for obs in load_qrels(&path, &timestamp)? {
            store.add(obs)?;
        }
    }
    Ok(store)
}
