//! Deterministic synthetic longitudinal collections for desk-scale
//! experiments.
//!
//! Documents are bags of Zipf-distributed vocabulary terms. Each query
//! owns two mid-frequency query terms and four rare topic terms; judged
//! documents carry implanted occurrences of these so that grades are
//! separable by topical terms but not by the query terms alone. Updates
//! rewrite a controlled fraction of the background tokens, which steers
//! the similarity profile: untouched documents stay byte-identical,
//! light updates stay above the near-duplicate band, heavy updates fall
//! below it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, DocumentVersion, Snapshot, Timestamp};
use crate::error::{Error, Result};
use crate::history::Observation;

/// Generator knobs. Fractions steer the per-step fate of surviving
/// documents; `frac_unchanged + frac_heavy_change` must not exceed 1,
/// the remainder receives light single-token updates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_snapshots: usize,
    pub docs_per_snapshot: usize,
    pub frac_unchanged: f64,
    pub frac_heavy_change: f64,
    pub delete_rate: f64,
    pub create_rate: f64,
    pub num_queries: usize,
    pub judgments_per_query: usize,
    pub vocabulary_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            num_snapshots: 3,
            docs_per_snapshot: 1000,
            frac_unchanged: 0.4,
            frac_heavy_change: 0.5,
            delete_rate: 0.1,
            create_rate: 0.15,
            num_queries: 50,
            judgments_per_query: 6,
            vocabulary_size: 2000,
        }
    }
}

/// First vocabulary rank used for query terms; the ranks below it are
/// high-frequency background (the stopword band).
const QUERY_TERM_BASE: usize = 30;
/// Zipf head terms emitted as the stopword list.
const STOPWORD_HEAD: usize = 8;
/// Topic terms per query, implanted into positively judged documents.
const TOPIC_TERMS_PER_QUERY: usize = 4;
const ZIPF_EXPONENT: f64 = 1.07;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("frac_unchanged", self.frac_unchanged),
            ("frac_heavy_change", self.frac_heavy_change),
            ("delete_rate", self.delete_rate),
            ("create_rate", self.create_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("{name} {value} outside [0, 1]")));
            }
        }
        if self.frac_unchanged + self.frac_heavy_change > 1.0 {
            return Err(Error::Config(
                "frac_unchanged + frac_heavy_change exceeds 1".into(),
            ));
        }
        if self.num_snapshots == 0 || self.docs_per_snapshot == 0 {
            return Err(Error::Config("empty collection requested".into()));
        }
        if self.delete_rate >= 1.0
            && self.num_snapshots > 1
            && self.num_queries > 0
            && self.judgments_per_query > 0
        {
            return Err(Error::Config(
                "delete_rate = 1 leaves no document alive to re-judge across timestamps".into(),
            ));
        }
        let reserved = QUERY_TERM_BASE + self.num_queries * (2 + TOPIC_TERMS_PER_QUERY);
        if self.num_queries > 0 && self.vocabulary_size < reserved + 16 {
            return Err(Error::Config(format!(
                "vocabulary_size {} too small for {} queries (needs at least {})",
                self.vocabulary_size,
                self.num_queries,
                reserved + 16
            )));
        }
        if self.num_queries > 0 && self.judgments_per_query > 0 {
            let needed = self.num_queries * self.judgments_per_query;
            if self.docs_per_snapshot < needed {
                return Err(Error::Config(format!(
                    "docs_per_snapshot {} cannot host {needed} judged documents",
                    self.docs_per_snapshot
                )));
            }
        }
        Ok(())
    }
}

/// One generated timestamp: the snapshot, its query file content, and
/// the judgments observed there.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTimestep {
    pub timestamp: Timestamp,
    pub snapshot: Snapshot,
    pub queries: Vec<(String, String)>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCollection {
    pub steps: Vec<GeneratedTimestep>,
    pub stopwords: BTreeSet<String>,
}

struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    fn new(size: usize) -> Self {
        let mut cumulative = Vec::with_capacity(size);
        let mut total = 0.0;
        for rank in 1..=size {
            total += 1.0 / (rank as f64).powf(ZIPF_EXPONENT);
            cumulative.push(total);
        }
        ZipfSampler { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let target = rng.gen::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        self.cumulative.partition_point(|c| *c < target)
    }
}

#[derive(Debug, Clone)]
struct DocState {
    id: String,
    background: Vec<usize>,
    implants: Vec<usize>,
    affiliation: Option<(usize, u8)>,
}

impl DocState {
    fn text(&self, words: &[String]) -> String {
        let mut out = String::with_capacity((self.background.len() + self.implants.len()) * 7);
        for (i, term) in self.background.iter().chain(&self.implants).enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&words[*term]);
        }
        out
    }
}

fn month_label(step: usize) -> Timestamp {
    let year = 2022 + step / 12;
    let month = 1 + step % 12;
    Timestamp::new(format!("{year:04}-{month:02}"))
}

fn query_terms(qidx: usize) -> (usize, usize) {
    (QUERY_TERM_BASE + 2 * qidx, QUERY_TERM_BASE + 2 * qidx + 1)
}

fn topic_terms(qidx: usize, vocabulary_size: usize) -> Vec<usize> {
    let base = vocabulary_size - TOPIC_TERMS_PER_QUERY * (qidx + 1);
    (base..base + TOPIC_TERMS_PER_QUERY).collect()
}

fn implants_for(qidx: usize, grade: u8, vocabulary_size: usize) -> Vec<usize> {
    let (q1, q2) = query_terms(qidx);
    let mut implants = vec![q1, q1, q1, q2, q2, q2];
    match grade {
        2 => {
            for t in topic_terms(qidx, vocabulary_size) {
                implants.push(t);
                implants.push(t);
            }
        }
        1 => {
            implants.push(topic_terms(qidx, vocabulary_size)[0]);
        }
        _ => {}
    }
    implants
}

/// Grade mix for `total` judgments: roughly a third of each grade,
/// biased towards the positive grades.
fn grade_split(total: usize) -> (usize, usize, usize) {
    let n2 = (total + 2) / 3;
    let n1 = (total + 1) / 3;
    let n0 = total / 3;
    (n2, n1, n0)
}

fn distinct_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..len).collect();
    let take = count.min(len);
    for i in 0..take {
        let j = rng.gen_range(i..len);
        indices.swap(i, j);
    }
    indices.truncate(take);
    indices
}

/// Generates the full collection. Identical configurations produce
/// byte-identical output.
pub fn generate(config: &GeneratorConfig) -> Result<GeneratedCollection> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab: Vec<String> = (0..config.vocabulary_size)
        .map(|i| format!("w{i:05}"))
        .collect();
    let sampler = ZipfSampler::new(config.vocabulary_size);
    let stopwords: BTreeSet<String> = vocab
        .iter()
        .take(STOPWORD_HEAD.min(config.vocabulary_size))
        .cloned()
        .collect();

    let queries: Vec<(String, String)> = (0..config.num_queries)
        .map(|i| {
            let (q1, q2) = query_terms(i);
            (format!("q{i:04}"), format!("{} {}", vocab[q1], vocab[q2]))
        })
        .collect();

    let mut doc_counter = 0usize;
    let mut new_doc = |rng: &mut ChaCha8Rng| -> DocState {
        let len = rng.gen_range(80..=120);
        let background = (0..len).map(|_| sampler.sample(rng)).collect();
        let id = format!("d{doc_counter:06}");
        doc_counter += 1;
        DocState {
            id,
            background,
            implants: Vec::new(),
            affiliation: None,
        }
    };

    let mut alive: Vec<DocState> = (0..config.docs_per_snapshot)
        .map(|_| new_doc(&mut rng))
        .collect();

    // Initial affiliations: each query claims its judged documents from
    // the unclaimed pool.
    let (n2, n1, n0) = grade_split(config.judgments_per_query);
    let mut unclaimed: Vec<usize> = (0..alive.len()).collect();
    for qidx in 0..config.num_queries {
        for (grade, count) in [(2u8, n2), (1u8, n1), (0u8, n0)] {
            for _ in 0..count {
                if unclaimed.is_empty() {
                    break;
                }
                let pick = rng.gen_range(0..unclaimed.len());
                let doc_idx = unclaimed.swap_remove(pick);
                alive[doc_idx].affiliation = Some((qidx, grade));
                alive[doc_idx].implants = implants_for(qidx, grade, config.vocabulary_size);
            }
        }
    }

    let mut steps = Vec::with_capacity(config.num_snapshots);
    for step in 0..config.num_snapshots {
        let timestamp = month_label(step);
        if step > 0 {
            // Deletions.
            let mut survivors = Vec::with_capacity(alive.len());
            for doc in alive.drain(..) {
                if rng.gen::<f64>() >= config.delete_rate {
                    survivors.push(doc);
                }
            }
            // Updates on survivors.
            for doc in survivors.iter_mut() {
                let roll: f64 = rng.gen();
                if roll < config.frac_unchanged {
                    continue;
                }
                let heavy = roll < config.frac_unchanged + config.frac_heavy_change;
                let replacements = if heavy {
                    let fraction = rng.gen_range(0.10..0.60);
                    ((doc.background.len() as f64 * fraction).ceil() as usize).max(1)
                } else {
                    1
                };
                let positions = distinct_indices(&mut rng, doc.background.len(), replacements);
                for pos in positions {
                    let old = doc.background[pos];
                    let mut replacement = old;
                    for _ in 0..16 {
                        replacement = sampler.sample(&mut rng);
                        if replacement != old {
                            break;
                        }
                    }
                    if replacement == old {
                        replacement = (old + 1) % config.vocabulary_size;
                    }
                    doc.background[pos] = replacement;
                }
            }
            // Creations, some of which become newly judged documents.
            let created = (config.create_rate * config.docs_per_snapshot as f64).round() as usize;
            let mut fresh: Vec<DocState> = (0..created).map(|_| new_doc(&mut rng)).collect();
            if config.num_queries > 0 && config.judgments_per_query > 0 {
                let per_query = (config.judgments_per_query + 1) / 2;
                let (m2, m1, m0) = grade_split(per_query);
                let mut pool: Vec<usize> = (0..fresh.len()).collect();
                'assign: for qidx in 0..config.num_queries {
                    for (grade, count) in [(2u8, m2), (1u8, m1), (0u8, m0)] {
                        for _ in 0..count {
                            if pool.is_empty() {
                                break 'assign;
                            }
                            let pick = rng.gen_range(0..pool.len());
                            let doc_idx = pool.swap_remove(pick);
                            fresh[doc_idx].affiliation = Some((qidx, grade));
                            fresh[doc_idx].implants =
                                implants_for(qidx, grade, config.vocabulary_size);
                        }
                    }
                }
            }
            survivors.extend(fresh);
            alive = survivors;
        }

        let documents: Vec<DocumentVersion> = alive
            .iter()
            .map(|doc| DocumentVersion {
                doc_id: doc.id.clone(),
                timestamp: timestamp.clone(),
                url: None,
                text: doc.text(&vocab),
            })
            .collect();
        let snapshot = Snapshot::from_documents(timestamp.clone(), documents)?;

        let mut observations = Vec::new();
        for doc in &alive {
            if let Some((qidx, grade)) = doc.affiliation {
                observations.push(Observation::new(
                    format!("q{qidx:04}"),
                    doc.id.clone(),
                    timestamp.clone(),
                    grade,
                )?);
            }
        }
        observations.sort_by(|a, b| (&a.qid, &a.doc_id).cmp(&(&b.qid, &b.doc_id)));

        steps.push(GeneratedTimestep {
            timestamp,
            snapshot,
            queries: queries.clone(),
            observations,
        });
    }

    Ok(GeneratedCollection { steps, stopwords })
}

/// Writes the collection in the on-disk layout the rest of the toolkit
/// consumes: one directory per timestamp with `corpus.jsonl`,
/// `queries.tsv`, and `qrels.txt`, plus `qrels-manifest.tsv` and
/// `stopwords.txt` at the root.
pub fn write_collection(collection: &GeneratedCollection, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::new();
    for step in &collection.steps {
        let dir = root.join(step.timestamp.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        corpus::write_corpus(&step.snapshot, &dir.join("corpus.jsonl"))?;
        corpus::write_queries(&step.queries, &dir.join("queries.tsv"))?;
        crate::history::write_qrels(step.observations.iter(), &dir.join("qrels.txt"))?;
        writeln!(
            manifest,
            "{}\t{}/qrels.txt",
            step.timestamp,
            step.timestamp.as_str()
        )
        .expect("writing to string cannot fail");
    }
    std::fs::write(root.join("qrels-manifest.tsv"), manifest)
        .map_err(|e| Error::io(root.join("qrels-manifest.tsv"), e))?;
    let stopwords: String = collection
        .stopwords
        .iter()
        .map(|w| format!("{w}\n"))
        .collect();
    std::fs::write(root.join("stopwords.txt"), stopwords)
        .map_err(|e| Error::io(root.join("stopwords.txt"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::diff_snapshots;

    #[test]
    fn frozen_corpus_never_changes() {
        let config = GeneratorConfig {
            seed: 7,
            num_snapshots: 3,
            docs_per_snapshot: 60,
            frac_unchanged: 1.0,
            frac_heavy_change: 0.0,
            delete_rate: 0.0,
            create_rate: 0.0,
            num_queries: 4,
            judgments_per_query: 4,
            vocabulary_size: 600,
        };
        let collection = generate(&config).unwrap();
        for pair in collection.steps.windows(2) {
            let change = diff_snapshots(&pair[0].snapshot, &pair[1].snapshot).unwrap();
            assert!(change.created.is_empty());
            assert!(change.deleted.is_empty());
            assert!(change.updated.is_empty());
            assert_eq!(change.unchanged.len(), 60);
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = GeneratorConfig {
            docs_per_snapshot: 80,
            num_queries: 5,
            judgments_per_query: 4,
            vocabulary_size: 600,
            ..GeneratorConfig::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_collection(&a, dir_a.path()).unwrap();
        write_collection(&b, dir_b.path()).unwrap();
        for step in &a.steps {
            let rel = format!("{}/corpus.jsonl", step.timestamp);
            assert_eq!(
                std::fs::read(dir_a.path().join(&rel)).unwrap(),
                std::fs::read(dir_b.path().join(&rel)).unwrap()
            );
        }
    }

    #[test]
    fn different_seeds_differ() {
        let base = GeneratorConfig {
            docs_per_snapshot: 60,
            num_queries: 3,
            judgments_per_query: 3,
            vocabulary_size: 600,
            ..GeneratorConfig::default()
        };
        let other = GeneratorConfig { seed: 43, ..base.clone() };
        assert_ne!(generate(&base).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn change_rates_track_configuration() {
        let config = GeneratorConfig {
            seed: 11,
            num_snapshots: 2,
            docs_per_snapshot: 1200,
            frac_unchanged: 0.4,
            frac_heavy_change: 0.5,
            delete_rate: 0.1,
            create_rate: 0.15,
            num_queries: 10,
            judgments_per_query: 5,
            vocabulary_size: 800,
        };
        let collection = generate(&config).unwrap();
        let change =
            diff_snapshots(&collection.steps[0].snapshot, &collection.steps[1].snapshot).unwrap();
        let survivors = (change.unchanged.len() + change.updated.len()) as f64;
        let deleted_rate = change.deleted.len() as f64 / 1200.0;
        assert!((deleted_rate - 0.1).abs() < 0.05, "delete rate {deleted_rate}");
        let unchanged_rate = change.unchanged.len() as f64 / survivors;
        assert!(
            (unchanged_rate - 0.4).abs() < 0.05,
            "unchanged rate {unchanged_rate}"
        );
        let created = change.created.len() as f64;
        assert!((created - 180.0).abs() <= 2.0, "created {created}");
    }

    #[test]
    fn qrels_reference_alive_documents() {
        let config = GeneratorConfig {
            docs_per_snapshot: 150,
            num_queries: 8,
            judgments_per_query: 5,
            vocabulary_size: 700,
            ..GeneratorConfig::default()
        };
        let collection = generate(&config).unwrap();
        for step in &collection.steps {
            for obs in &step.observations {
                assert!(
                    step.snapshot.contains(&obs.doc_id),
                    "judged doc {} missing from snapshot {}",
                    obs.doc_id,
                    step.timestamp
                );
            }
            assert!(!step.observations.is_empty());
        }
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let config = GeneratorConfig {
            delete_rate: 1.0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate(&config).unwrap_err(), Error::Config(_)));

        let config = GeneratorConfig {
            frac_unchanged: 0.7,
            frac_heavy_change: 0.7,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate(&config).unwrap_err(), Error::Config(_)));

        let config = GeneratorConfig {
            vocabulary_size: 100,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate(&config).unwrap_err(), Error::Config(_)));
    }
}
