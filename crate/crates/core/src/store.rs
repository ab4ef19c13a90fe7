//! Bi-modal retrieval database: semantic chunk vectors and structural anchor
//! motifs, exact cosine top-k with metadata filters, JSON-Lines persistence.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{param, validation, Error, Result};
use crate::graph::EgoSubgraph;
use crate::io;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMeta {
    pub dataset: String,
    pub node_id: String,
    pub label: String,
    pub description: String,
    pub field_tag: String,
    pub domain_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub dataset_id: String,
    pub node: usize,
    pub chunk_index: usize,
    pub vec: Vec<f64>,
    pub meta: SemanticMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralMeta {
    pub hop_radius: usize,
    pub anchor_score: f64,
    pub domain_id: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralRecord {
    pub dataset_id: String,
    pub anchor: usize,
    pub motif: EgoSubgraph,
    /// Structural-view input rows of the motif nodes, in `motif.nodes` order.
    pub motif_rows: Vec<Vec<f64>>,
    pub signature: Vec<f64>,
    pub meta: StructuralMeta,
}

/// Common view used by ranking, filtering and persistence.
pub trait StoreRecord: Clone + Serialize + DeserializeOwned + Keyed {
    const MODALITY: &'static str;
    fn vector(&self) -> &[f64];
    /// Tie-break key: (dataset_id, node id, chunk_index).
    fn sort_key(&self) -> (&str, usize, usize);
    fn dataset(&self) -> &str;
    fn domain_id(&self) -> &str;
}

impl StoreRecord for SemanticRecord {
    const MODALITY: &'static str = "semantic";
    fn vector(&self) -> &[f64] {
        &self.vec
    }
    fn sort_key(&self) -> (&str, usize, usize) {
        (&self.dataset_id, self.node, self.chunk_index)
    }
    fn dataset(&self) -> &str {
        &self.meta.dataset
    }
    fn domain_id(&self) -> &str {
        &self.meta.domain_id
    }
}

impl StoreRecord for StructuralRecord {
    const MODALITY: &'static str = "structural";
    fn vector(&self) -> &[f64] {
        &self.signature
    }
    fn sort_key(&self) -> (&str, usize, usize) {
        (&self.dataset_id, self.anchor, 0)
    }
    fn dataset(&self) -> &str {
        &self.meta.dataset
    }
    fn domain_id(&self) -> &str {
        &self.meta.domain_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub id: usize,
    pub score: f64,
    pub rank: usize,
}

/// Metadata predicate on (dataset, domain_id).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaFilter {
    /// When set, only these domains pass.
    pub allowed_domains: Option<BTreeSet<String>>,
    pub excluded_domains: BTreeSet<String>,
    pub excluded_datasets: BTreeSet<String>,
}

impl MetaFilter {
    pub fn none() -> Self {
        Self::default()
    }

    /// Restricts search to `sources` and bans the target dataset and domain.
    pub fn leakage_guard<I: IntoIterator<Item = String>>(sources: I, target_dataset: &str, target_domain: &str) -> Self {
        MetaFilter {
            allowed_domains: Some(sources.into_iter().collect()),
            excluded_domains: BTreeSet::from([target_domain.to_string()]),
            excluded_datasets: BTreeSet::from([target_dataset.to_string()]),
        }
    }

    pub fn accepts(&self, dataset: &str, domain_id: &str) -> bool {
        self.allowed_domains.as_ref().is_none_or(|a| a.contains(domain_id))
            && !self.excluded_domains.contains(domain_id)
            && !self.excluded_datasets.contains(dataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted(usize),
    /// The motif duplicated record `kept`; `replaced` is true when the new
    /// record won on anchor score and took over that slot.
    Deduped { kept: usize, replaced: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store<R> {
    dim: Option<usize>,
    records: Vec<R>,
    index: HashMap<(String, Vec<usize>), usize>,
}

pub type SemanticStore = Store<SemanticRecord>;
pub type StructuralStore = Store<StructuralRecord>;

impl<R> Default for Store<R> {
    fn default() -> Self {
        Store {
            dim: None,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    modality: String,
    dim: Option<usize>,
    count: usize,
}

fn cosine_score(q: &[f64], q_norm: f64, v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut vv = 0.0;
    for (a, b) in q.iter().zip(v) {
        dot += a * b;
        vv += b * b;
    }
    if vv == 0.0 {
        0.0
    } else {
        dot / (q_norm * vv.sqrt())
    }
}

impl<R: StoreRecord> Store<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&R> {
        self.records.get(id)
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    fn check_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(validation("record vector has non-finite entries"));
        }
        match self.dim {
            Some(d) if d != v.len() => Err(validation(format!(
                "{} store has dim {d}, record has dim {}",
                R::MODALITY,
                v.len()
            ))),
            Some(_) => Ok(()),
            None => {
                self.dim = Some(v.len());
                Ok(())
            }
        }
    }

    pub fn topk(&self, q: &[f64], k: usize, filter: &MetaFilter) -> Result<Vec<RetrievalResult>> {
        self.topk_where(q, k, |r| filter.accepts(r.dataset(), r.domain_id()))
    }

    /// Exact scan: cosine scores, descending, ties by [`StoreRecord::sort_key`].
    pub fn topk_where(&self, q: &[f64], k: usize, pred: impl Fn(&R) -> bool) -> Result<Vec<RetrievalResult>> {
        if k == 0 {
            return Err(param("k must be >= 1"));
        }
        if let Some(d) = self.dim {
            if q.len() != d {
                return Err(validation(format!("query dim {} does not match store dim {d}", q.len())));
            }
        }
        let q_norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if q_norm == 0.0 || !q_norm.is_finite() {
            return Err(validation("query vector has zero or non-finite norm"));
        }
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .map(|(i, r)| (cosine_score(q, q_norm, r.vector()), i))
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.records[a.1].sort_key().cmp(&self.records[b.1].sort_key()))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(rank, (score, id))| RetrievalResult { id, score, rank })
            .collect())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            version: FORMAT_VERSION,
            modality: R::MODALITY.to_string(),
            dim: self.dim,
            count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&io::read_to_string(path)?, &path.display().to_string())
    }
}

impl<R: StoreRecord> Store<R> {
    /// Parses a whole file; any bad line fails the load, so no partial store escapes.
    pub fn from_jsonl(body: &str, context: &str) -> Result<Self> {
        let mut lines = body.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| Error::parse(format!("{context} header"), e))?;
        if header.version != FORMAT_VERSION || header.modality != R::MODALITY {
            return Err(Error::parse(
                format!("{context} header"),
                format!(
                    "expected version {FORMAT_VERSION} modality {}, found version {} modality {}",
                    R::MODALITY,
                    header.version,
                    header.modality
                ),
            ));
        }
        let mut store = Store::new();
        for (i, line) in lines.enumerate() {
            let rec: R = serde_json::from_str(line).map_err(|e| Error::parse(format!("{context} record {i}"), e))?;
            store
                .push_loaded(rec)
                .map_err(|e| Error::parse(format!("{context} record {i}"), e))?;
        }
        if store.len() != header.count {
            return Err(Error::parse(
                context,
                format!("header declares {} records, file has {}", header.count, store.len()),
            ));
        }
        if store.dim.is_some() && store.dim != header.dim {
            return Err(Error::parse(context, "header dim disagrees with records"));
        }
        Ok(store)
    }

    fn push_loaded(&mut self, rec: R) -> Result<()> {
        self.check_vector(rec.vector())?;
        let key = rec.key();
        if self.index.insert(key, self.records.len()).is_some() {
            return Err(validation("duplicate record key"));
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Identity used for upsert (semantic) and dedup (structural).
pub trait Keyed {
    fn key(&self) -> (String, Vec<usize>);
}

impl Keyed for SemanticRecord {
    fn key(&self) -> (String, Vec<usize>) {
        (self.dataset_id.clone(), vec![self.node, self.chunk_index])
    }
}

impl Keyed for StructuralRecord {
    fn key(&self) -> (String, Vec<usize>) {
        (self.dataset_id.clone(), self.motif.nodes.clone())
    }
}

impl Store<SemanticRecord> {
    /// Appends, or replaces in place when `(dataset, node, chunk_index)` exists.
    pub fn insert_semantic(&mut self, rec: SemanticRecord) -> Result<usize> {
        self.check_vector(&rec.vec)?;
        let key = rec.key();
        if let Some(&id) = self.index.get(&key) {
            log::warn!(
                "semantic record ({}, {}, {}) replaced in place",
                rec.dataset_id,
                rec.node,
                rec.chunk_index
            );
            self.records[id] = rec;
            return Ok(id);
        }
        let id = self.records.len();
        self.index.insert(key, id);
        self.records.push(rec);
        Ok(id)
    }
}

impl Store<StructuralRecord> {
    /// Inserts unless a record of the same dataset has the same motif node
    /// set; then keeps whichever has the higher anchor score.
    pub fn insert_structural(&mut self, rec: StructuralRecord) -> Result<InsertOutcome> {
        self.check_vector(&rec.signature)?;
        let key = rec.key();
        if let Some(&id) = self.index.get(&key) {
            let replaced = rec.meta.anchor_score > self.records[id].meta.anchor_score;
            if replaced {
                self.records[id] = rec;
            }
            return Ok(InsertOutcome::Deduped { kept: id, replaced });
        }
        let id = self.records.len();
        self.index.insert(key, id);
        self.records.push(rec);
        Ok(InsertOutcome::Inserted(id))
    }
}
