//! Text side of the node representation: prefixed documents and their
//! graph-aware chunks, embedders, PCA alignment and feature fusion.

mod embed;
mod pca;

pub use embed::{cosine, hashing_embedder, load_external_embeddings, Embedder, ExternalEmbedder, HashingEmbedder};
pub use pca::{pca_align, PcaModel};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// A node document with the five prefix fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixedDocument {
    pub dataset: String,
    pub node_id: String,
    pub label: String,
    pub description: String,
    pub node_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldTag {
    Dataset,
    NodeId,
    Label,
    Description,
    NodeTextSentence,
}

impl FieldTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldTag::Dataset => "dataset",
            FieldTag::NodeId => "node_id",
            FieldTag::Label => "label",
            FieldTag::Description => "description",
            FieldTag::NodeTextSentence => "node_text_sentence",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            FieldTag::Dataset => "Dataset: ",
            FieldTag::NodeId => "Node ID: ",
            FieldTag::Label => "Label: ",
            FieldTag::Description => "Description: ",
            FieldTag::NodeTextSentence => "Node Text: ",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub parent_node: usize,
    pub chunk_index: usize,
    pub field_tag: FieldTag,
    pub text: String,
}

pub fn render_prefix(doc: &PrefixedDocument) -> String {
    format!(
        "Dataset: {}\nNode ID: {}\nLabel: {}\nDescription: {}\nNode Text: {}",
        doc.dataset, doc.node_id, doc.label, doc.description, doc.node_text
    )
}

/// Splits after `.`, `!` or `?` when followed by whitespace. Terminators stay
/// with their sentence; whitespace-only pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    out.push(&text[start..end]);
                    start = end;
                }
            }
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// One chunk per prefix field (rendered as its schema line) plus one chunk per
/// sentence of the node text.
pub fn chunk_document(doc: &PrefixedDocument, parent_node: usize) -> Vec<Chunk> {
    let fields = [
        (FieldTag::Dataset, &doc.dataset),
        (FieldTag::NodeId, &doc.node_id),
        (FieldTag::Label, &doc.label),
        (FieldTag::Description, &doc.description),
    ];
    fields
        .iter()
        .map(|(tag, value)| (*tag, format!("{}{}", tag.prefix(), value)))
        .chain(
            split_sentences(&doc.node_text)
                .into_iter()
                .map(|s| (FieldTag::NodeTextSentence, s.to_string())),
        )
        .enumerate()
        .map(|(i, (field_tag, text))| Chunk {
            parent_node,
            chunk_index: i,
            field_tag,
            text,
        })
        .collect()
}

/// Rebuilds a document from its chunks. Sentences are rejoined with single
/// spaces, so whitespace runs between sentences are normalized.
pub fn reassemble(chunks: &[Chunk]) -> Option<PrefixedDocument> {
    let field = |tag: FieldTag| -> Option<String> {
        chunks
            .iter()
            .find(|c| c.field_tag == tag)
            .and_then(|c| c.text.strip_prefix(tag.prefix()))
            .map(str::to_string)
    };
    let sentences: Vec<&str> = chunks
        .iter()
        .filter(|c| c.field_tag == FieldTag::NodeTextSentence)
        .map(|c| c.text.as_str())
        .collect();
    Some(PrefixedDocument {
        dataset: field(FieldTag::Dataset)?,
        node_id: field(FieldTag::NodeId)?,
        label: field(FieldTag::Label)?,
        description: field(FieldTag::Description)?,
        node_text: sentences.join(" "),
    })
}

/// `[x_aligned || b]` row-wise.
pub fn fuse_features(aligned: &Array2<f64>, semantic: &Array2<f64>) -> Result<Array2<f64>> {
    if aligned.nrows() != semantic.nrows() {
        return Err(validation(format!(
            "fuse_features: {} attribute rows vs {} semantic rows",
            aligned.nrows(),
            semantic.nrows()
        )));
    }
    if aligned.ncols() != semantic.ncols() {
        return Err(validation(format!(
            "fuse_features: attribute width {} vs semantic width {}",
            aligned.ncols(),
            semantic.ncols()
        )));
    }
    Ok(concatenate![Axis(1), *aligned, *semantic])
}
