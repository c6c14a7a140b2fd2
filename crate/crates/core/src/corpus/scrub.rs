use std::ops::Range;

use super::document::{BBox, Document, Field, FieldType, Image, TemplateKind};
use super::vocab::{TokenId, MASK};
use crate::error::{Error, Result};

/// What the adversary sees of a scrubbed field: the document with the field
/// tokens replaced by MASK and its image region whitened, the span, and the
/// public label. The hidden tokens are deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackView {
    pub doc_id: String,
    pub field_index: usize,
    pub template_kind: TemplateKind,
    pub tokens: Vec<TokenId>,
    pub boxes: Vec<BBox>,
    pub image: Option<Image>,
    pub span: Range<usize>,
    pub field_type: FieldType,
    pub label: u32,
}

impl AttackView {
    /// Number of tokens to reconstruct.
    pub fn k(&self) -> usize {
        self.span.len()
    }

    /// Stable identifier `doc_id#field_index`.
    pub fn field_id(&self) -> String {
        format!("{}#{}", self.doc_id, self.field_index)
    }
}

/// A scrubbed field together with its hidden ground truth. Only the
/// evaluator reads [`ScrubbedField::ground_truth`]; the attack engine is
/// handed [`ScrubbedField::view`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScrubbedField {
    view: AttackView,
    ground_truth: Vec<TokenId>,
}

impl ScrubbedField {
    pub fn view(&self) -> &AttackView {
        &self.view
    }

    pub fn ground_truth(&self) -> &[TokenId] {
        &self.ground_truth
    }

    pub fn k(&self) -> usize {
        self.view.k()
    }

    pub fn into_parts(self) -> (AttackView, Vec<TokenId>) {
        (self.view, self.ground_truth)
    }
}

/// Selected fields of `doc`, in document order, with their index in
/// `doc.fields`.
pub fn extract(doc: &Document) -> Vec<(usize, Field)> {
    let mut out: Vec<(usize, Field)> = doc
        .fields
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, f)| f.selected)
        .collect();
    out.sort_by_key(|(_, f)| f.start);
    out
}

/// Replaces the tokens of `doc.fields[field_index]` with MASK and whitens the
/// field boxes in the image. `doc` itself is left untouched.
pub fn scrub(doc: &Document, field_index: usize) -> Result<ScrubbedField> {
    let field = doc
        .fields
        .get(field_index)
        .ok_or_else(|| Error::Data(format!("{}: no field {field_index}", doc.id)))?;
    scrub_field(doc, field_index, field)
}

fn scrub_field(doc: &Document, field_index: usize, field: &Field) -> Result<ScrubbedField> {
    let span = field.span();
    if field.len == 0 || span.end > doc.tokens.len() {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: doc.tokens.len(),
        });
    }
    let ground_truth = doc.tokens[span.clone()].to_vec();
    let mut tokens = doc.tokens.clone();
    tokens[span.clone()].fill(MASK);
    let image = doc.image.as_ref().map(|img| {
        let mut img = img.clone();
        for b in &doc.boxes[span.clone()] {
            img.fill(b, 1.0);
        }
        img
    });
    Ok(ScrubbedField {
        view: AttackView {
            doc_id: doc.id.clone(),
            field_index,
            template_kind: doc.template_kind,
            tokens,
            boxes: doc.boxes.clone(),
            image,
            span,
            field_type: field.field_type,
            label: field.label,
        },
        ground_truth,
    })
}

/// Scrubs an arbitrary field value (it need not be listed in `doc.fields`).
pub fn scrub_span(doc: &Document, field: &Field) -> Result<ScrubbedField> {
    scrub_field(doc, usize::MAX, field)
}
