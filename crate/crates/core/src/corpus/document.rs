use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::TokenId;
use crate::error::{Error, Result};

/// Page coordinates live on a normalized 0..=1000 grid.
pub const COORD_MAX: u16 = 1000;

/// Minimum and maximum token count of an attackable field.
pub const MIN_FIELD_TOKENS: usize = 3;
pub const MAX_FIELD_TOKENS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u16; 4]", try_from = "[u16; 4]")]
pub struct BBox {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
}

impl BBox {
    pub fn new(x0: u16, y0: u16, x1: u16, y1: u16) -> Result<Self> {
        if x0 > x1 || y0 > y1 || x1 > COORD_MAX || y1 > COORD_MAX {
            return Err(Error::Data(format!("invalid box [{x0}, {y0}, {x1}, {y1}]")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn coords(&self) -> [u16; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl From<BBox> for [u16; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

impl TryFrom<[u16; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [u16; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateKind {
    Form,
    Receipt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldType {
    Name,
    Date,
    Amount,
    Company,
    Address,
    Answer,
}

impl FieldType {
    pub const ALL: [FieldType; 6] = [
        FieldType::Name,
        FieldType::Date,
        FieldType::Amount,
        FieldType::Company,
        FieldType::Address,
        FieldType::Answer,
    ];

    /// Public task label `y` of a field of this type.
    pub fn label(self) -> u32 {
        self as u32
    }

    pub fn from_label(label: u32) -> Option<Self> {
        Self::ALL.get(label as usize).copied()
    }
}

/// Row-major grayscale raster, values in `[0, 1]` (1 is white).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn white(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![1.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel rectangle `(xs, ys)` covered by a page box. Every box maps to
    /// at least one pixel in each direction.
    pub fn region(&self, b: &BBox) -> (Range<usize>, Range<usize>) {
        (
            Self::axis(b.x0, b.x1, self.width),
            Self::axis(b.y0, b.y1, self.height),
        )
    }

    fn axis(lo: u16, hi: u16, n: usize) -> Range<usize> {
        let scale = |c: u16| c as usize * n / COORD_MAX as usize;
        let start = scale(lo).min(n - 1);
        let end = scale(hi).clamp(start + 1, n);
        start..end
    }

    pub fn fill(&mut self, b: &BBox, v: f32) {
        let (xs, ys) = self.region(b);
        for y in ys {
            for x in xs.clone() {
                self.set(x, y, v);
            }
        }
    }
}

/// An annotated contiguous token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Field {
    pub start: usize,
    pub len: usize,
    pub field_type: FieldType,
    /// Public task label `y`.
    pub label: u32,
    pub selected: bool,
}

impl Field {
    /// A field whose selection flag follows the 3..=15 token rule.
    pub fn new(start: usize, len: usize, field_type: FieldType) -> Self {
        Self {
            start,
            len,
            field_type,
            label: field_type.label(),
            selected: (MIN_FIELD_TOKENS..=MAX_FIELD_TOKENS).contains(&len),
        }
    }

    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn k(&self) -> usize {
        self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub template_kind: TemplateKind,
    pub tokens: Vec<TokenId>,
    pub boxes: Vec<BBox>,
    pub image: Option<Image>,
    pub fields: Vec<Field>,
    /// Id of the earlier document this one is a shifted/rotated copy of.
    pub duplicate_of: Option<String>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the structural invariants of the document.
    pub fn validate(&self, max_seq_len: usize) -> Result<()> {
        if self.tokens.len() != self.boxes.len() {
            return Err(Error::Data(format!(
                "{}: {} tokens but {} boxes",
                self.id,
                self.tokens.len(),
                self.boxes.len()
            )));
        }
        if self.tokens.len() > max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.tokens.len(),
                max: max_seq_len,
            });
        }
        for f in &self.fields {
            if f.len == 0 || f.start + f.len > self.tokens.len() {
                return Err(Error::SpanOutOfRange {
                    start: f.start,
                    end: f.start + f.len,
                    len: self.tokens.len(),
                });
            }
        }
        Ok(())
    }
}
