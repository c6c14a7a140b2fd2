use rand::Rng;

use super::config::{bio_begin, bio_inside, TaskKind, BIO_O};
use super::forward::DocInputs;
use crate::corpus::{vocab::MASK, Document, Field, FieldType};

/// Supervised positions and their labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Targets {
    pub positions: Vec<usize>,
    pub labels: Vec<u32>,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// SPADE class meaning "no predecessor" for a sequence of length `len`.
pub fn spade_none(len: usize) -> u32 {
    len as u32
}

/// BIO label of field position `offset` (0-based within the field).
pub fn bio_label(field_type: FieldType, offset: usize) -> u32 {
    if offset == 0 {
        bio_begin(field_type)
    } else {
        bio_inside(field_type)
    }
}

/// SPADE label of absolute position `pos` inside a field starting at
/// `start`: the previous position, or NONE for the first token.
pub fn spade_label(start: usize, pos: usize, len: usize) -> u32 {
    if pos == start {
        spade_none(len)
    } else {
        (pos - 1) as u32
    }
}

/// Builds model inputs and supervision for one document.
///
/// * MLM: each token is masked independently with probability `mask_rate`;
///   targets are the original ids. The visual features of masked tokens
///   are blanked as well, mirroring how scrubbed fields look.
/// * EE_BIO: every position, B/I of the covering field or O.
/// * EE_SPADE: every position, the predecessor inside its field or NONE.
pub fn make_targets<R: Rng>(
    doc: &Document,
    task: TaskKind,
    mask_rate: f64,
    rng: &mut R,
) -> (DocInputs, Targets) {
    let mut inputs = DocInputs::from_document(doc);
    let len = doc.len();
    let mut t = Targets::default();
    match task {
        TaskKind::Mlm => {
            for i in 0..len {
                if rng.gen_bool(mask_rate) {
                    t.positions.push(i);
                    t.labels.push(doc.tokens[i]);
                    inputs.tokens[i] = MASK;
                }
            }
            inputs.whiten(&t.positions);
        }
        TaskKind::EeBio => {
            let mut labels = vec![BIO_O; len];
            for f in &doc.fields {
                for (o, p) in f.span().enumerate() {
                    labels[p] = bio_label(f.field_type, o);
                }
            }
            t.positions = (0..len).collect();
            t.labels = labels;
        }
        TaskKind::EeSpade => {
            let mut labels = vec![spade_none(len); len];
            for f in &doc.fields {
                for p in f.span() {
                    labels[p] = spade_label(f.start, p, len);
                }
            }
            t.positions = (0..len).collect();
            t.labels = labels;
        }
    }
    (inputs, t)
}

/// Labels an EE target model must produce on the positions of `field` that
/// the adversary scores, derived from the public label alone.
pub fn field_labels(task: TaskKind, field: &Field, positions: &[usize], len: usize) -> Vec<u32> {
    positions
        .iter()
        .map(|&p| match task {
            TaskKind::EeBio => bio_label(field.field_type, p - field.start),
            TaskKind::EeSpade => spade_label(field.start, p, len),
            TaskKind::Mlm => unreachable!("MLM targets are token ids"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use rand::SeedableRng;

    fn doc() -> Document {
        let mut d = generate_corpus(&CorpusSpec {
            n_docs: 1,
            seed: 4,
            ..CorpusSpec::default()
        })
        .unwrap()
        .remove(0);
        d.fields = vec![Field::new(2, 3, FieldType::Date)];
        d
    }

    #[test]
    fn bio_pattern() {
        let d = doc();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (_, t) = make_targets(&d, TaskKind::EeBio, 0.15, &mut rng);
        assert_eq!(t.len(), d.len());
        let b = bio_begin(FieldType::Date);
        let i = bio_inside(FieldType::Date);
        assert_eq!(&t.labels[2..5], &[b, i, i]);
        assert_eq!(t.labels[0], BIO_O);
        assert_eq!(t.labels[5], BIO_O);
    }

    #[test]
    fn spade_pattern() {
        let d = doc();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (_, t) = make_targets(&d, TaskKind::EeSpade, 0.15, &mut rng);
        let none = spade_none(d.len());
        assert_eq!(&t.labels[2..5], &[none, 2, 3]);
        assert_eq!(t.labels[0], none);
    }

    #[test]
    fn mlm_masks_and_blanks() {
        let d = doc();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (inp, t) = make_targets(&d, TaskKind::Mlm, 0.5, &mut rng);
        assert!(!t.is_empty());
        for (&p, &l) in t.positions.iter().zip(&t.labels) {
            assert_eq!(inp.tokens[p], MASK);
            assert_eq!(l, d.tokens[p]);
            assert!(inp
                .visual
                .as_ref()
                .unwrap()
                .row(p)
                .iter()
                .all(|&v| v == 1.0));
        }
    }

    #[test]
    fn field_labels_follow_public_label() {
        let f = Field::new(4, 3, FieldType::Name);
        assert_eq!(
            field_labels(TaskKind::EeBio, &f, &[4, 5, 6], 10),
            vec![
                bio_begin(FieldType::Name),
                bio_inside(FieldType::Name),
                bio_inside(FieldType::Name)
            ]
        );
        assert_eq!(
            field_labels(TaskKind::EeSpade, &f, &[4, 5, 6], 10),
            vec![10, 4, 5]
        );
    }
}
