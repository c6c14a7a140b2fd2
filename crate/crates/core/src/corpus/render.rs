use super::document::{Document, Image};
use super::vocab::TokenId;

pub const IMAGE_SIZE: usize = 128;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Gray level of pixel `(lx, ly)` (relative to the box corner) of a token.
/// Values are multiples of 1/255 so that 8-bit graymaps store them exactly.
pub fn texture(id: TokenId, lx: usize, ly: usize) -> f32 {
    let h = splitmix(((id as u64) << 32) ^ ((lx as u64) << 16) ^ ly as u64);
    let ink = 64 + (h % 160) as u32;
    (255 - ink) as f32 / 255.0
}

/// Rasterizes a document: white page, each token box filled with a texture
/// keyed by its token id.
pub fn render(doc: &Document) -> Image {
    let mut img = Image::white(IMAGE_SIZE, IMAGE_SIZE);
    for (&id, b) in doc.tokens.iter().zip(&doc.boxes) {
        let (xs, ys) = img.region(b);
        for (ly, y) in ys.enumerate() {
            for (lx, x) in xs.clone().enumerate() {
                img.set(x, y, texture(id, lx, ly));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::{generate_corpus, CorpusSpec};

    fn docs() -> Vec<Document> {
        generate_corpus(&CorpusSpec {
            n_docs: 6,
            seed: 3,
            render_images: false,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn empty_document_is_white() {
        let mut d = docs().remove(0);
        d.tokens.clear();
        d.boxes.clear();
        d.fields.clear();
        assert!(render(&d).pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn identical_documents_render_identically() {
        let d = docs().remove(1);
        assert_eq!(render(&d), render(&d.clone()));
    }

    #[test]
    fn changing_a_field_only_touches_its_boxes() {
        for d in docs() {
            let f = d.fields.iter().find(|f| f.selected).unwrap();
            let before = render(&d);
            let mut changed = d.clone();
            for t in &mut changed.tokens[f.span()] {
                *t += 1;
            }
            let after = render(&changed);
            let mut inside = vec![false; before.pixels.len()];
            for b in &d.boxes[f.span()] {
                let (xs, ys) = before.region(b);
                for y in ys {
                    for x in xs.clone() {
                        inside[y * IMAGE_SIZE + x] = true;
                    }
                }
            }
            let mut changed_inside = 0;
            for i in 0..before.pixels.len() {
                if before.pixels[i] != after.pixels[i] {
                    assert!(inside[i], "{}: pixel {i} outside the field changed", d.id);
                    changed_inside += 1;
                }
            }
            assert!(changed_inside > 0);
        }
    }
}
