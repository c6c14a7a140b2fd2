use std::collections::HashSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::{BBox, Document, Field, FieldType, TemplateKind, COORD_MAX};
use super::pools::{self, ValuePools, RESTAURANT_SUFFIXES};
use super::render::render;
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_VOCAB_SIZE: usize = 512;
pub const DEFAULT_MAX_SEQ_LEN: usize = 128;

const CHAR_W: u16 = 16;
const LINE_H: u16 = 40;
const BOX_H: u16 = 32;
const MARGIN: u16 = 40;

/// Filters removing a sub-population from a generated corpus, used to build
/// distribution-shifted auxiliary corpora.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Drop every document of this template family.
    Kind(TemplateKind),
    /// Drop receipts issued by restaurants/cafes.
    RestaurantReceipts,
    /// Drop documents whose dates fall in this year.
    Year(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_docs: usize,
    /// Fraction of FORM documents; the rest are receipts.
    pub form_fraction: f64,
    /// Fraction of documents emitted as shifted/rotated copies of earlier ones.
    #[serde(default)]
    pub duplication_rate: f64,
    #[serde(default)]
    pub exclude: Vec<Exclusion>,
    /// Forbid two documents from sharing a person name or company name.
    #[serde(default)]
    pub unique_values: bool,
    #[serde(default = "default_true")]
    pub render_images: bool,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    #[serde(default)]
    pub pools: ValuePools,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}
fn default_vocab_size() -> usize {
    DEFAULT_VOCAB_SIZE
}
fn default_max_seq_len() -> usize {
    DEFAULT_MAX_SEQ_LEN
}
fn default_prefix() -> String {
    "doc".into()
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 100,
            form_fraction: 0.5,
            duplication_rate: 0.0,
            exclude: Vec::new(),
            unique_values: false,
            render_images: true,
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            id_prefix: default_prefix(),
            pools: ValuePools::default(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.duplication_rate) {
            return Err(Error::Config(format!(
                "duplication_rate must lie in [0, 1], got {}",
                self.duplication_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.form_fraction) {
            return Err(Error::Config(format!(
                "form_fraction must lie in [0, 1], got {}",
                self.form_fraction
            )));
        }
        let empty = self.pools.empty_pools();
        if !empty.is_empty() {
            return Err(Error::Config(format!("empty value pools: {empty:?}")));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        build_vocabulary(&self.pools, self.vocab_size)
    }

    /// Number of documents emitted as near-duplicates.
    pub fn n_duplicates(&self) -> usize {
        if self.n_docs == 0 {
            return 0;
        }
        let n = (self.duplication_rate * self.n_docs as f64).round() as usize;
        n.min(self.n_docs - 1)
    }
}

/// Vocabulary covering every piece the templates and pools can emit, padded
/// with filler words up to `size`.
pub fn build_vocabulary(pools: &ValuePools, size: usize) -> Result<Vocabulary> {
    let mut seen = HashSet::new();
    let mut pieces: Vec<String> = Vec::new();
    let mut push = |s: String, pieces: &mut Vec<String>| {
        if seen.insert(s.clone()) {
            pieces.push(s);
        }
    };
    for c in pools::CHARS.chars() {
        push(c.to_string(), &mut pieces);
    }
    for n in 0..100 {
        push(format!("{n:02}"), &mut pieces);
    }
    for y in pools::YEARS {
        push(y.to_string(), &mut pieces);
    }
    for w in pools::TEMPLATE_WORDS {
        push(w.to_string(), &mut pieces);
    }
    for w in pools.words() {
        push(w.to_string(), &mut pieces);
    }
    let base = pieces.len() + super::vocab::N_SPECIAL;
    if base > size {
        return Err(Error::Config(format!(
            "vocabulary size {size} too small for the pools ({base} required)"
        )));
    }
    for w in pools::FILLER {
        if pieces.len() + super::vocab::N_SPECIAL == size {
            break;
        }
        push(w.to_string(), &mut pieces);
    }
    let mut k = 0;
    while pieces.len() + super::vocab::N_SPECIAL < size {
        push(format!("w{k}"), &mut pieces);
        k += 1;
    }
    Vocabulary::from_pieces(pieces)
}

/// Words of the vocabulary usable as public filler text.
fn filler_words(vocab: &Vocabulary) -> Vec<String> {
    pools::FILLER
        .iter()
        .filter(|w| vocab.id(w).is_some())
        .map(|w| w.to_string())
        .collect()
}

/// Token/box accumulator laying words out left to right, line by line.
struct Page<'a> {
    vocab: &'a Vocabulary,
    tokens: Vec<TokenId>,
    boxes: Vec<BBox>,
    fields: Vec<Field>,
    x: u16,
    y: u16,
    left: u16,
}

impl<'a> Page<'a> {
    fn new(vocab: &'a Vocabulary, left: u16, top: u16) -> Self {
        Self {
            vocab,
            tokens: Vec::new(),
            boxes: Vec::new(),
            fields: Vec::new(),
            x: left,
            y: top,
            left,
        }
    }

    fn newline(&mut self) {
        self.x = self.left;
        self.y = (self.y + LINE_H).min(COORD_MAX - LINE_H);
    }

    fn tab(&mut self, x: u16) {
        self.x = self.x.max(x);
    }

    /// Places one word; subword pieces split the word box by character count.
    fn word(&mut self, word: &str) {
        let ids = self.vocab.tokenize(word);
        let width = word.chars().count() as u16 * CHAR_W;
        if self.x + width > COORD_MAX - MARGIN / 2 && self.x > self.left {
            self.newline();
        }
        let mut x = self.x;
        for id in ids {
            let n = self.vocab.token(id).map_or(1, |t| t.chars().count()) as u16;
            let x1 = (x + n * CHAR_W).min(COORD_MAX);
            self.tokens.push(id);
            self.boxes.push(BBox {
                x0: x,
                y0: self.y,
                x1,
                y1: self.y + BOX_H,
            });
            x = x1;
        }
        self.x = (x + CHAR_W).min(COORD_MAX);
    }

    fn words<S: AsRef<str>>(&mut self, words: &[S]) {
        for w in words {
            self.word(w.as_ref());
        }
    }

    fn field<S: AsRef<str>>(&mut self, words: &[S], field_type: FieldType) {
        let start = self.tokens.len();
        self.words(words);
        let len = self.tokens.len() - start;
        if len > 0 {
            self.fields.push(Field::new(start, len, field_type));
        }
    }
}

/// Draws field values; tracks used names/companies when uniqueness is
/// requested.
struct Values<'a> {
    pools: &'a ValuePools,
    unique: bool,
    used_names: HashSet<(usize, usize)>,
    used_companies: HashSet<(usize, Option<usize>)>,
}

struct Company {
    words: Vec<String>,
    restaurant: bool,
}

impl<'a> Values<'a> {
    fn name(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        let p = self.pools;
        let capacity = p.first_names.len() * p.last_names.len();
        let (f, l) = loop {
            if self.unique && self.used_names.len() >= capacity {
                return Err(Error::PoolExhausted {
                    pool: "first_names x last_names",
                    requested: self.used_names.len() + 1,
                    available: capacity,
                });
            }
            let pick = (
                rng.gen_range(0..p.first_names.len()),
                rng.gen_range(0..p.last_names.len()),
            );
            if !self.unique || self.used_names.insert(pick) {
                break pick;
            }
        };
        let mut out = Vec::new();
        if rng.gen_bool(0.4) {
            out.push(p.titles.choose(rng).expect("non-empty").clone());
        }
        out.push(p.first_names[f].clone());
        if rng.gen_bool(0.4) {
            let initial = (b'a' + rng.gen_range(0..26u8)) as char;
            out.push(format!("{initial}."));
        }
        out.push(p.last_names[l].clone());
        Ok(out)
    }

    fn company(&mut self, rng: &mut ChaCha8Rng) -> Result<Company> {
        let p = self.pools;
        let n = p.company_words.len();
        let capacity = n * (n + 1);
        let key = loop {
            if self.unique && self.used_companies.len() >= capacity {
                return Err(Error::PoolExhausted {
                    pool: "company_words",
                    requested: self.used_companies.len() + 1,
                    available: capacity,
                });
            }
            let first = rng.gen_range(0..n);
            let second = rng.gen_bool(0.5).then(|| rng.gen_range(0..n));
            if !self.unique || self.used_companies.insert((first, second)) {
                break (first, second);
            }
        };
        let suffix = p
            .company_suffixes
            .iter()
            .filter(|s| !s.is_empty())
            .choose(rng)
            .expect("non-empty");
        let mut words = vec![p.company_words[key.0].clone()];
        if let Some(s) = key.1 {
            words.push(p.company_words[s].clone());
        }
        words.extend(suffix.iter().cloned());
        let restaurant = suffix
            .iter()
            .any(|w| RESTAURANT_SUFFIXES.contains(&w.as_str()));
        Ok(Company { words, restaurant })
    }

    fn date(&self, rng: &mut ChaCha8Rng) -> (Vec<String>, u16) {
        let year = rng.gen_range(*pools::YEARS.start()..=*pools::YEARS.end());
        let day = rng.gen_range(1..=28);
        let month = rng.gen_range(1..=12);
        let sep = ["/", "-", "."][rng.gen_range(0..3)];
        (vec![format!("{day:02}{sep}{month:02}{sep}{year}")], year)
    }

    fn amount(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let currency = if rng.gen_bool(0.5) { "$" } else { "rm" };
        let whole = rng.gen_range(1..1000);
        let cents = rng.gen_range(0..100);
        vec![currency.to_string(), format!("{whole}.{cents:02}")]
    }

    fn address(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let p = self.pools;
        let mut out = vec!["no".to_string(), format!("{},", rng.gen_range(1..100))];
        out.push("jalan".into());
        out.push(p.streets.choose(rng).expect("non-empty").clone());
        if rng.gen_bool(0.5) {
            out.push(format!("{}", rng.gen_range(1..30)));
        }
        out.last_mut().expect("non-empty").push(',');
        if rng.gen_bool(0.6) {
            out.push("taman".into());
            out.push(p.areas.choose(rng).expect("non-empty").clone());
            out.push(p.streets.choose(rng).expect("non-empty").clone());
        }
        out.push(format!("{}", rng.gen_range(10000..99999)));
        out.extend(
            p.cities
                .iter()
                .filter(|c| !c.is_empty())
                .choose(rng)
                .expect("non-empty")
                .iter()
                .cloned(),
        );
        out
    }

    fn answer(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let p = self.pools;
        if rng.gen_bool(0.5) {
            let a = (b'a' + rng.gen_range(0..26u8)) as char;
            let b = (b'a' + rng.gen_range(0..26u8)) as char;
            vec![format!("{a}{b}-{:04}", rng.gen_range(0..10000))]
        } else {
            let n = rng.gen_range(2..=4);
            (0..n)
                .map(|_| p.answer_words.choose(rng).expect("non-empty").clone())
                .collect()
        }
    }
}

fn form_key(ft: FieldType, rng: &mut ChaCha8Rng) -> &'static [&'static str] {
    let options: &[&[&str]] = match ft {
        FieldType::Name => &[
            &["name", ":"],
            &["to", ":"],
            &["from", ":"],
            &["approved", "by", ":"],
        ],
        FieldType::Date => &[&["date", ":"]],
        FieldType::Amount => &[&["amount", ":"], &["total", "cost", ":"], &["budget", ":"]],
        FieldType::Company => &[&["company", ":"], &["vendor", ":"]],
        FieldType::Address => &[&["address", ":"]],
        FieldType::Answer => &[
            &["code", ":"],
            &["ref", "no", ":"],
            &["project", ":"],
            &["remarks", ":"],
        ],
    };
    options[rng.gen_range(0..options.len())]
}

struct Draft {
    doc: Document,
    restaurant: bool,
    years: Vec<u16>,
}

fn form(
    id: String,
    vocab: &Vocabulary,
    values: &mut Values,
    filler: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Draft> {
    let pools = values.pools;
    let mut page = Page::new(
        vocab,
        MARGIN + rng.gen_range(0..60),
        MARGIN + rng.gen_range(0..60),
    );
    let n_header = rng.gen_range(2..=4);
    let header: Vec<String> = (0..n_header)
        .map(|_| pools.form_headers.choose(rng).expect("non-empty").clone())
        .chain(std::iter::once("form".to_string()))
        .collect();
    page.words(&header);
    page.newline();
    page.newline();

    let mut types = vec![FieldType::Date];
    let others = [
        FieldType::Name,
        FieldType::Name,
        FieldType::Amount,
        FieldType::Company,
        FieldType::Address,
        FieldType::Answer,
    ];
    let n_other = rng.gen_range(3..=5);
    types.extend(others.choose_multiple(rng, n_other).copied());
    types.shuffle(rng);

    let mut years = Vec::new();
    for ft in types {
        page.words(form_key(ft, rng));
        page.tab(page.left + 200);
        let value = match ft {
            FieldType::Name => values.name(rng)?,
            FieldType::Date => {
                let (v, y) = values.date(rng);
                years.push(y);
                v
            }
            FieldType::Amount => values.amount(rng),
            FieldType::Company => values.company(rng)?.words,
            FieldType::Address => values.address(rng),
            FieldType::Answer => values.answer(rng),
        };
        page.field(&value, ft);
        page.newline();
    }
    if !filler.is_empty() && rng.gen_bool(0.7) {
        page.newline();
        let n = rng.gen_range(2..=5);
        let note: Vec<&String> = (0..n)
            .map(|_| filler.choose(rng).expect("non-empty"))
            .collect();
        page.words(&note);
    }
    Ok(Draft {
        doc: finish(id, TemplateKind::Form, page),
        restaurant: false,
        years,
    })
}

fn receipt(
    id: String,
    vocab: &Vocabulary,
    values: &mut Values,
    rng: &mut ChaCha8Rng,
) -> Result<Draft> {
    let pools = values.pools;
    let mut page = Page::new(
        vocab,
        MARGIN + rng.gen_range(0..80),
        MARGIN + rng.gen_range(0..60),
    );
    let company = values.company(rng)?;
    page.field(&company.words, FieldType::Company);
    page.newline();
    let address = values.address(rng);
    page.field(&address, FieldType::Address);
    page.newline();
    page.words(&[
        "tel",
        ":",
        &format!(
            "{:02}-{:04}",
            rng.gen_range(0..100),
            rng.gen_range(0..10000)
        ),
    ]);
    page.newline();
    page.words(&[
        "invoice",
        "no",
        ":",
        &format!("{:05}", rng.gen_range(0..100000)),
    ]);
    page.newline();
    page.words(&["date", ":"]);
    let (date, year) = values.date(rng);
    page.field(&date, FieldType::Date);
    page.newline();
    page.words(&["item", "qty", "price"]);
    page.newline();
    for _ in 0..rng.gen_range(1..=3) {
        page.words(&[pools.items.choose(rng).expect("non-empty").as_str()]);
        page.tab(page.left + 360);
        page.words(&[format!("{}", rng.gen_range(1..10))]);
        page.tab(page.left + 520);
        page.words(&[format!(
            "{}.{:02}",
            rng.gen_range(1..100),
            rng.gen_range(0..100)
        )]);
        page.newline();
    }
    page.words(&["total"]);
    page.tab(page.left + 360);
    let total = values.amount(rng);
    page.field(&total, FieldType::Amount);
    page.newline();
    page.words(&["thank", "you"]);
    Ok(Draft {
        doc: finish(id, TemplateKind::Receipt, page),
        restaurant: company.restaurant,
        years: vec![year],
    })
}

fn finish(id: String, kind: TemplateKind, page: Page) -> Document {
    Document {
        id,
        template_kind: kind,
        tokens: page.tokens,
        boxes: page.boxes,
        image: None,
        fields: page.fields,
        duplicate_of: None,
    }
}

fn excluded(draft: &Draft, exclude: &[Exclusion]) -> bool {
    exclude.iter().any(|e| match e {
        Exclusion::Kind(k) => draft.doc.template_kind == *k,
        Exclusion::RestaurantReceipts => draft.restaurant,
        Exclusion::Year(y) => draft.years.contains(y),
    })
}

/// Shifts and slightly rotates every box of `doc` around the page center.
fn perturb_layout(boxes: &[BBox], rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let dx = rng.gen_range(-30.0..=30.0f64);
    let dy = rng.gen_range(-30.0..=30.0f64);
    let theta = rng.gen_range(-2.0..=2.0f64).to_radians();
    let (s, c) = theta.sin_cos();
    let clamp = |v: f64| v.round().clamp(0.0, COORD_MAX as f64) as u16;
    boxes
        .iter()
        .map(|b| {
            let corners = [(b.x0, b.y0), (b.x1, b.y0), (b.x0, b.y1), (b.x1, b.y1)];
            let pts = corners.map(|(x, y)| {
                let (x, y) = (x as f64 - 500.0, y as f64 - 500.0);
                (x * c - y * s + 500.0 + dx, x * s + y * c + 500.0 + dy)
            });
            let xs = pts.map(|p| p.0);
            let ys = pts.map(|p| p.1);
            let min = |a: [f64; 4]| a.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = |a: [f64; 4]| a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            BBox {
                x0: clamp(min(xs)),
                y0: clamp(min(ys)),
                x1: clamp(max(xs)),
                y1: clamp(max(ys)),
            }
        })
        .collect()
}

/// Generates a synthetic corpus. Equal specs give bit-identical output.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let vocab = spec.vocabulary()?;
    let filler = filler_words(&vocab);
    let mut rng = seed::rng(seed::derive(spec.seed, "corpus"));
    let n_dup = spec.n_duplicates();
    let dup_slots: HashSet<usize> = if n_dup > 0 {
        rand::seq::index::sample(&mut rng, spec.n_docs - 1, n_dup)
            .into_iter()
            .map(|i| i + 1)
            .collect()
    } else {
        HashSet::new()
    };

    let mut values = Values {
        pools: &spec.pools,
        unique: spec.unique_values,
        used_names: HashSet::new(),
        used_companies: HashSet::new(),
    };
    let mut docs: Vec<Document> = Vec::with_capacity(spec.n_docs);
    let mut originals: Vec<usize> = Vec::new();
    for i in 0..spec.n_docs {
        let id = format!("{}{:05}", spec.id_prefix, i);
        let mut doc = if dup_slots.contains(&i) {
            let src = &docs[originals[rng.gen_range(0..originals.len())]];
            Document {
                id,
                boxes: perturb_layout(&src.boxes, &mut rng),
                image: None,
                duplicate_of: Some(src.id.clone()),
                ..src.clone()
            }
        } else {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Config(
                        "exclusion filters reject every generated document".into(),
                    ));
                }
                let draft = if rng.gen_bool(spec.form_fraction) {
                    form(id.clone(), &vocab, &mut values, &filler, &mut rng)?
                } else {
                    receipt(id.clone(), &vocab, &mut values, &mut rng)?
                };
                if draft.doc.len() > spec.max_seq_len || excluded(&draft, &spec.exclude) {
                    continue;
                }
                if !draft.doc.fields.iter().any(|f| f.selected) {
                    continue;
                }
                originals.push(i);
                break draft.doc;
            }
        };
        if spec.render_images {
            doc.image = Some(render(&doc));
        }
        doc.validate(spec.max_seq_len)?;
        docs.push(doc);
    }
    Ok(docs)
}
