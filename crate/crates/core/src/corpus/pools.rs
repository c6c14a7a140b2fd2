//! Built-in word pools for the synthetic corpus.

use serde::{Deserialize, Serialize};

const FIRST_NAMES: &[&str] = &[
    "james", "mary", "robert", "linda", "michael", "susan", "david", "karen", "richard", "nancy",
    "joseph", "lisa", "thomas", "betty", "charles", "sandra", "daniel", "ashley", "mark", "donna",
    "paul", "carol", "steven", "amanda", "andrew", "helen", "kevin", "laura", "brian", "sharon",
    "ahmad", "siti", "wei", "mei", "raj", "priya", "hassan", "aisha", "chen", "lim",
];

const LAST_NAMES: &[&str] = &[
    "smith", "johnson", "williams", "brown", "jones", "miller", "davis", "wilson", "anderson",
    "taylor", "moore", "jackson", "martin", "thompson", "white", "harris", "clark", "lewis",
    "walker", "hall", "young", "allen", "wright", "scott", "green", "baker", "adams", "nelson",
    "carter", "mitchell", "roberts", "turner", "phillips", "campbell", "parker", "evans",
    "edwards", "collins", "stewart", "morris",
];

const TITLES: &[&str] = &["mr", "ms", "dr", "mrs"];

const COMPANY_WORDS: &[&str] = &[
    "acme", "sunrise", "golden", "lucky", "prima", "ocean", "maju", "jaya", "sinar", "global",
    "united", "royal", "eastern", "pacific", "summit", "mega", "star", "bright", "green",
    "harmony", "unique", "perfect", "supreme", "crystal", "liberty", "emerald", "pioneer", "vista",
    "orient", "metro",
];

const COMPANY_SUFFIXES: &[&[&str]] = &[
    &["sdn", "bhd"],
    &["enterprise"],
    &["trading"],
    &["mart"],
    &["hardware"],
    &["bookstore"],
    &["pharmacy"],
    &["restaurant"],
    &["cafe"],
    &["kitchen"],
    &["corp"],
    &["inc"],
];

/// Company suffixes that make a receipt a restaurant receipt.
pub const RESTAURANT_SUFFIXES: &[&str] = &["restaurant", "cafe", "kitchen"];

const STREETS: &[&str] = &[
    "mawar", "melati", "kenanga", "cempaka", "dahlia", "orkid", "teratai", "seroja", "anggerik",
    "bunga", "raya", "utama", "besar", "indah", "permai", "setia", "damai", "murni", "harmoni",
    "bakti",
];

const AREAS: &[&str] = &[
    "sri", "bukit", "desa", "kota", "bandar", "seri", "tasek", "sentosa", "jaya", "baru",
];

const CITIES: &[&[&str]] = &[
    &["johor", "bahru"],
    &["kuala", "lumpur"],
    &["petaling", "jaya"],
    &["skudai"],
    &["klang"],
    &["ipoh"],
    &["penang"],
    &["melaka"],
    &["seremban"],
    &["kajang"],
    &["shah", "alam"],
    &["puchong"],
];

const ITEMS: &[&str] = &[
    "rice", "chicken", "tea", "coffee", "bread", "milk", "sugar", "noodle", "pen", "paper",
    "battery", "soap", "fish", "egg", "juice", "water", "tissue", "cable", "bulb", "tape", "glue",
    "file", "ink", "salt", "oil", "flour", "soup", "cake", "bun", "toast",
];

const FORM_HEADERS: &[&str] = &[
    "research",
    "proposal",
    "report",
    "request",
    "memo",
    "program",
    "review",
    "study",
    "approval",
    "product",
    "sample",
    "test",
    "marketing",
    "development",
    "budget",
    "summary",
    "brand",
    "project",
    "planning",
    "quality",
    "evaluation",
    "submission",
    "confidential",
    "internal",
    "quarterly",
    "annual",
    "weekly",
    "monthly",
    "technical",
    "division",
];

const ANSWER_WORDS: &[&str] = &[
    "pending", "approved", "rejected", "urgent", "complete", "revised", "final", "draft", "filter",
    "blend", "menthol", "regular", "lights", "king", "size", "carton", "pack", "case", "unit",
    "batch", "phase", "stage", "region", "north", "south", "east", "west", "central", "domestic",
    "export",
];

/// Structural words used by the templates (keys, receipt boilerplate).
pub const TEMPLATE_WORDS: &[&str] = &[
    "name", "to", "from", "approved", "by", "date", "amount", "total", "cost", "budget", "company",
    "vendor", "address", "code", "ref", "no", "project", "remarks", "form", "jalan", "taman",
    "tel", "invoice", "cash", "change", "tax", "gst", "qty", "price", "thank", "you", "receipt",
    "subtotal", "rounding", "item", "please", "come", "again", "rm",
];

/// Single characters always present so that any generated text tokenizes
/// without UNK.
pub const CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789.,:/-#$()&'@";

pub const YEARS: std::ops::RangeInclusive<u16> = 2014..=2019;

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

fn owned_phrases(phrases: &[&[&str]]) -> Vec<Vec<String>> {
    phrases.iter().map(|p| owned(p)).collect()
}

/// Value pools from which private field values and public filler are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePools {
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub titles: Vec<String>,
    pub company_words: Vec<String>,
    pub company_suffixes: Vec<Vec<String>>,
    pub streets: Vec<String>,
    pub areas: Vec<String>,
    pub cities: Vec<Vec<String>>,
    pub items: Vec<String>,
    pub form_headers: Vec<String>,
    pub answer_words: Vec<String>,
}

impl Default for ValuePools {
    fn default() -> Self {
        Self {
            first_names: owned(FIRST_NAMES),
            last_names: owned(LAST_NAMES),
            titles: owned(TITLES),
            company_words: owned(COMPANY_WORDS),
            company_suffixes: owned_phrases(COMPANY_SUFFIXES),
            streets: owned(STREETS),
            areas: owned(AREAS),
            cities: owned_phrases(CITIES),
            items: owned(ITEMS),
            form_headers: owned(FORM_HEADERS),
            answer_words: owned(ANSWER_WORDS),
        }
    }
}

impl ValuePools {
    /// Names of empty pools, if any.
    pub fn empty_pools(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let checks: [(&'static str, bool); 11] = [
            ("first_names", self.first_names.is_empty()),
            ("last_names", self.last_names.is_empty()),
            ("titles", self.titles.is_empty()),
            ("company_words", self.company_words.is_empty()),
            (
                "company_suffixes",
                self.company_suffixes.iter().all(Vec::is_empty),
            ),
            ("streets", self.streets.is_empty()),
            ("areas", self.areas.is_empty()),
            ("cities", self.cities.iter().all(Vec::is_empty)),
            ("items", self.items.is_empty()),
            ("form_headers", self.form_headers.is_empty()),
            ("answer_words", self.answer_words.is_empty()),
        ];
        for (name, empty) in checks {
            if empty {
                out.push(name);
            }
        }
        out
    }

    /// Every whole word the pools can emit.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.first_names
            .iter()
            .chain(&self.last_names)
            .chain(&self.titles)
            .chain(&self.company_words)
            .chain(self.company_suffixes.iter().flatten())
            .chain(&self.streets)
            .chain(&self.areas)
            .chain(self.cities.iter().flatten())
            .chain(&self.items)
            .chain(&self.form_headers)
            .chain(&self.answer_words)
            .map(String::as_str)
    }
}

/// Filler words used to pad the vocabulary up to its target size. They also
/// show up in form notes so that every vocabulary entry occurs in text.
pub const FILLER: &[&str] = &[
    "account", "action", "agent", "analysis", "area", "basis", "board", "branch", "business",
    "call", "card", "center", "chart", "check", "claim", "client", "copy", "data", "deal", "desk",
    "detail", "document", "effect", "entry", "event", "factor", "fee", "figure", "fund", "goal",
    "group", "guide", "index", "issue", "item", "job", "key", "level", "limit", "line", "list",
    "log", "loss", "market", "matter", "means", "meeting", "method", "model", "need", "note",
    "notice", "office", "option", "order", "owner", "page", "part", "party", "period", "plan",
    "point", "policy", "price", "process", "profit", "rate", "record", "result", "risk", "role",
    "rule", "scale", "scope", "section", "sector", "series", "service", "share", "sheet", "site",
    "source", "staff", "state", "status", "step", "stock", "store", "supply", "system", "target",
    "team", "term", "text", "time", "topic", "trade", "trend", "type", "value", "volume", "work",
    "yield", "zone", "alpha", "beta", "gamma", "delta", "omega", "sigma", "theta", "kappa",
    "lambda", "notes", "terms", "items", "units", "cases", "cards", "files", "pages", "parts",
    "plans", "rates", "roles", "rules", "steps", "teams", "types", "zones", "lines", "lists",
    "goals", "funds", "fees", "jobs", "keys", "logs",
];
