//! Synthetic annotated documents: vocabulary, generation, rendering,
//! partitioning and scrubbing.

pub mod document;
pub mod generate;
pub mod io;
pub mod partition;
pub mod pools;
pub mod render;
pub mod scrub;
pub mod vocab;

pub use document::{BBox, Document, Field, FieldType, Image, TemplateKind};
pub use generate::{build_vocabulary, generate_corpus, CorpusSpec, Exclusion};
pub use partition::{partition, partition_sizes, Partition, PartitionRatios};
pub use pools::ValuePools;
pub use render::render;
pub use scrub::{extract, scrub, AttackView, ScrubbedField};
pub use vocab::{TokenId, Vocabulary};
