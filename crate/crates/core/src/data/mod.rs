//! Captioned corpora, their file formats, caption–caption pairing, batch
//! sampling and the synthetic corpus generator.

mod c2c;
mod corpus;
pub mod io;
mod sampler;
mod synth;
mod translations;

pub use c2c::{build_c2c_pairs, C2CPair, C2CPairSet};
pub use corpus::{CaptionRecord, CaptionedCorpus, Provenance, Split};
pub use io::{load_corpus, write_corpus};
pub use sampler::{sample_batch, Batch, BatchData, BatchSampler, Task, TrainingSource};
pub use synth::{generate_synthetic, SynthSpec, SyntheticCorpora};
pub use translations::{add_translations, ingest_translations, translated_caption_id};
