//! Speakers, labels, manifests, trial lists and the synthetic corpus generator.

mod embeddings;
mod manifest;
mod schema;
mod synth;
mod trials;

pub use embeddings::{EmbeddingRecord, EmbeddingSynth, EmbeddingTable, EmbeddingVector};
pub use manifest::{label_distribution, load_manifest, ClipRef, Manifest, SpeakerRecord};
pub use schema::{Attribute, AttributeSchema, DEFAULT_ATTRIBUTES};
pub use synth::{synthesize_corpus, SpeakerVoice, SynthPlan, SynthSpec};
pub use trials::{generate_trials, TrialPair, TrialSet};
