//! Toy-scale Transformer workbench: a forward pass in causal or
//! bidirectional mode that records every head's attention together with
//! its query and key vectors, plus the views and metrics built on top of
//! that record.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod trace;
pub mod wire;

pub use analysis::{
    classify_head, rank_heads, summarize_head, summarize_trace, HeadSummary, PatternLabel,
    Thresholds,
};
pub use engine::{forward, Model};
pub use error::{Error, Result};
pub use model::{generate_synthetic_model, load_model, save_model, ModelConfig, WeightSet};
pub use tensor::Matrix;
pub use tokenizer::{tokenize, Mode, TokenizedInput, Vocabulary};
pub use trace::{
    apply_filter, neuron_detail, thumbnail, AttentionTrace, FilterSpec, HeadThumbnail, HeadTrace,
    NeuronDetail, Sentence, DEFAULT_THUMBNAIL_RESOLUTION,
};
pub use wire::{deserialize_trace, serialize_trace, TraceDocument};
