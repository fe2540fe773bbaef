//! Voice conversion over discrete speech tokens with a masked prefix language
//! model, a windowed external language model fused at decode time, and a
//! non-autoregressive model for the finer codec layers.
//!
//! Everything runs on a synthetic codec whose content and speaker are exactly
//! recoverable, so conversion quality can be scored without neural judges.

pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod masks;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod tokens;

pub use config::RunConfig;
pub use decode::{convert, fuse_logits, generate_coarse, generate_fine, SamplingConfig, SamplingMode};
pub use error::{Error, Result};
pub use eval::{content_error_rate, evaluate, speaker_accuracy, EvalReport, SpeakerClassifier};
pub use model::{LmModel, ModelConfig, ModelKind, TrainConfig};
pub use masks::{apply_span_mask, mplm_mask, AttnMask, SpanMaskPlan};
pub use synth::{generate_corpus, load_corpus, Corpus, CorpusConfig, Split, SyntheticCodec};
pub use tokens::{build_coarse_prompt, AcousticGrid, CoarsePrompt, SemanticSeq, TokenId, UtterancePair, VocabConfig};
