//! Text sentiment vector: embeddings (plus part-of-speech one-hots) through
//! a Bi-LSTM, scored attention, a multi-kernel convolution over the
//! attention-weighted sequence, and a dense projection.

mod branch;
mod embedding;
mod tokenize;

pub use branch::{conv_text_features, embed_tokens, TextBranch, TextBranchConfig, TextOutput, TsvSource};
pub use embedding::{EmbeddingTable, UNKNOWN_TOKEN};
pub use tokenize::{tag_token, tag_tokens, tokenize, PosTag};
