//! Pluggable encoder/decoder handles and the tiny seeded stub backbone.

pub mod decoder;
pub mod text;
pub mod tokenizer;
pub mod vision;

pub use decoder::{Decoding, TinyDecoder};
pub use text::{EmbeddingEncoder, TextEncoder};
pub use tokenizer::{TokenId, Vocab};
pub use vision::{decode_image, PatchEncoder, VisionEncoder};
