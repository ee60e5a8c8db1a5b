//! Micro decoder-only language model standing in for a pretrained LLM.

mod model;
mod tokenizer;

pub use model::{
    argmax, backward, example_loss, forward, forward_cached, generate, loss, softmax_rows, Block, Example,
    ForwardCache, GradScope, Gradients, LmConfig, LmParams,
};
pub use tokenizer::{TokenId, Tokenizer, BOS, ENT, PAD, RESERVED, STOP, UNK};
