//! Chunking, the fold over chunks, and the three reference conditions.

mod checkpoint;
mod chunk;
mod driver;
mod eval;
mod text;

pub use checkpoint::{decode_state, encode_state, load_state, save_state, CHECKPOINT_MAGIC};
pub use chunk::{chunk_sequence, Chunk};
pub use driver::{fold_run, FoldState, StepOutput};
pub use eval::{eval_three_conditions, token_nll, Condition, EvalRecord, IsolatedPositions};
pub use text::{
    byte_detokenize, byte_tokenize, document_window, filler_tokens, parse_token_file,
    SyntheticCorpus, DOCUMENT_OFFSET,
};
