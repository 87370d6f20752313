//! One BiCoRec network: embeddings, causal transformer, popularity-guided
//! co-attention and the dot-product scoring head.

pub mod checkpoint;
mod forward;
mod params;

pub use checkpoint::NetworkCheckpoint;
pub use forward::{
    argmax_item, causal_mask, coattend, embed_input, embed_popularity, encode, score, Binder,
    CoAttention, Dropout, ForwardNodes, ForwardTrace, Mode, Network,
};
pub use params::{slot, LayerParams, NetworkConfig, NetworkParameters, INIT_STD};
