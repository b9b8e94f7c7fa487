//! Contrastive pretraining of the journal-entry encoder.

mod loss;
mod train;

pub use loss::{
    cosine_similarity, info_nce, pair_nce, pair_nce_with_grad, pooled_nce_with_grad, set_pairs,
};
pub use train::{
    contrastive_gradient, contrastive_loss, encode_latents, init_networks, pretrain, pretrain_with,
    ContrastiveGradient, EarlyStopping, EpochRecord, PretrainConfig, PretrainOutcome,
};
