//! Relative positional multi-head attention.

pub mod encoding;
pub mod layer;
pub mod position;

pub use encoding::RelPosEncoding;
pub use layer::{attention, pffn, AttnOutput, AttnSettings, AttnWeights, FfnWeights, LAYER_NORM_EPS};
pub use position::{
    position_scores, position_term, position_term_factorized, position_term_gather,
    position_term_naive, AttnVariant, DistanceTable,
};
