//! Training losses: trajectory reconstruction, contrastive prompt shaping,
//! the combined representation-stage objective, and the improvement-stage
//! prompt ascent and adaptor objectives.

mod contrast;
mod improve;
mod pretrain;
mod supervised;

pub use contrast::{
    disjoint_fragments, info_nce, return_contrast_sets, task_contrast_sets,
};
pub use improve::{
    adaptor_direct_loss, adaptor_distill_loss, ascend_with, prompt_ascent, AscentConfig,
    AscentOutcome,
};
pub use pretrain::{pretrain_loss, ContrastKnobs, PretrainItem, PretrainParts};
pub use supervised::supervised_loss;
