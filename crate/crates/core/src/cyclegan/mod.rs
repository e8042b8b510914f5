//! Structure-guided unpaired translation between the two phantom modalities.

pub mod losses;
pub mod train;

pub use losses::{
    adv_loss, cycle_loss, domain_loss, generator_adv_term, identity_loss, l1_mean, maf_loss, total_generator_loss,
    ClampCounter, Components, GenAdversarial, LossWeights, Weighting, DEFAULT_LAMBDA, DEFAULT_MU, PROB_EPS,
};
pub use train::{GanCfg, GanEpoch, TranslationSystem, GAN_HISTORY_HEADER};
