//! Building blocks shared by the translation and screening networks.

pub mod grl;
pub mod layers;
pub mod mobilevit;
pub mod translate;

pub use grl::{grl_schedule, Grl, DEFAULT_GRL_GAMMA};
pub use layers::{instance_norm, zero_params, BatchNorm, Conv, LayerNorm, Linear, Mode, INIT_STD};
pub use mobilevit::{AttentionVariant, BlockTrace, MobileVitBlock, MobileVitCfg};
pub use translate::{DomainClassifier, Mafe, Mapper, PatchDiscriminator, ResBlock, TranslatorCfg};
