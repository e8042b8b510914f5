//! Gradient-guided sparse-attention distillation.

pub mod flops;
pub mod network;
pub mod objective;
pub mod simulator;
pub mod sparse;
pub mod train;

pub use flops::{flops_estimate, matmul_flops, FlopReport};
pub use network::{positive_probability, NetCfg, ScreeningNet, SparsityCfg, Student, StudentTrace, Teacher, TeacherTrace};
pub use objective::{cross_entropy, distill_kl, total_objective, LambdaSchedule, DEFAULT_DISTILL_TEMPERATURE, DEFAULT_EMA_ALPHA};
pub use simulator::{ema_smooth, grad_sim_loss, EmaBank, GradSimulator, PhiEmbed, EMBED_DIM};
pub use sparse::{dense_attention, importance_fusion, select_topk, sparse_attention, KRule, TopKSets, DEFAULT_FUSION_ALPHA, DEFAULT_TAU};
pub use train::{mean_over_heads, teacher_attention_grad, DistillCfg, DistillHistory, DistillSystem, EpochRecord, TeacherPass};
