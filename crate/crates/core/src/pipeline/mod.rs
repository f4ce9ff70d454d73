//! Transmission of GoPs, training objectives, training stages and
//! evaluation.

pub mod config;
pub mod gop;
pub mod loss;
pub mod train;
pub mod eval;

pub use config::{ChannelConfig, DiffusionConfig, EvalConfig, ExperimentConfig, Fading, TrainConfig};
pub use gop::{sample_channel, transmit_gop, Compensation, GopBundle, GopOptions, GopSeed, PFrame};
pub use loss::{diffusion_terms, loss_diffusion, loss_reconstruction, DiffusionDraw, DiffusionNets, DiffusionTerms};
pub use train::{completed_stage, stage_objective, train_stage, Stage, TrainReport};
pub use eval::{
    evaluate, read_csv, simulate, sweep, write_csv, EvalRow, FrameRecord, Role, SimulationConfig, Summary, SweepParam,
    SweepPoint, SweepResult,
};
