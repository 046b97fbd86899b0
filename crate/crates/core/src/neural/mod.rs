//! Fixed-architecture networks: the conditional score model, the learned
//! mixture-weight schedule, their optimizer, and checkpoint files.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod score_net;
pub mod weight_schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use mlp::{mlp_backward, mlp_forward, Activation, Dense, ForwardCache, MlpParams};
pub use score_net::{score_net_eval, InputEncoding, ObservationEncoding, ScoreArch, ScoreNetwork};
pub use weight_schedule::{weight_schedule_eval, WeightArch, WeightSchedule};
