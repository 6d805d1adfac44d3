//! Deep forward-backward SDE solver: an LSTM predicts the value gradient
//! along sampled trajectories, NOVAS minimizes the Hamiltonian at every
//! step, and the value process is trained to meet the terminal condition.

mod network;
pub(crate) mod problem;
mod rollout;
mod train;

pub use network::{FbsdeNetwork, NetworkConfig, ValueGradient};
pub use problem::{hamiltonian, SocProblem, Terminal};
pub use rollout::{brownian, fbsde_rollout, simulate, summarize, ControlSource, RolloutBatch, Trajectories};
pub use train::{
    evaluate_policy, fbsde_loss, train_fbsde, validation_loss, FbsdeLoss, LossConfig, PolicyEvaluation, TrainConfig,
    TrainOutcome, TrainRecord,
};

#[cfg(test)]
mod tests;
