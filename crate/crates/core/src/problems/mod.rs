//! Concrete control problems: cart-pole swing-up and index-tracking
//! portfolio selection.

mod cartpole;
mod portfolio;

pub use cartpole::CartPole;
pub use portfolio::{baseline_control, synth_covariance, Baseline, Market, MarketConfig, Portfolio};

#[cfg(test)]
mod tests;
