//! Networks, losses, gradient penalty, spectral normalization and checkpoints.

pub mod checkpoint;
pub mod losses;
pub mod network;
pub mod penalty;
pub mod spectral;

pub use checkpoint::{load_networks, save_networks};
pub use losses::{
    adv_loss_minimax, adversarial_loss, cycle_loss, feature_matching_loss, lsgan_loss, margin_hinge_mean, mse_loss,
    siamese_margin_loss, siamese_margin_loss_embeddings, travel_loss, travel_loss_embeddings, wasserstein_loss,
    AdvLoss, AdversarialKind, LossWeights, PairLoss, ScalarLoss,
};
pub use network::{build_network, flatten, unflatten, Network, NetworkKind, NetworkSpec};
pub use penalty::{accumulate_penalty_grad, gradient_penalty, gradient_penalty_at, interpolate, Critic, PenaltyEval};
pub use privtranslate_nn::Parameters;
pub use spectral::{apply_spectral_norm, SpectralNormalizer};
