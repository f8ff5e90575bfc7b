//! The autoprecoder: a shared NN-precoder in front of a linear precoder and a
//! shared NN-decoder at every user, trained end to end through the PAs and
//! the channel.

mod chain;
mod checkpoint;
mod model;
pub mod ops;
mod train;

pub use chain::{
    chain_probabilities, end_to_end_forward, receiver_gain, received_samples, record_chain, ChainNodes, ChainOptions,
    ChainOutput, ChainSample, ModelNodes, NoiseLevel,
};
pub use checkpoint::{Checkpoint, CheckpointConfig, TrainMetadata, CHECKPOINT_KIND};
pub use model::{decode, Message, NnModel};
pub use train::{
    initial_model, loss_and_gradients, pooled_channel, train, training_batch, training_snr, TrainConfig, TrainOutcome,
    MAX_CHANNEL_DRAWS,
};
