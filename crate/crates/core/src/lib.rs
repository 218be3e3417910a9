//! SpecWav attack toolkit: spectrogram-resizing augmentation, fbank and
//! external feature handling, a compact speaker embedder with two-stage
//! incremental training, and EER evaluation of attacks on anonymized speech.

pub mod corpus;
pub mod dsp;
pub mod embedder;
pub mod eval;
pub mod features;
pub mod sr_augment;
pub mod synth;
pub mod trainer;

mod pool;
