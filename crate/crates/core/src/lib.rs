//! Latent event dynamics for multichannel sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: seeded RNG streams, adaptive quadrature, RK4, a dense
//!   reverse-mode tape and Adam with gradient clipping.
//! - [`dlif`]: the leaky integrate-and-fire drive-to-rate map, refractory
//!   gating, renewal densities and thinning-based renewal sampling.
//! - [`ivp_kl`]: the ODE-integrated upper bound on `KL(q || p_r)` against a
//!   renewal prior, with an independent quadrature oracle.
//! - [`melp`]: mean-matched lognormal mixtures over inter-event intervals.
//! - [`epde`]: the monotone next-event surrogate, event unrolling and the
//!   explicit-Euler trajectory head.
//! - [`erg`]: event-lag adjacency construction and Fisher-z matching.
//! - [`stability`]: Monte-Carlo harness for the adjacency perturbation bounds.
//! - [`toygen`]: the synthetic banded-rate dataset.
//! - [`pipeline`]: model, objective, training loop and evaluation metrics.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and runs sequentially otherwise.

pub mod dlif;
pub mod epde;
pub mod erg;
pub mod error;
pub mod ivp_kl;
pub mod melp;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod stability;
pub mod toygen;

pub use error::{Error, Result};
