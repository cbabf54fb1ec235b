//! Finite basic families on exhausted domains of `ℝⁿ`.
//!
//! Every continuous `f` on a locally compact domain of covering dimension
//! `≤ n` can be written as `f = Σᵢ gᵢ ∘ Φᵢ` with `2n + 1` fixed continuous
//! inner functions `Φᵢ` and continuous univariate coordinate functions `gᵢ`.
//! This crate builds that representation explicitly for `ℝⁿ`:
//!
//! * [`exhaustion`] — compacts `K_m`, shells `H_m`, annuli `L_s` and buffers;
//! * [`cover`] — per-level shifted-grid covers by `2n + 1` discrete families;
//! * [`inner`] — the approximation ladder `f_k^i` and its limits `Φᵢ`;
//! * [`coordinate`] — annulus decomposition and contraction sweeps for `gᵢ`;
//! * [`model`] — the bundled superposition with certificates and storage;
//! * [`functions`] — the named test-function registry.

pub mod arith;
pub mod exhaustion;
pub mod cover;
pub mod inner;
pub mod coordinate;
pub mod functions;
pub mod model;
