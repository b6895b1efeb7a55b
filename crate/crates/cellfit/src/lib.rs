//! Parameter identification for coupled curve-evolution / surface
//! reaction-diffusion models of cell motility.
//!
//! A closed planar curve (the cell outline) moves under a geometric
//! evolution law driven by curvature, bending, a volume penalty and a
//! forcing that depends on chemical species living on the curve; the
//! species obey a reaction-diffusion system on the moving curve. Given
//! timestamped observations of outline positions and species values, the
//! crate identifies free model parameters by minimizing a nonlinear
//! least-squares mismatch — either a sharp-interface functional built
//! from closest-point distances or a diffuse-interface functional built
//! from smoothed indicator functions — with a box-constrained
//! Levenberg-Marquardt method over finite-difference Jacobians.
//!
//! Modules:
//! * [`geometry`] — discrete curves, curvature, distances, point grids;
//! * [`forward`] — the evolving-curve finite-element solver;
//! * [`models`] — kinetics, forcings and parameter binding;
//! * [`objective`] — residual vectors in both forms;
//! * [`optimizer`] — the Levenberg-Marquardt loop;
//! * [`data_io`] — observation files, synthetic targets, noise;
//! * [`experiment`] — identification, scans and noise studies;
//! * [`config`] / [`cli`] — the TOML experiment format and the commands.

pub mod cli;
pub mod config;
pub mod data_io;
pub mod experiment;
pub mod forward;
pub mod geometry;
pub mod models;
pub mod objective;
pub mod optimizer;
