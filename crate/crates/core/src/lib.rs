//! Deploys Docker-described applications to HPC batch clusters as
//! Charliecloud containers.
//!
//! The pipeline: a user Dockerfile is adapted to a target cluster
//! ([`imageprep`], driven by a [`targets`] profile), built and packed into a
//! container archive; the middleware ([`engine`]) moves the archive to the
//! cluster, stages input data ([`staging`]), renders a batch script
//! ([`batchgen`]) from the job configuration ([`config`]), submits it and
//! tracks the job until outputs can be staged out. All cluster interaction
//! goes through [`cluster::ClusterSession`], which has an SSH implementation
//! and a deterministic in-process scheduler simulator.

pub mod batchgen;
pub mod config;
pub mod digest;
pub mod imageprep;
pub mod metrics;
pub mod targets;

#[cfg(feature = "runtime")]
pub mod cluster;
#[cfg(feature = "runtime")]
pub mod engine;
#[cfg(feature = "runtime")]
pub mod staging;
