//! Core library for a budgeted, multi-episode research agent.
//!
//! The crate is organized around a single data flow: a task query enters the
//! [`agent`] loop, which repeatedly asks a [`backend`] model for the next
//! thought/action pair, routes tool calls through the [`gateway`], and records
//! every step in a [`context`] trajectory log. The context module also owns
//! the bounded view of that log the model actually sees. [`verifier`] adds
//! step-level and answer-level review on top of the loop, [`training`]
//! implements the scalar objectives used to tune such an agent offline, and
//! [`harness`] runs benchmark suites and aggregates reproducible metrics.
//!
//! Everything here is synchronous and deterministic given a deterministic
//! model backend; live HTTP backends are the only source of nondeterminism.

pub mod agent;
pub mod backend;
pub mod config;
pub mod context;
pub mod gateway;
pub mod harness;
pub mod trace;
pub mod training;
pub mod verifier;
