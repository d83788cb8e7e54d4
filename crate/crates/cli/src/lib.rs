//! Experiment runner: configs, datasets, caching and the subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod commands;
pub mod config;
pub mod csvout;
pub mod data;
pub mod error;
pub mod oracle;
pub mod run;
