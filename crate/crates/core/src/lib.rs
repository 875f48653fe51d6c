pub mod cli;
pub mod config;
pub mod conversation;
pub mod formal;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod record;
pub mod setup;
pub mod store;
