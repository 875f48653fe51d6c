//! Builds the model gateway and prover a run configuration asks for.

use std::io::Write;
use std::sync::Arc;

use crate::config::{load_roster, ConfigError, RunConfig, DEFAULT_MODEL};
use crate::formal::{MockProver, ProverBackend, ProverError, SubprocessProver};
use crate::gateway::{Gateway, GatewayError, HttpBackend, RecordingBackend, ReplayBackend};
use crate::pipeline::{run_pipeline, HumanInput, PipelineDeps, PipelineError, RunObserver};
use crate::record::RunRecord;
use crate::store::Level;

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Replays a cassette, records one through the HTTP backend, or talks to
/// the HTTP backend directly. The `mock` model only works from a cassette.
pub fn gateway_for(config: &RunConfig) -> Result<Gateway, SetupError> {
    let http = || HttpBackend::from_env(config.base_url.as_deref());
    match (&config.cassette, config.record) {
        (Some(path), false) => Ok(Gateway::new(ReplayBackend::open(path)?)),
        (Some(path), true) => Ok(Gateway::new(RecordingBackend::new(http(), path.clone()))),
        (None, true) => Err(ConfigError::Invalid("--record needs a cassette path".into()).into()),
        (None, false) if config.model_id == DEFAULT_MODEL => Err(ConfigError::Invalid(
            "the mock model replays a cassette; pass --cassette or choose a real model".into(),
        )
        .into()),
        (None, false) => Ok(Gateway::new(http())),
    }
}

/// A subprocess prover when a command is given, else the fixture-driven mock.
pub fn prover_for(config: &RunConfig) -> Result<Arc<dyn ProverBackend>, SetupError> {
    match (&config.prover_cmd, &config.prover_fixture) {
        (Some(cmd), None) => Ok(Arc::new(SubprocessProver::new(cmd.clone()))),
        (None, Some(path)) => Ok(Arc::new(MockProver::open(path)?)),
        (Some(_), Some(_)) => Err(ConfigError::Invalid(
            "choose either a prover command or a prover fixture, not both".into(),
        )
        .into()),
        (None, None) => Err(ConfigError::Invalid(
            "no prover configured; pass --prover-cmd or --prover-fixture".into(),
        )
        .into()),
    }
}

/// Everything between a validated config and a finished run: roster,
/// gateway and prover set-up, then the pipeline itself.
pub fn launch(
    config: &RunConfig,
    human: &dyn HumanInput,
    observer: &dyn RunObserver,
    console: Option<(Level, Box<dyn Write + Send>)>,
) -> Result<RunRecord, SetupError> {
    config.validate()?;
    let (agents, tasks) = load_roster(config)?;
    let gateway = gateway_for(config)?;
    let prover = prover_for(config)?;
    let deps = PipelineDeps {
        gateway: &gateway,
        prover: prover.as_ref(),
        human,
        observer,
        console,
        now: None,
    };
    Ok(run_pipeline(config, &agents, &tasks, deps)?)
}
