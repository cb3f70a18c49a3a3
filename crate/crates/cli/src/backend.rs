use std::path::Path;
use std::time::Duration;

use pearl::backend::{BackendError, FixtureTransport, Request, Transport};
use pearl::simulate::SimulatedBackend;
use pearl::DatasetIndex;
use serde_json::Value;

use crate::error::{CliResult, ResultExt};
use crate::http::HttpTransport;

/// Where model calls go, chosen by `--backend`:
/// an `http(s)://` URL, the word `simulated`, or a fixture file path.
pub enum Backend {
    Fixture(FixtureTransport),
    Http(HttpTransport),
    Simulated(SimulatedBackend),
}

impl Backend {
    pub fn open(spec: &str, dataset: Option<&DatasetIndex>, timeout: Duration) -> CliResult<Self> {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Backend::Http(HttpTransport::new(spec, timeout).runtime()?));
        }
        if spec == "simulated" {
            let index = dataset
                .ok_or_else(|| anyhow::anyhow!("the simulated backend needs --dataset"))
                .usage()?;
            return Ok(Backend::Simulated(SimulatedBackend::new(index)));
        }
        let fixture = FixtureTransport::open(Path::new(spec))
            .map_err(|e| anyhow::anyhow!("{spec}: {e}"))
            .usage()?;
        Ok(Backend::Fixture(fixture))
    }

    /// Manifest label.
    pub fn mode(&self) -> &'static str {
        match self {
            Backend::Fixture(_) => "fixture",
            Backend::Http(_) => "http",
            Backend::Simulated(_) => "simulated",
        }
    }

    /// Model registry of a live server, when it reports one.
    pub fn info(&self) -> Option<Value> {
        match self {
            Backend::Http(h) => h.get("info").ok(),
            _ => None,
        }
    }
}

impl Transport for Backend {
    fn call(&self, request: &Request<'_>) -> Result<Value, BackendError> {
        match self {
            Backend::Fixture(t) => t.call(request),
            Backend::Http(t) => t.call(request),
            Backend::Simulated(t) => t.call(request),
        }
    }
}
