use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::wire::{encode_request, validate_response, EmbedResponse};
use super::BlackBoxEncoder;
use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RemoteOptions {
    /// Images per HTTP request.
    pub max_batch: usize,
    /// Extra attempts after the first failed one.
    pub retries: usize,
    /// Delay before the first retry; doubled for every further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self { max_batch: 64, retries: 3, backoff: Duration::from_millis(250), timeout: Duration::from_secs(60) }
    }
}

/// An encoder behind an HTTP endpoint speaking the JSON wire protocol.
pub struct RemoteEncoder {
    endpoint: String,
    token: Option<String>,
    resolution: (usize, usize),
    dim: usize,
    options: RemoteOptions,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEncoder")
            .field("endpoint", &self.endpoint)
            .field("resolution", &self.resolution)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

/// Connects with default options. The output dimension is learned from a
/// single probe query with a mid-gray image.
pub fn connect_remote(endpoint: &str, token: Option<&str>, resolution: (usize, usize)) -> Result<RemoteEncoder> {
    connect_remote_with(endpoint, token, resolution, RemoteOptions::default())
}

pub fn connect_remote_with(
    endpoint: &str,
    token: Option<&str>,
    resolution: (usize, usize),
    options: RemoteOptions,
) -> Result<RemoteEncoder> {
    if options.max_batch == 0 {
        return Err(Error::InvalidParameter("max_batch must be positive".into()));
    }
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(options.timeout))
        .http_status_as_error(false)
        .build();
    let mut enc = RemoteEncoder {
        endpoint: endpoint.to_string(),
        token: token.map(str::to_string),
        resolution,
        dim: 0,
        options,
        agent: ureq::Agent::new_with_config(config),
    };
    let probe = enc.post(&[ImageTensor::filled(resolution.0, resolution.1, [0.5; 3])])?;
    if probe.dim == 0 {
        return Err(Error::Protocol("server declared dim 0".into()));
    }
    enc.dim = probe.dim;
    debug!("connected to {endpoint}: d = {}", enc.dim);
    Ok(enc)
}

impl RemoteEncoder {
    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &super::wire::EmbedRequest, count: usize) -> std::result::Result<EmbedResponse, Failure> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(Error::Protocol(format!("HTTP {status}: {}", text.trim()))));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("malformed response: {e}"))))?;
        validate_response(&parsed, count).map_err(Failure::Fatal)?;
        Ok(parsed)
    }

    fn post(&self, images: &[ImageTensor]) -> Result<EmbedResponse> {
        let body = encode_request(images)?;
        let attempts = self.options.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.options.backoff * 2u32.saturating_pow(attempt as u32 - 1);
                warn!("{}: attempt {attempt} failed ({last}); retrying in {delay:?}", self.endpoint);
                thread::sleep(delay);
            }
            match self.attempt(&body, images.len()) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(Error::Transport { attempts, message: format!("{}: {last}", self.endpoint) })
    }
}

impl BlackBoxEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn digest(&self) -> String {
        crate::json_digest(&("remote", &self.endpoint, self.resolution, self.dim))
    }

    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.options.max_batch) {
            let resp = self.post(chunk)?;
            if resp.dim != self.dim {
                return Err(Error::Protocol(format!("server switched dim from {} to {}", self.dim, resp.dim)));
            }
            out.extend(resp.features);
        }
        Ok(out)
    }
}
