//! Blocking HTTP implementation of [`ServerChannel`].

use std::io::Read;
use std::time::Duration;

use rbm_core::protocol::ServerChannel;
use rbm_core::{BasisUpdate, Error, Result, UpdateRequest};

use crate::basis_api::UpdateBody;
use crate::error::{ErrorBody, RESYNC_REQUIRED};

/// Talks to a basis server's HTTP endpoints.
#[derive(Clone)]
pub struct HttpChannel {
    base: String,
    agent: ureq::Agent,
}

impl HttpChannel {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(600))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(timeout)
            .build();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn read(response: ureq::Response) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        response
            .into_reader()
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Channel(format!("reading response: {e}")))?;
        Ok(bytes)
    }

    fn map_error(err: ureq::Error, identifier: &str) -> Error {
        match err {
            ureq::Error::Status(status, response) => {
                let body: Option<ErrorBody> = response.into_json().ok();
                match (status, body) {
                    (404 | 410, Some(b)) if b.kind == RESYNC_REQUIRED => Error::ResyncRequired(identifier.to_owned()),
                    (410, _) => Error::ResyncRequired(identifier.to_owned()),
                    (_, Some(b)) => Error::Channel(format!("server answered {status}: {}", b.message)),
                    (_, None) => Error::Channel(format!("server answered {status}")),
                }
            }
            ureq::Error::Transport(t) => Error::Channel(t.to_string()),
        }
    }
}

impl ServerChannel for HttpChannel {
    fn request_update(&self, request: &UpdateRequest) -> Result<BasisUpdate> {
        let url = format!("{}/bases/{}/update", self.base, request.basis_id);
        let response = self
            .agent
            .post(&url)
            .send_json(UpdateBody { mu: request.mu })
            .map_err(|e| Self::map_error(e, &request.basis_id))?;
        BasisUpdate::decode(&Self::read(response)?)
    }

    fn fetch_basis(&self, identifier: &str) -> Result<Vec<u8>> {
        let url = format!("{}/bases/{identifier}", self.base);
        let response = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Self::map_error(e, identifier))?;
        Self::read(response)
    }
}
