//! HTTP client for the rating service.

use arena_eval_core::api::{ErrorBody, Health, LeaderboardResponse, NextTaskResponse, SubmissionAck, SubmitRequest};
use arena_eval_core::model::Aspect;
use arena_eval_core::scheduler::StudyStatus;
use reqwest::{Client, Response, Url};
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("bad base url {0:?}")]
    BaseUrl(String),
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {}", body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("server returned {status}: {text}")]
    Unexpected { status: u16, text: String },
}

#[derive(Debug, Clone)]
pub struct ArenaClient {
    base: Url,
    http: Client,
}

impl ArenaClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base_url).map_err(|_| ClientError::BaseUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::BaseUrl(base_url.to_string()));
        }
        if !base.path().ends_with('/') {
            let p = format!("{}/", base.path());
            base.set_path(&p);
        }
        Ok(Self { base, http: Client::new() })
    }

    fn url(&self, path: &str) -> Result<Url, ClientError> {
        self.base.join(path).map_err(|_| ClientError::BaseUrl(path.to_string()))
    }

    async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => Err(ClientError::Api { status: status.as_u16(), body }),
            Err(_) => Err(ClientError::Unexpected { status: status.as_u16(), text }),
        }
    }

    pub async fn next_task(&self, rater: &str) -> Result<NextTaskResponse, ClientError> {
        let resp = self.http.get(self.url("api/tasks/next")?).query(&[("rater", rater)]).send().await?;
        Self::decode(resp).await
    }

    pub async fn submit(&self, req: &SubmitRequest) -> Result<SubmissionAck, ClientError> {
        let resp = self.http.post(self.url("api/ratings")?).json(req).send().await?;
        Self::decode(resp).await
    }

    pub async fn leaderboard(&self, aspect: Aspect, set: &str, level: Option<f64>) -> Result<LeaderboardResponse, ClientError> {
        let mut query = vec![("aspect", aspect.to_string()), ("set", set.to_string())];
        if let Some(l) = level {
            query.push(("level", l.to_string()));
        }
        let resp = self.http.get(self.url("api/leaderboard")?).query(&query).send().await?;
        Self::decode(resp).await
    }

    pub async fn study_status(&self, study_id: &str) -> Result<StudyStatus, ClientError> {
        let mut url = self.url("api/studies/")?;
        url.path_segments_mut().map_err(|_| ClientError::BaseUrl(self.base.to_string()))?.pop_if_empty().extend([study_id, "status"]);
        let resp = self.http.get(url).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(self.url("healthz")?).send().await?;
        Self::decode(resp).await
    }
}
