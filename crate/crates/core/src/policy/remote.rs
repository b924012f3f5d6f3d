//! HTTP adapter for an external policy service.
//!
//! `POST /candidates {context, k, temperature, top_p}` -> `{candidates: [{text, logprob}]}`
//! `POST /score {context, text}` -> `{logprob}`
//!
//! Either response may carry an optional `token_count`; when present the log-probability
//! is divided by it (mean per-token log-likelihood).

use serde::{Deserialize, Serialize};

use super::{finalize_candidates, Candidate, Policy, PolicyContext, SampleRequest};
use crate::error::{Error, Result};
use crate::experience::ActionText;
use crate::transport::{HttpConfig, JsonClient};

#[derive(Serialize)]
struct CandidatesRequest<'a> {
    context: &'a str,
    k: usize,
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct CandidatesResponse {
    candidates: Vec<ScoredText>,
}

#[derive(Deserialize)]
struct ScoredText {
    text: String,
    logprob: f64,
    #[serde(default)]
    token_count: Option<u32>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    context: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprob: f64,
    #[serde(default)]
    token_count: Option<u32>,
}

fn per_token(logprob: f64, token_count: Option<u32>) -> f64 {
    match token_count {
        Some(n) if n > 0 => logprob / n as f64,
        _ => logprob,
    }
}

pub struct RemotePolicy {
    client: JsonClient,
}

impl RemotePolicy {
    pub fn new(cfg: &HttpConfig) -> Self {
        RemotePolicy {
            client: JsonClient::new(cfg),
        }
    }
}

impl Policy for RemotePolicy {
    fn sample_candidates(&self, ctx: &PolicyContext, req: &SampleRequest) -> Result<Vec<Candidate>> {
        req.validate()?;
        let context = ctx.render();
        let resp: CandidatesResponse = self.client.post(
            "/candidates",
            &CandidatesRequest {
                context: &context,
                k: req.k,
                temperature: req.temperature,
                top_p: req.top_p,
            },
        )?;
        let raw = resp
            .candidates
            .into_iter()
            .filter(|c| !c.text.trim().is_empty())
            .map(|c| {
                Ok(Candidate {
                    text: ActionText::new(c.text)?,
                    log_likelihood: per_token(c.logprob, c.token_count),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        finalize_candidates(raw, req.k)
    }

    fn score_text(&self, ctx: &PolicyContext, text: &ActionText) -> Result<f64> {
        let context = ctx.render();
        let resp: ScoreResponse = self.client.post(
            "/score",
            &ScoreRequest {
                context: &context,
                text: text.as_str(),
            },
        )?;
        let lp = per_token(resp.logprob, resp.token_count);
        if !lp.is_finite() {
            return Err(Error::invalid(format!("remote score for {text:?} is not finite")));
        }
        Ok(lp)
    }
}
