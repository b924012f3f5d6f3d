//! Adapter for an external sentence-embedding service.
//!
//! `GET /info` -> `{dim}` is called once at construction; `POST /embed {texts}` ->
//! `{vectors}` embeds a batch.

use serde::{Deserialize, Serialize};

use super::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::transport::{HttpConfig, JsonClient};

#[derive(Deserialize)]
struct Info {
    dim: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteEmbedder {
    client: JsonClient,
    dim: usize,
}

impl RemoteEmbedder {
    /// Connects and performs the dimension handshake.
    pub fn connect(cfg: &HttpConfig) -> Result<Self> {
        let client = JsonClient::new(cfg);
        let info: Info = client.get("/info")?;
        if info.dim == 0 {
            return Err(Error::invalid("embedding service announced dimension 0"));
        }
        Ok(RemoteEmbedder { client, dim: info.dim })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::invalid(format!(
                "embedding service returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        resp.vectors
            .into_iter()
            .zip(texts)
            .map(|(vector, text)| {
                if vector.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "embedding of length {} but the service announced {}",
                        vector.len(),
                        self.dim
                    )));
                }
                if vector.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite embedding for {text:?}")));
                }
                Ok(Embedding {
                    vector,
                    source_text: (*text).to_owned(),
                })
            })
            .collect()
    }
}
