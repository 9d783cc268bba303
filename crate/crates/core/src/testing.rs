//! Deterministic in-process stand-ins for the generation endpoint, used by
//! integration tests and offline pipeline exercises.

use rand::Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gateway::Transport;
use crate::seed::{derive_seed, derive_seed_indexed, rng_from_seed};

/// A transport that answers chat and embedding requests from two closures
/// instead of the network. The chat closure maps a prompt to the completion
/// text plus optional per-token logprobs; the embedding closure maps a text
/// to its vector.
pub struct ScriptedTransport {
    chat: Box<dyn Fn(&str) -> (String, Option<Vec<f64>>) + Send + Sync>,
    embed: Box<dyn Fn(&str) -> Vec<f64> + Send + Sync>,
}

impl ScriptedTransport {
    pub fn new(
        chat: impl Fn(&str) -> (String, Option<Vec<f64>>) + Send + Sync + 'static,
        embed: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            chat: Box::new(chat),
            embed: Box::new(embed),
        }
    }
}

impl Transport for ScriptedTransport {
    fn execute(&self, request: &Value, endpoint: &str) -> Result<Value> {
        if endpoint.contains("embeddings") {
            let text = request["input"][0]
                .as_str()
                .ok_or_else(|| Error::Transport("embedding request without input text".into()))?;
            return Ok(json!({"data": [{"embedding": (self.embed)(text)}]}));
        }
        let prompt = request["messages"][0]["content"]
            .as_str()
            .ok_or_else(|| Error::Transport("chat request without message content".into()))?;
        let (text, logprobs) = (self.chat)(prompt);
        let logprobs_value = match logprobs {
            None => Value::Null,
            Some(lps) => json!({
                "content": lps.iter().map(|l| json!({"logprob": l})).collect::<Vec<_>>()
            }),
        };
        Ok(json!({
            "choices": [{
                "message": {"content": text},
                "logprobs": logprobs_value,
            }]
        }))
    }
}

/// A deterministic pseudo-embedding: the text hash seeds a generator that
/// fills `dim` coordinates uniform in [-1, 1].
pub fn hash_embedding(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, &format!("testing/hash-embed/{text}")));
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// An embedding near a fixed per-topic center: the center has coordinates
/// uniform in [-1, 1] and each instance adds jitter uniform in
/// [-spread, spread], so topics separate cleanly whenever `spread` is small
/// relative to typical center distances.
pub fn topic_embedding(dim: usize, topic: u64, instance: u64, spread: f64) -> Vec<f64> {
    let mut center_rng = rng_from_seed(derive_seed_indexed(7, "testing/topic-center", topic));
    let center: Vec<f64> = (0..dim).map(|_| center_rng.gen_range(-1.0..1.0)).collect();
    let jitter_seed = derive_seed_indexed(derive_seed(7, "testing/topic-jitter"), "i", instance);
    let mut jitter_rng = rng_from_seed(derive_seed_indexed(jitter_seed, "topic", topic));
    center
        .into_iter()
        .map(|c| c + jitter_rng.gen_range(-spread..spread))
        .collect()
}
