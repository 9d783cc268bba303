//! Model access: prompt construction, chat-completion and embedding calls
//! over a configurable endpoint, and a record/replay fixture cache for
//! offline deterministic runs.

mod client;
mod fixtures;
mod prompts;

#[cfg(feature = "live")]
pub use client::HttpTransport;
pub use client::{EndpointConfig, Generation, LlmClient, Transport, BASE_URL_ENV};
pub use fixtures::{fixture_key, FixtureMode, FixtureStore};
pub use prompts::{
    build_confidence_prompt, build_qa_prompt, truncate_at_stop, ConfidenceMode, GenerationParams,
    PromptSpec, PromptStyle, COT_INSTRUCTION, DEFAULT_STOP_SEQUENCES,
};
