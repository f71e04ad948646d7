//! Tutorial-video knowledge acquisition for GUI agents: retrieve relevant
//! screen-recorded tutorials, turn them into annotated interface
//! transitions, decompose those into planning and grounding knowledge, and
//! render it into agent prompts.

pub mod concurrency;
pub mod config;
pub mod cost;
pub mod eval;
pub mod fsutil;
pub mod idm;
pub mod inject;
pub mod knowledge;
pub mod perception;
pub mod pipeline;
pub mod provider;
pub mod retrieval;
pub mod structured;
pub mod subtitle;
