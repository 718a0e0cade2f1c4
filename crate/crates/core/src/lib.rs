//! Knowledge-enhanced, LLM-guided causal discovery for next-visit diagnosis
//! prediction.

pub mod ehr;
pub mod causal;
pub mod gateway;
pub mod knowledge;
pub mod agents;
pub mod pipeline;
