pub mod baselines;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod hierarchy;
pub mod llm;
pub mod materialize;
pub mod navigator;
pub mod pipeline;
pub mod provider;
pub mod summarization;
pub mod synthetic;
pub mod text;
