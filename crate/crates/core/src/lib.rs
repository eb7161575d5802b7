pub mod backend;
pub mod causal;
pub mod schema;
pub mod stats;
