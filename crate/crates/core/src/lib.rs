pub mod collector;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod ppo;
pub mod rewards;
pub mod sandbox;
pub mod util;
