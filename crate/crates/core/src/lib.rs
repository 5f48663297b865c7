pub mod spec;
pub mod gateway;
pub mod synth;
pub mod fixtures;
pub mod train_config;
pub mod rag;
pub mod fsutil;
pub mod eval;
pub mod mock_server;
pub mod agent;
pub mod pipeline;
