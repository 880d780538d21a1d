pub mod case;
pub mod chain;
pub mod codec;
pub mod crypto;
pub mod interchain;
pub mod lifecycle;
pub mod payload;
pub mod provenance;
pub mod registry;
pub mod simnet;
pub mod topology;
