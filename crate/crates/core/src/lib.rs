//! Deterministic simulator of a coordination blockchain serving
//! instant-finality sidechains.

pub mod chain;
pub mod codec;
pub mod contracts;
pub mod crosschain;
pub mod digest;
pub mod finality;
pub mod gas;
pub mod par;
pub mod scenario;
pub mod sidechain;
pub mod strength;
