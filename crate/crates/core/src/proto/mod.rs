//! Routing agents: AODV, LEPR and H-AODV.

pub mod agent;
pub mod aodv;
pub mod constants;
pub mod haodv;
pub mod lepr;
pub mod messages;
pub mod neighbors;
pub mod router;

pub use constants::{ProtocolConstants, ProtocolKind};
