pub mod geom;
pub mod harness;
pub mod kernel;
pub mod mobility;
pub mod packet;
pub mod proto;
pub mod radio;
pub mod sim;
