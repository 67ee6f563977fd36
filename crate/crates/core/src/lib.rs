pub mod poly;
pub mod sdp;
pub mod sos;
pub mod system;
pub mod bound;
pub mod synthesis;
pub mod controller;
pub mod sim;
pub mod cli;
