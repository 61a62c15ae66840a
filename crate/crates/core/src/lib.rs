pub mod cli;
pub mod control;
pub mod dpkalman;
pub mod error;
pub mod linalg;
pub mod privacy;
pub mod sdp;
pub mod synthesis;
pub mod traffic;
