pub mod calib;
pub mod cli;
pub mod certs;
pub mod distortion;
pub mod pipeline;
pub mod poly;
pub mod relax;
pub mod sdp;
