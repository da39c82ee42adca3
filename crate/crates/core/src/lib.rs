pub mod beamforming;
pub mod channel;
pub mod harness;
pub mod numerics;
pub mod optimizer;
pub mod selection;
