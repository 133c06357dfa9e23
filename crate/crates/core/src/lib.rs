pub mod cipher;
pub mod container;
pub mod geometry;
pub mod keyschedule;
pub mod adaptation;
pub mod model;
pub mod codec;
pub mod attack; pub mod metrics; pub mod synth;
pub mod weights;
pub mod harness;
