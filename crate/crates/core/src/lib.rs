pub mod checkpoint;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plane;
pub mod tensor;
