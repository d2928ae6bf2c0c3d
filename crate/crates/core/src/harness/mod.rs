pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod metrics;
pub mod run;
pub mod train;
