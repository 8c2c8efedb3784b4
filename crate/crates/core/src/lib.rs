pub mod dsp;
pub mod gradsuite;
pub mod io;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
