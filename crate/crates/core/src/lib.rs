pub mod byol;
pub mod config;
pub mod dsp;
pub mod features;
pub mod mel;
pub mod metrics;
pub mod nn;
pub mod quality;
pub mod screen;
pub mod select;
pub mod signal_io;
pub mod synth;
pub mod tabular;
