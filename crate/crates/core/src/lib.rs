pub mod json;
pub mod process;
pub mod registry;
pub mod uid;
pub mod envdetect;
pub mod template;
pub mod metapkg;
pub mod pipeline;
pub mod autotune;
pub mod solution;
