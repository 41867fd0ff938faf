pub mod data;
pub mod eval;
pub mod generate;
pub mod qa;
pub mod train;
