pub mod ast;
pub mod engine;
pub mod model;
