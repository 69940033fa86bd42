pub mod ast;
pub mod bench;
pub mod canon;
pub mod codegen;
pub mod pipeline;
pub mod solver;
pub mod sparse;
pub mod zoo;
