pub mod calls;
pub mod corpus;
pub mod features;
pub mod lexer;
pub mod model;
pub mod repro;
pub mod stats;
