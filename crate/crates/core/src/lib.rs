pub mod corpus;
pub mod diagonalization;
pub mod emery;
pub mod emm;
pub mod io;
pub mod linalg;
pub mod rational;
pub mod reconstruct;
pub mod representation;
pub mod sft;
pub mod sigma;
pub mod tree;
