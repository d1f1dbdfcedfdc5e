pub mod geometry;
pub mod graph;
pub mod vocab;
pub mod bus;
pub mod extract;
pub mod retrieve;
pub mod merge;
pub mod rules;
pub mod mission;
pub mod sim;
pub mod cli;
