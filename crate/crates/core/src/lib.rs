pub mod compose;
pub mod geometry;
pub mod ma;
pub mod workspace;
pub mod product;
pub mod planning;
pub mod sim;
pub mod scenario;
pub mod cli;
