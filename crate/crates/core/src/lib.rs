pub mod cell;
pub mod correctors;
pub mod data;
pub mod geometry;
pub mod microsim;
pub mod numerics;
pub mod twoscale;
