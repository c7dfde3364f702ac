pub mod conenet;
pub mod control;
pub mod dynamics;
pub mod estimator;
pub mod geometry;
pub mod gridmap;
pub mod harness;
pub mod perception;
pub mod planner;
pub mod sensors;
pub mod track;
