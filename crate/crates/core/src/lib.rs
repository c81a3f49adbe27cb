pub mod agent;
pub mod behavior;
pub mod diffmath;
pub mod envs;
pub mod planner;
pub mod worldmodel;
