pub mod autodiff;
pub mod cli;
pub mod data;
pub mod fsutil;
pub mod lab;
pub mod logic;
pub mod models;
