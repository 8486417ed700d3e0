pub mod admm;
pub mod cli;
pub mod config;
pub mod comm;
pub mod diagnostics;
pub mod driver;
pub mod fd;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod qp;
pub mod rate;
pub mod residuals;
pub mod trace;
