//! The regional space-time prediction step.

pub mod linalg;
pub mod newton;
pub mod region;
pub mod tables;

pub use linalg::{BlockMatrix, DenseLu};
pub use newton::{predict_all, predict_cells, predict_grid, predict_region, NewtonConfig, PredictStats, Predictor, RegionSolve};
pub use region::{Backend, RegionOps, RegionTopology, RegionWork};
pub use tables::{build_tables, QqfTables};
