pub mod cutcell;
pub mod gauss;
pub mod weighted;

pub use cutcell::{
    build_cut_cell_rule, clip_cell, default_cut_order, omega_volume, ClippedCell, CutCellRule,
    SlicedCellRule,
};
pub use gauss::{gauss_legendre, GaussRule, MAX_GAUSS_POINTS};
pub use weighted::{build_dwq_rule, build_wq_rules, BasisTable, DwqRule, PointSuperset, WqRule};
