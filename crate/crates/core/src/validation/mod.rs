//! A-posteriori error control: twin Monte Carlo estimates of the local
//! regression errors and their propagation into global error bounds.

mod bounds;
mod twin;

pub use bounds::{
    geometric_bound, global_bounds, lemma_inequalities, poly_closed_form, poly_tables,
    LemmaCheck, PolyTables,
};
pub use twin::{twin_local_error, TwinEstimate};
