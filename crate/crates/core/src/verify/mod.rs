//! Empirical checks of the error equivalences, the axioms of adaptivity,
//! a priori rates and the auxiliary inequalities, with the manufactured
//! problems they run on.

pub mod axioms;
pub mod equivalence;
pub mod manufactured;
pub mod properties;
pub mod rates;

pub use manufactured::{manufactured_problem, manufactured_with, CaseId, ExactSolution, ManufacturedCase};
