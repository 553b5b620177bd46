pub mod bounds;
pub mod conditions;
pub mod drift;
pub mod error;
pub mod inequalities;
pub mod kernel;
pub mod perturbation;
pub mod quadrature;
pub mod table;
