//! Generalized Kimura operators on corner domains.

pub mod coefficient;
pub mod config;
pub mod error;
pub mod experiments;
pub mod families;
pub mod forms;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod io;
pub mod measure;
pub mod operator;
pub mod oracles;
pub mod pipeline;
pub mod poly;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod stats;

pub use coefficient::{CoefficientField, CoefficientSpec};
pub use error::{KimuraError, Result};
pub use geometry::{CornerBox, CylinderVariant, ParabolicCylinder};
pub use grid::{Field, TensorGrid};
pub use measure::{IntegralOutcome, IntegrationResult, QuadratureSpec, WeightedMeasure};
pub use operator::{Jet, KimuraOperator, OperatorSpec, ValidationReport};
pub use poly::{Monomial, Polynomial};
pub use sparse::CsrMatrix;
