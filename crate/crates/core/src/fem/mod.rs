//! Full-order plane-stress elastoplastic finite-element model.

pub mod element;
pub mod fields;
pub mod material;
pub mod mesh;
pub mod solver;

pub use fields::{extract_nodal_fields, FieldHistory, FieldId, GaussData, NodalFields};
pub use material::{
    equivalent_strain, return_map, von_mises, yield_function, Material, MaterialState, ReturnMap, StressMode,
    Tangent, Voigt,
};
pub use mesh::{build_mesh, Mesh};
pub use solver::{assemble_load, Simulation, Solver, StepSolution, MAX_NEWTON_ITERATIONS, NEWTON_TOLERANCE};
