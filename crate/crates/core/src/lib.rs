//! Point defects in multilattices: site potentials, relaxation, phonons,
//! Cauchy-Born continuum limits and lattice Green's functions.

pub mod cauchyborn;
pub mod crystal;
pub mod energy;
pub mod error;
pub mod fieldio;
pub mod greens;
pub mod lattice;
pub mod potential;
pub mod relax;
pub mod spectral;

pub use crystal::{load_crystal, Crystal, CrystalDoc, PresetRegistry};
pub use energy::DisplacementField;
pub use error::{Error, Result};
pub use lattice::{BondTriplet, InteractionRange, LatticeWindow, Multilattice};
pub use potential::{DefectModel, PotentialRegistry, SharedPotential, SitePotential};
