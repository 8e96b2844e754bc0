//! Crystal documents, calibrated model assembly and the preset registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cauchyborn::{reference_deformation, reference_shifts, shift_equilibrium};
use crate::error::{Error, Result};
use crate::lattice::{BondTriplet, InteractionRange, Multilattice};
use crate::potential::{DefectModel, PotentialRegistry, SharedPotential};
use crate::spectral::{stability_certificate, BrillouinGrid, DynamicalMatrix, StabilityCertificate};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DipoleDoc {
    pub site: Vec<i64>,
    pub triplet: Vec<i64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectDoc {
    #[serde(rename = "R_def", default)]
    pub core_radius: f64,
    #[serde(default)]
    pub dipoles: Vec<DipoleDoc>,
}

/// JSON description of a crystal, its potential and an optional defect.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrystalDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "F")]
    pub cell: Vec<Vec<f64>>,
    pub shifts: Vec<Vec<f64>>,
    pub triplets: Vec<Vec<i64>>,
    pub potential: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectDoc>,
}

impl CrystalDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("crystal documents serialise")
    }
}

/// A validated, calibrated crystal ready for computation.
#[derive(Clone)]
pub struct Crystal {
    pub name: String,
    pub doc: CrystalDoc,
    pub lattice: Multilattice,
    pub range: InteractionRange,
    pub potential: SharedPotential,
    pub defect: DefectModel,
    /// Shift correction applied by the calibration step.
    pub calibration_shift: f64,
}

impl fmt::Debug for Crystal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Crystal")
            .field("name", &self.name)
            .field("d", &self.lattice.d())
            .field("n", &self.lattice.n())
            .field("species", &self.lattice.species())
            .field("triplets", &self.range.len())
            .field("potential", &self.potential.kind())
            .finish()
    }
}

impl Crystal {
    pub fn from_doc(doc: &CrystalDoc, registry: &PotentialRegistry) -> Result<Self> {
        if doc.cell.len() != doc.d {
            return Err(Error::Invalid(format!("F has {} rows but d = {}", doc.cell.len(), doc.d)));
        }
        let mut lattice = Multilattice::new(&doc.cell, &doc.shifts, doc.n)?;
        let triplets = doc.triplets.iter().map(|t| BondTriplet::from_slice(doc.d, t)).collect::<Result<Vec<_>>>()?;
        let range = InteractionRange::validate(&lattice, &triplets)?;
        for (t, why) in range.additions() {
            info!("range: added {t} ({why:?})");
        }
        let mut potential = registry.build(&doc.potential, &lattice, &range)?;

        let g = reference_deformation(&lattice);
        let p0 = reference_shifts(&lattice);
        let p = shift_equilibrium(&lattice, potential.as_ref(), &g, &p0)?;
        let mut moved: f64 = 0.0;
        for (a, b) in p.iter().zip(&p0) {
            for (x, y) in a.iter().zip(b) {
                moved = moved.max((x - y).abs());
            }
        }
        if moved > 0.0 {
            if p.iter().any(|v| v[lattice.d()..].iter().any(|x| x.abs() > 1e-12)) {
                return Err(Error::Invalid("equilibrium shifts leave the lattice plane".into()));
            }
            let shifts = p.iter().map(|v| v[..lattice.d()].to_vec()).collect();
            lattice = lattice.with_shifts(shifts);
            potential = registry.build(&doc.potential, &lattice, &range)?;
            info!("calibration moved the shifts by {moved:.3e}");
        }

        let defect = match &doc.defect {
            None => DefectModel::none(),
            Some(dd) => {
                let dim = range.len() * lattice.n();
                let mut dipoles: BTreeMap<[i64; 3], Vec<f64>> = BTreeMap::new();
                for e in &dd.dipoles {
                    if e.site.len() != doc.d {
                        return Err(Error::Invalid(format!("dipole site {:?} has wrong length", e.site)));
                    }
                    if e.g.len() != lattice.n() {
                        return Err(Error::Invalid(format!(
                            "dipole vector {:?} must have {} entries",
                            e.g,
                            lattice.n()
                        )));
                    }
                    let t = BondTriplet::from_slice(doc.d, &e.triplet)?;
                    let i = range
                        .position(&t)
                        .ok_or_else(|| Error::Invalid(format!("dipole triplet {t} not in the range")))?;
                    let mut z = [0i64; 3];
                    z[..doc.d].copy_from_slice(&e.site);
                    let slot = dipoles.entry(z).or_insert_with(|| vec![0.0; dim]);
                    for (c, v) in e.g.iter().enumerate() {
                        slot[i * lattice.n() + c] += v;
                    }
                }
                DefectModel::new(&lattice, &range, dd.core_radius, dipoles)?
            }
        };
        Ok(Crystal {
            name: doc.name.clone().unwrap_or_else(|| "custom".into()),
            doc: doc.clone(),
            lattice,
            range,
            potential,
            defect,
            calibration_shift: moved,
        })
    }

    pub fn dynamical_matrix(&self) -> DynamicalMatrix {
        DynamicalMatrix::new(&self.lattice, self.potential.as_ref())
    }

    pub fn stability(&self, grid: usize) -> Result<StabilityCertificate> {
        let g = BrillouinGrid::new(&self.lattice, grid)?;
        Ok(stability_certificate(&self.lattice, &g, &self.dynamical_matrix(), 1e-8, 1e-8))
    }

    /// The same crystal with species 0 and 1 exchanged and the origin moved
    /// onto the old species 1.
    pub fn relabeled_doc(&self) -> Result<CrystalDoc> {
        let doc = &self.doc;
        if doc.shifts.len() < 2 {
            return Err(Error::Invalid("relabelling needs two species".into()));
        }
        let swap = |a: i64| match a {
            0 => 1,
            1 => 0,
            x => x,
        };
        let mut out = doc.clone();
        let p1 = doc.shifts[1].clone();
        out.shifts = doc
            .shifts
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let src = match a {
                    0 => &doc.shifts[1],
                    1 => &doc.shifts[0],
                    _ => p,
                };
                src.iter().zip(&p1).map(|(x, y)| x - y).collect()
            })
            .collect();
        let d = doc.d;
        out.triplets = doc
            .triplets
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t[d] = swap(t[d]);
                t[d + 1] = swap(t[d + 1]);
                t
            })
            .collect();
        if let Some(obj) = out.potential.as_object_mut() {
            if let Some(Value::Array(pairs)) = obj.get_mut("pairs") {
                for p in pairs {
                    if let Some(Value::Array(sp)) = p.get_mut("species") {
                        for s in sp {
                            if let Some(v) = s.as_i64() {
                                *s = json!(swap(v));
                            }
                        }
                    }
                }
            }
        }
        out.defect = None;
        Ok(out)
    }
}

/// Builds a named crystal document.
pub type PresetFactory = fn() -> CrystalDoc;

/// Crystals shipped with the library, selectable by name.
#[derive(Clone)]
pub struct PresetRegistry {
    presets: BTreeMap<String, PresetFactory>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        let mut r = PresetRegistry { presets: BTreeMap::new() };
        r.register("square1", square1);
        r.register("square1-soft", square1_soft);
        r.register("hex2d", hex2d);
        r.register("hex2d-harmonic", hex2d_harmonic);
        r.register("diamond3d", diamond3d);
        r
    }
}

impl PresetRegistry {
    pub fn register(&mut self, name: &str, factory: PresetFactory) {
        self.presets.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.presets.keys().map(|s| s.as_str())
    }

    pub fn doc(&self, name: &str) -> Result<CrystalDoc> {
        let f = self.presets.get(name).ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
        let mut doc = f();
        doc.name = Some(name.to_string());
        Ok(doc)
    }

    pub fn build(&self, name: &str) -> Result<Crystal> {
        Crystal::from_doc(&self.doc(name)?, &PotentialRegistry::default())
    }
}

/// Load `preset:NAME` from the registry, anything else from disk.
pub fn load_crystal(spec: &str) -> Result<Crystal> {
    let doc = match spec.strip_prefix("preset:") {
        Some(name) => PresetRegistry::default().doc(name)?,
        None => CrystalDoc::load(Path::new(spec))?,
    };
    Crystal::from_doc(&doc, &PotentialRegistry::default())
}

/// Default dipole strength of the shipped defects.
pub const DIPOLE_STRENGTH: f64 = 0.1;

fn axis_triplets(d: usize, species: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for a in 0..species as i64 {
        for i in 0..d {
            for s in [1, -1] {
                let mut t = vec![0; d];
                t[i] = s;
                t.push(a);
                t.push(a);
                out.push(t);
            }
        }
    }
    out
}

/// Outward unit-bond dipoles on the listed triplets at the origin.
fn breathing_dipoles(d: usize, cell: &[Vec<f64>], shifts: &[Vec<f64>], triplets: &[Vec<i64>], n: usize) -> DefectDoc {
    let dipoles = triplets
        .iter()
        .map(|t| {
            let (a, b) = (t[d] as usize, t[d + 1] as usize);
            let mut v: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| cell[i][j] * t[j] as f64).sum::<f64>() + shifts[b][i] - shifts[a][i])
                .collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x *= DIPOLE_STRENGTH / len);
            v.resize(n, 0.0);
            DipoleDoc { site: vec![0; d], triplet: t.clone(), g: v }
        })
        .collect();
    DefectDoc { core_radius: 0.0, dipoles }
}

fn square1() -> CrystalDoc {
    let cell = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let shifts = vec![vec![0.0, 0.0]];
    let triplets = axis_triplets(2, 1);
    let defect = breathing_dipoles(2, &cell, &shifts, &triplets, 2);
    CrystalDoc {
        name: None,
        d: 2,
        n: 2,
        cell,
        shifts,
        triplets,
        potential: json!({"kind": "harmonic", "k": 1.0}),
        defect: Some(defect),
    }
}

/// Square springs with a negative stiffness on the `±e2` bonds.
fn square1_soft() -> CrystalDoc {
    let mut doc = square1();
    doc.potential = json!({
        "kind": "harmonic",
        "k": 1.0,
        "allow_negative": true,
        "stiffness": [{"triplet": [0, 1, 0, 0], "k": -0.25}]
    });
    doc.defect = None;
    doc
}

fn hex_geometry() -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<i64>>, Vec<Vec<i64>>) {
    let h = 3f64.sqrt() / 2.0;
    let cell = vec![vec![1.0, 0.5], vec![0.0, h]];
    // F (1/3, 1/3)
    let shifts = vec![vec![0.0, 0.0], vec![0.5, h / 3.0]];
    let nearest: Vec<Vec<i64>> = vec![vec![0, 0, 0, 1], vec![-1, 0, 0, 1], vec![0, -1, 0, 1]];
    let mut triplets = nearest.clone();
    triplets.extend(nearest.iter().map(|t| vec![-t[0], -t[1], 1, 0]));
    for a in 0..2 {
        for r in [[1, 0], [-1, 0], [0, 1], [0, -1], [1, -1], [-1, 1]] {
            triplets.push(vec![r[0], r[1], a, a]);
        }
    }
    let mut dipole_bonds = nearest.clone();
    dipole_bonds.extend(nearest.iter().map(|t| vec![-t[0], -t[1], 1, 0]));
    (cell, shifts, triplets, dipole_bonds)
}

/// Graphene-like two-lattice with an out-of-plane displacement component.
fn hex2d() -> CrystalDoc {
    let (cell, shifts, triplets, bonds) = hex_geometry();
    let defect = breathing_dipoles(2, &cell, &shifts, &bonds, 3);
    CrystalDoc {
        name: None,
        d: 2,
        n: 3,
        cell,
        shifts,
        triplets,
        potential: json!({
            "kind": "morse",
            "cutoff": 1.2,
            "pairs": [
                {"species": [0, 1], "depth": 1.0, "width": 3.0, "r0": 0.55},
                {"species": [0, 0], "depth": 0.2, "width": 2.0, "r0": 0.95},
                {"species": [1, 1], "depth": 0.2, "width": 2.0, "r0": 0.95}
            ]
        }),
        defect: Some(defect),
    }
}

/// The hexagonal two-lattice with linear springs.
fn hex2d_harmonic() -> CrystalDoc {
    let mut doc = hex2d();
    doc.n = 2;
    let (cell, shifts, _, bonds) = hex_geometry();
    doc.defect = Some(breathing_dipoles(2, &cell, &shifts, &bonds, 2));
    doc.potential = json!({"kind": "harmonic", "k": 1.0});
    doc
}

/// Diamond-cubic two-lattice on the FCC cell.
fn diamond3d() -> CrystalDoc {
    let cell = vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]];
    let shifts = vec![vec![0.0; 3], vec![0.25, 0.25, 0.25]];
    let nearest: Vec<Vec<i64>> =
        vec![vec![0, 0, 0, 0, 1], vec![-1, 0, 0, 0, 1], vec![0, -1, 0, 0, 1], vec![0, 0, -1, 0, 1]];
    let mut triplets = nearest.clone();
    triplets.extend(nearest.iter().map(|t| vec![-t[0], -t[1], -t[2], 1, 0]));
    let mut bonds = triplets.clone();
    bonds.truncate(8);
    for a in 0..2 {
        for i in 0..3 {
            let mut e = vec![0i64; 3];
            e[i] = 1;
            for s in [1, -1] {
                let mut t: Vec<i64> = e.iter().map(|x| s * x).collect();
                t.extend([a, a]);
                triplets.push(t);
            }
            for j in (i + 1)..3 {
                let mut v = vec![0i64; 3];
                v[i] = 1;
                v[j] = -1;
                for s in [1, -1] {
                    let mut t: Vec<i64> = v.iter().map(|x| s * x).collect();
                    t.extend([a, a]);
                    triplets.push(t);
                }
            }
        }
    }
    let defect = breathing_dipoles(3, &cell, &shifts, &bonds, 3);
    CrystalDoc {
        name: None,
        d: 3,
        n: 3,
        cell,
        shifts,
        triplets,
        potential: json!({
            "kind": "morse",
            "cutoff": 1.3,
            "pairs": [
                {"species": [0, 1], "depth": 1.0, "width": 3.0, "r0": 0.66},
                {"species": [0, 0], "depth": 0.3, "width": 2.0, "r0": 1.08},
                {"species": [1, 1], "depth": 0.3, "width": 2.0, "r0": 1.08}
            ]
        }),
        defect: Some(defect),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_and_is_reversal_closed() {
        let reg = PresetRegistry::default();
        for name in reg.names() {
            let c = reg.build(name).unwrap();
            for t in c.range.triplets() {
                assert!(c.range.position(&t.reversed()).is_some(), "{name}: {t}");
            }
            assert!(c.calibration_shift < 1e-10, "{name} moved by {}", c.calibration_shift);
        }
    }

    #[test]
    fn documents_round_trip_through_json() {
        let doc = PresetRegistry::default().doc("hex2d").unwrap();
        let back = CrystalDoc::from_json(&doc.to_json()).unwrap();
        assert_eq!(back.triplets, doc.triplets);
        assert_eq!(back.potential, doc.potential);
    }

    #[test]
    fn swapping_species_labels_leaves_the_spectrum_alone() {
        let c = PresetRegistry::default().build("hex2d").unwrap();
        let swapped = Crystal::from_doc(&c.relabeled_doc().unwrap(), &PotentialRegistry::default()).unwrap();
        let a = c.stability(8).unwrap();
        let b = swapped.stability(8).unwrap();
        assert!((a.gamma_acoustic_low - b.gamma_acoustic_low).abs() < 1e-9);
        assert!((a.gamma_optical.unwrap() - b.gamma_optical.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn unknown_preset_is_reported() {
        assert!(matches!(load_crystal("preset:nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn soft_preset_is_unstable() {
        let c = PresetRegistry::default().build("square1-soft").unwrap();
        let cert = c.stability(16).unwrap();
        assert!(!cert.pass);
        assert!(cert.worst_mode.unwrap().eigenvalue < 0.0);
    }
}
