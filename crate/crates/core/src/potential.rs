//! Site potentials on stencil tuples.
//!
//! Every potential is evaluated in energy-difference form: the argument `g`
//! is a flat tuple of `n`-vectors, one per triplet of the range in canonical
//! order (`g[t * n + i]`), and `V(g) = V̂(Dy + g) - V̂(Dy)` where `Dy` holds
//! the reference bonds.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lattice::{BondTriplet, Coord, InteractionRange, Multilattice};

pub trait SitePotential: Send + Sync + fmt::Debug {
    /// Registry name of the model.
    fn kind(&self) -> &str;

    fn range(&self) -> &InteractionRange;

    /// Displacement dimension.
    fn n(&self) -> usize;

    /// Reference bond tuple `Dy`, flat like the argument.
    fn reference_bonds(&self) -> &[f64];

    /// `V̂(Dy)`.
    fn reference_energy(&self) -> f64;

    fn value(&self, g: &[f64]) -> f64;

    fn grad_into(&self, g: &[f64], out: &mut [f64]);

    /// `out = ∇²V(g) w`.
    fn hess_apply(&self, g: &[f64], w: &[f64], out: &mut [f64]);

    /// `out = ∇³V(g)[w, w]`.
    fn third_contract(&self, g: &[f64], w: &[f64], out: &mut [f64]);

    /// True when the Hessian does not depend on the argument.
    fn is_quadratic(&self) -> bool;

    /// Whether triplet `t` carries any interaction at all.
    fn is_active(&self, t: usize) -> bool;

    fn dim(&self) -> usize {
        self.range().len() * self.n()
    }

    fn grad(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(g, &mut out);
        out
    }

    fn hess(&self, g: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut h = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            self.hess_apply(g, &e, &mut col);
            for i in 0..m {
                h[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        h
    }

    fn third(&self, g: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.third_contract(g, w, &mut out);
        out
    }
}

pub type SharedPotential = Arc<dyn SitePotential>;

fn reference_tuple(lattice: &Multilattice, range: &InteractionRange) -> Vec<f64> {
    range.triplets().iter().flat_map(|t| lattice.reference_bond(t)).collect()
}

/// `V(g) = ½ Σ_t k_t |g_t|²`.
#[derive(Clone, Debug)]
pub struct Harmonic {
    range: InteractionRange,
    n: usize,
    stiffness: Vec<f64>,
    reference: Vec<f64>,
}

/// Linear springs on every triplet. `stiffness` is indexed like the range.
pub fn make_harmonic(
    lattice: &Multilattice,
    range: &InteractionRange,
    stiffness: Vec<f64>,
    allow_negative: bool,
) -> Result<Harmonic> {
    if stiffness.len() != range.len() {
        return Err(Error::SizeMismatch { expected: range.len(), got: stiffness.len() });
    }
    for (i, t) in range.triplets().iter().enumerate() {
        let k = stiffness[i];
        if !k.is_finite() {
            return Err(Error::Invalid(format!("stiffness on {t} is not finite")));
        }
        if k < 0.0 && !allow_negative {
            return Err(Error::NegativeStiffness { triplet: t.to_string(), value: k });
        }
        let j = range.position(&t.reversed()).expect("range is reversal closed");
        if stiffness[j] != k {
            return Err(Error::Invalid(format!(
                "stiffness on {t} differs from its reversal ({k} vs {})",
                stiffness[j]
            )));
        }
    }
    Ok(Harmonic { range: range.clone(), n: lattice.n(), stiffness, reference: reference_tuple(lattice, range) })
}

impl Harmonic {
    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }
}

impl SitePotential for Harmonic {
    fn kind(&self) -> &str {
        "harmonic"
    }

    fn range(&self) -> &InteractionRange {
        &self.range
    }

    fn n(&self) -> usize {
        self.n
    }

    fn reference_bonds(&self) -> &[f64] {
        &self.reference
    }

    fn reference_energy(&self) -> f64 {
        0.0
    }

    fn value(&self, g: &[f64]) -> f64 {
        let n = self.n;
        self.stiffness
            .iter()
            .enumerate()
            .map(|(t, k)| 0.5 * k * g[t * n..(t + 1) * n].iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    fn grad_into(&self, g: &[f64], out: &mut [f64]) {
        self.hess_apply(g, g, out);
    }

    fn hess_apply(&self, _g: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (t, k) in self.stiffness.iter().enumerate() {
            for i in t * n..(t + 1) * n {
                out[i] = k * w[i];
            }
        }
    }

    fn third_contract(&self, _g: &[f64], _w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }

    fn is_quadratic(&self) -> bool {
        true
    }

    fn is_active(&self, t: usize) -> bool {
        self.stiffness[t] != 0.0
    }
}

/// Parameters of `φ(r) = D[(1 - e^{-a(r - r0)})² - 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseParams {
    pub depth: f64,
    pub width: f64,
    pub r0: f64,
}

impl MorseParams {
    /// `(φ, φ', φ'', φ''')` at `r`.
    pub fn eval(&self, r: f64) -> [f64; 4] {
        let e = (-self.width * (r - self.r0)).exp();
        let (d, a) = (self.depth, self.width);
        [
            d * ((1.0 - e).powi(2) - 1.0),
            2.0 * d * a * e * (1.0 - e),
            2.0 * d * a * a * e * (2.0 * e - 1.0),
            2.0 * d * a * a * a * e * (1.0 - 4.0 * e),
        ]
    }
}

/// Pair potential `V̂(h) = ½ Σ_t φ_{αβ}(|h_t|)` over the active triplets.
#[derive(Clone, Debug)]
pub struct MorsePair {
    range: InteractionRange,
    n: usize,
    reference: Vec<f64>,
    reference_energy: f64,
    params: Vec<Option<MorseParams>>,
}

/// `pairs` maps unordered species pairs to Morse parameters. A triplet
/// interacts when its species pair has parameters and its reference bond is
/// no longer than `cutoff`.
pub fn make_morse_pair(
    lattice: &Multilattice,
    range: &InteractionRange,
    pairs: &BTreeMap<(usize, usize), MorseParams>,
    cutoff: Option<f64>,
) -> Result<MorsePair> {
    let n = lattice.n();
    let reference = reference_tuple(lattice, range);
    let mut params = Vec::with_capacity(range.len());
    for (i, t) in range.triplets().iter().enumerate() {
        let key = (t.alpha.min(t.beta), t.alpha.max(t.beta));
        let r = norm(&reference[i * n..(i + 1) * n]);
        let p = pairs.get(&key).copied().filter(|_| cutoff.is_none_or(|c| r <= c));
        if p.is_some() && r < 1e-12 {
            return Err(Error::ZeroLengthBond(t.to_string()));
        }
        params.push(p);
    }
    let mut pot = MorsePair { range: range.clone(), n, reference, reference_energy: 0.0, params };
    pot.reference_energy = pot.absolute_value(&vec![0.0; range.len() * n]);
    Ok(pot)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MorsePair {
    pub fn params(&self, t: usize) -> Option<MorseParams> {
        self.params[t]
    }

    fn bond(&self, g: &[f64], t: usize) -> [f64; 3] {
        let n = self.n;
        let mut h = [0.0; 3];
        for i in 0..n {
            h[i] = self.reference[t * n + i] + g[t * n + i];
        }
        h
    }

    fn absolute_value(&self, g: &[f64]) -> f64 {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(t, p)| p.map(|p| 0.5 * p.eval(norm(&self.bond(g, t)[..self.n]))[0]))
            .sum()
    }
}

impl SitePotential for MorsePair {
    fn kind(&self) -> &str {
        "morse"
    }

    fn range(&self) -> &InteractionRange {
        &self.range
    }

    fn n(&self) -> usize {
        self.n
    }

    fn reference_bonds(&self) -> &[f64] {
        &self.reference
    }

    fn reference_energy(&self) -> f64 {
        self.reference_energy
    }

    fn value(&self, g: &[f64]) -> f64 {
        self.absolute_value(g) - self.reference_energy
    }

    fn grad_into(&self, g: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (t, p) in self.params.iter().enumerate() {
            let Some(p) = p else { continue };
            let h = self.bond(g, t);
            let r = norm(&h[..n]);
            let [_, d1, _, _] = p.eval(r);
            for i in 0..n {
                out[t * n + i] = 0.5 * d1 * h[i] / r;
            }
        }
    }

    fn hess_apply(&self, g: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (t, p) in self.params.iter().enumerate() {
            let Some(p) = p else { continue };
            let h = self.bond(g, t);
            let r = norm(&h[..n]);
            let [_, d1, d2, _] = p.eval(r);
            let wt = &w[t * n..(t + 1) * n];
            let s = dot(&h[..n], wt) / r;
            for i in 0..n {
                let hi = h[i] / r;
                out[t * n + i] = 0.5 * (d2 * s * hi + d1 / r * (wt[i] - s * hi));
            }
        }
    }

    fn third_contract(&self, g: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (t, p) in self.params.iter().enumerate() {
            let Some(p) = p else { continue };
            let h = self.bond(g, t);
            let r = norm(&h[..n]);
            let [_, d1, d2, d3] = p.eval(r);
            let wt = &w[t * n..(t + 1) * n];
            let s = dot(&h[..n], wt) / r;
            let ww = dot(wt, wt);
            let c = (d2 - d1 / r) / r;
            for i in 0..n {
                let hi = h[i] / r;
                out[t * n + i] = 0.5 * (d3 * s * s * hi + c * (2.0 * s * (wt[i] - s * hi) + hi * (ww - s * s)));
            }
        }
    }

    fn is_quadratic(&self) -> bool {
        false
    }

    fn is_active(&self, t: usize) -> bool {
        self.params[t].is_some()
    }
}

/// Point defect: per-site dipoles `g_ξ` inside a core ball.
#[derive(Clone, Debug, Default)]
pub struct DefectModel {
    core_radius: f64,
    dipoles: BTreeMap<Coord, Vec<f64>>,
}

impl DefectModel {
    pub fn none() -> Self {
        DefectModel::default()
    }

    /// `dipoles` maps sites to flat tuples of the range's length.
    pub fn new(
        lattice: &Multilattice,
        range: &InteractionRange,
        core_radius: f64,
        dipoles: BTreeMap<Coord, Vec<f64>>,
    ) -> Result<Self> {
        if !(core_radius >= 0.0) {
            return Err(Error::Invalid(format!("core radius must be nonnegative, got {core_radius}")));
        }
        let dim = range.len() * lattice.n();
        for (z, g) in &dipoles {
            if g.len() != dim {
                return Err(Error::SizeMismatch { expected: dim, got: g.len() });
            }
            if lattice.radius(*z) > core_radius + 1e-12 {
                return Err(Error::Invalid(format!("dipole at {z:?} lies outside the core radius {core_radius}")));
            }
        }
        let dipoles = dipoles.into_iter().filter(|(_, g)| g.iter().any(|&x| x != 0.0)).collect();
        Ok(DefectModel { core_radius, dipoles })
    }

    pub fn core_radius(&self) -> f64 {
        self.core_radius
    }

    pub fn dipole(&self, xi: Coord) -> Option<&[f64]> {
        self.dipoles.get(&xi).map(|g| g.as_slice())
    }

    pub fn dipoles(&self) -> impl Iterator<Item = (&Coord, &Vec<f64>)> {
        self.dipoles.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.dipoles.is_empty()
    }

    /// Same sites, every dipole multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DefectModel {
            core_radius: self.core_radius,
            dipoles: self.dipoles.iter().map(|(z, g)| (*z, g.iter().map(|x| x * factor).collect())).collect(),
        }
    }
}

/// `V_ξ = V + g_ξ · (·)` at one site.
#[derive(Debug)]
pub struct DefectSitePotential<'a> {
    base: &'a dyn SitePotential,
    dipole: Option<&'a [f64]>,
}

pub fn defect_site_potential<'a>(
    base: &'a dyn SitePotential,
    defect: &'a DefectModel,
    xi: Coord,
) -> DefectSitePotential<'a> {
    DefectSitePotential { base, dipole: defect.dipole(xi) }
}

impl SitePotential for DefectSitePotential<'_> {
    fn kind(&self) -> &str {
        self.base.kind()
    }

    fn range(&self) -> &InteractionRange {
        self.base.range()
    }

    fn n(&self) -> usize {
        self.base.n()
    }

    fn reference_bonds(&self) -> &[f64] {
        self.base.reference_bonds()
    }

    fn reference_energy(&self) -> f64 {
        self.base.reference_energy()
    }

    fn value(&self, g: &[f64]) -> f64 {
        self.base.value(g) + self.dipole.map_or(0.0, |d| dot(d, g))
    }

    fn grad_into(&self, g: &[f64], out: &mut [f64]) {
        self.base.grad_into(g, out);
        if let Some(d) = self.dipole {
            out.iter_mut().zip(d).for_each(|(o, x)| *o += x);
        }
    }

    fn hess_apply(&self, g: &[f64], w: &[f64], out: &mut [f64]) {
        self.base.hess_apply(g, w, out)
    }

    fn third_contract(&self, g: &[f64], w: &[f64], out: &mut [f64]) {
        self.base.third_contract(g, w, out)
    }

    fn is_quadratic(&self) -> bool {
        self.base.is_quadratic()
    }

    fn is_active(&self, t: usize) -> bool {
        self.base.is_active(t)
    }
}

/// Builds a potential from its JSON parameter block.
pub type PotentialFactory = fn(&Value, &Multilattice, &InteractionRange) -> Result<SharedPotential>;

/// Potential models selectable by the `"kind"` field of a crystal document.
#[derive(Clone)]
pub struct PotentialRegistry {
    factories: BTreeMap<String, PotentialFactory>,
}

impl fmt::Debug for PotentialRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for PotentialRegistry {
    fn default() -> Self {
        let mut r = PotentialRegistry { factories: BTreeMap::new() };
        r.register("harmonic", harmonic_from_json);
        r.register("morse", morse_from_json);
        r
    }
}

impl PotentialRegistry {
    pub fn empty() -> Self {
        PotentialRegistry { factories: BTreeMap::new() }
    }

    pub fn register(&mut self, kind: &str, factory: PotentialFactory) {
        self.factories.insert(kind.to_string(), factory);
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(|s| s.as_str())
    }

    pub fn build(&self, params: &Value, lattice: &Multilattice, range: &InteractionRange) -> Result<SharedPotential> {
        let kind = params
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Invalid("potential block needs a string \"kind\"".into()))?;
        let factory = self.factories.get(kind).ok_or_else(|| Error::UnknownPotential(kind.to_string()))?;
        factory(params, lattice, range)
    }
}

#[derive(Deserialize)]
struct StiffnessEntry {
    triplet: Vec<i64>,
    k: f64,
}

#[derive(Deserialize)]
struct HarmonicDoc {
    #[serde(default = "one")]
    k: f64,
    #[serde(default)]
    stiffness: Vec<StiffnessEntry>,
    #[serde(default)]
    allow_negative: bool,
}

fn one() -> f64 {
    1.0
}

/// Listed triplets get their own stiffness (mirrored onto the reversal);
/// triplets added only to complete the mesh get zero; the rest get `k`.
fn harmonic_from_json(params: &Value, lattice: &Multilattice, range: &InteractionRange) -> Result<SharedPotential> {
    let doc: HarmonicDoc = serde_json::from_value(params.clone())?;
    let mut k: Vec<f64> =
        range.triplets().iter().map(|t| if range.is_mesh_addition(t) { 0.0 } else { doc.k }).collect();
    let mut explicit: BTreeMap<BondTriplet, f64> = BTreeMap::new();
    for e in &doc.stiffness {
        let t = BondTriplet::from_slice(lattice.d(), &e.triplet)?;
        explicit.insert(t, e.k);
    }
    for (t, &v) in &explicit {
        if let Some(&w) = explicit.get(&t.reversed()) {
            if w != v {
                return Err(Error::Invalid(format!("stiffness on {t} differs from its reversal")));
            }
        }
        for u in [*t, t.reversed()] {
            let i =
                range.position(&u).ok_or_else(|| Error::Invalid(format!("stiffness given for {u}, not in range")))?;
            k[i] = v;
        }
    }
    Ok(Arc::new(make_harmonic(lattice, range, k, doc.allow_negative)?))
}

#[derive(Deserialize)]
struct MorseEntry {
    species: [usize; 2],
    depth: f64,
    width: f64,
    r0: f64,
}

#[derive(Deserialize)]
struct MorseDoc {
    pairs: Vec<MorseEntry>,
    #[serde(default)]
    cutoff: Option<f64>,
}

fn morse_from_json(params: &Value, lattice: &Multilattice, range: &InteractionRange) -> Result<SharedPotential> {
    let doc: MorseDoc = serde_json::from_value(params.clone())?;
    let mut pairs = BTreeMap::new();
    for e in doc.pairs {
        let [a, b] = e.species;
        if a >= lattice.species() || b >= lattice.species() {
            return Err(Error::Invalid(format!("Morse pair ({a}, {b}) names a missing species")));
        }
        if !(e.depth > 0.0 && e.width > 0.0 && e.r0 > 0.0) {
            return Err(Error::Invalid(format!("Morse parameters for ({a}, {b}) must be positive")));
        }
        pairs.insert((a.min(b), a.max(b)), MorseParams { depth: e.depth, width: e.width, r0: e.r0 });
    }
    Ok(Arc::new(make_morse_pair(lattice, range, &pairs, doc.cutoff)?))
}
