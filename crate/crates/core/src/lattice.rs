//! Multilattice geometry, interaction ranges and finite lattice windows.
//!
//! Lattice points are addressed by integer coordinates `z`; the physical site
//! is `F z`. Species `α` of the cell at `z` sits at `F z + p_α`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::energy::DisplacementField;
use crate::error::{Error, Result};

/// Integer lattice coordinates. Unused trailing entries are zero when `d = 2`.
pub type Coord = [i64; 3];

pub fn coord_add(a: Coord, b: Coord) -> Coord {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn coord_neg(a: Coord) -> Coord {
    [-a[0], -a[1], -a[2]]
}

/// A union of `S` shifted copies of the Bravais lattice `F Z^d`, normalised
/// so that `det F = 1`.
#[derive(Clone, Debug)]
pub struct Multilattice {
    d: usize,
    n: usize,
    cell: DMatrix<f64>,
    cell_inv: DMatrix<f64>,
    dual: DMatrix<f64>,
    shifts: Vec<Vec<f64>>,
    scale: f64,
}

impl Multilattice {
    /// `cell_rows` holds `F` row by row; its columns are the lattice vectors.
    pub fn new(cell_rows: &[Vec<f64>], shifts: &[Vec<f64>], n: usize) -> Result<Self> {
        let d = cell_rows.len();
        if !(d == 2 || d == 3) || !(n == d || (d == 2 && n == 3)) {
            return Err(Error::InvalidDimensions { d, n });
        }
        if cell_rows.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid(format!("cell matrix must be {d}x{d}")));
        }
        if shifts.is_empty() {
            return Err(Error::Invalid("at least one species shift is required".into()));
        }
        if shifts.iter().any(|p| p.len() != d) {
            return Err(Error::Invalid(format!("shifts must have {d} components")));
        }
        if shifts[0].iter().any(|&x| x != 0.0) {
            return Err(Error::NonzeroOriginShift(shifts[0].clone()));
        }
        let raw = DMatrix::from_fn(d, d, |i, j| cell_rows[i][j]);
        let det = raw.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularCell(det));
        }
        // det F = 1 up to orientation: a negative determinant stays negative.
        let scale = det.abs().powf(1.0 / d as f64);
        let cell = &raw / scale;
        let cell_inv = cell.clone().try_inverse().ok_or(Error::SingularCell(det))?;
        let dual = cell_inv.transpose();
        let shifts = shifts.iter().map(|p| p.iter().map(|x| x / scale).collect()).collect();
        Ok(Multilattice { d, n, cell, cell_inv, dual, shifts, scale })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Displacement dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn species(&self) -> usize {
        self.shifts.len()
    }

    pub fn cell(&self) -> &DMatrix<f64> {
        &self.cell
    }

    pub fn cell_inverse(&self) -> &DMatrix<f64> {
        &self.cell_inv
    }

    /// `B = F^{-T}`.
    pub fn dual(&self) -> &DMatrix<f64> {
        &self.dual
    }

    /// Factor the input cell was divided by.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self, alpha: usize) -> &[f64] {
        &self.shifts[alpha]
    }

    pub fn shifts(&self) -> &[Vec<f64>] {
        &self.shifts
    }

    /// Physical position `F z`.
    pub fn position(&self, z: Coord) -> Vec<f64> {
        (0..self.d).map(|i| (0..self.d).map(|j| self.cell[(i, j)] * z[j] as f64).sum()).collect()
    }

    pub fn radius(&self, z: Coord) -> f64 {
        self.position(z).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Lift a `d`-vector into `R^n` by zero padding.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        out[..self.d].copy_from_slice(&x[..self.d]);
        out
    }

    /// Reference bond `F ρ + p_β - p_α`, embedded in `R^n`.
    pub fn reference_bond(&self, t: &BondTriplet) -> Vec<f64> {
        let r = self.position(t.rho);
        let x: Vec<f64> = (0..self.d).map(|i| r[i] + self.shifts[t.beta][i] - self.shifts[t.alpha][i]).collect();
        self.embed(&x)
    }

    /// Copy with species shifts replaced (already in normalised units).
    pub fn with_shifts(&self, shifts: Vec<Vec<f64>>) -> Self {
        let mut out = self.clone();
        out.shifts = shifts;
        out
    }
}

/// Finite-difference stencil entry `D_(ρ α β) u(ξ) = u_β(ξ + ρ) - u_α(ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BondTriplet {
    pub rho: Coord,
    pub alpha: usize,
    pub beta: usize,
}

impl BondTriplet {
    pub fn new(rho: Coord, alpha: usize, beta: usize) -> Self {
        BondTriplet { rho, alpha, beta }
    }

    pub fn reversed(&self) -> Self {
        BondTriplet { rho: coord_neg(self.rho), alpha: self.beta, beta: self.alpha }
    }

    pub fn is_onsite(&self) -> bool {
        self.rho == [0, 0, 0] && self.alpha == self.beta
    }

    /// Parse `[rho_1, .., rho_d, alpha, beta]`.
    pub fn from_slice(d: usize, v: &[i64]) -> Result<Self> {
        if v.len() != d + 2 {
            return Err(Error::Invalid(format!("triplet {v:?} must have {} entries", d + 2)));
        }
        if v[d] < 0 || v[d + 1] < 0 {
            return Err(Error::Invalid(format!("negative species index in {v:?}")));
        }
        let mut rho = [0; 3];
        rho[..d].copy_from_slice(&v[..d]);
        Ok(BondTriplet { rho, alpha: v[d] as usize, beta: v[d + 1] as usize })
    }

    pub fn to_vec(&self, d: usize) -> Vec<i64> {
        let mut v = self.rho[..d].to_vec();
        v.push(self.alpha as i64);
        v.push(self.beta as i64);
        v
    }
}

impl fmt::Display for BondTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?};{},{})", self.rho, self.alpha, self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Addition {
    /// Partner `(-ρ, β, α)` of a listed triplet.
    Reversal,
    /// On-cell coupling `(0, α, β)` between distinct species.
    CrossSpecies,
    /// Edge of the canonical simplicial mesh missing from `R_1`.
    MeshEdge,
}

/// Validated interaction range: the stencil of every energy and matrix.
#[derive(Clone, Debug)]
pub struct InteractionRange {
    d: usize,
    species: usize,
    triplets: Vec<BondTriplet>,
    r1: Vec<Coord>,
    rho_index: Vec<usize>,
    additions: Vec<(BondTriplet, Addition)>,
}

impl InteractionRange {
    /// Enlarge `triplets` minimally so that same-species bonds span, every
    /// species pair is coupled on-cell, the range is reversal closed, and
    /// `R_1` contains every edge of the Kuhn triangulation.
    pub fn validate(lattice: &Multilattice, triplets: &[BondTriplet]) -> Result<Self> {
        let d = lattice.d();
        let s = lattice.species();
        if triplets.is_empty() {
            return Err(Error::Invalid("interaction range is empty".into()));
        }
        let mut set = BTreeSet::new();
        for t in triplets {
            if t.alpha >= s || t.beta >= s {
                return Err(Error::Invalid(format!("triplet {t} references a missing species")));
            }
            if t.rho[d..].iter().any(|&x| x != 0) {
                return Err(Error::Invalid(format!("triplet {t} has too many components")));
            }
            if t.is_onsite() {
                return Err(Error::Invalid(format!("triplet {t} is an on-site self bond")));
            }
            set.insert(*t);
        }
        let mut additions = Vec::new();

        for t in set.clone() {
            let r = t.reversed();
            if set.insert(r) {
                additions.push((r, Addition::Reversal));
            }
        }
        for a in 0..s {
            for b in 0..s {
                if a != b {
                    let t = BondTriplet::new([0; 3], a, b);
                    if set.insert(t) {
                        additions.push((t, Addition::CrossSpecies));
                    }
                }
            }
        }
        for a in 0..s {
            let rows: Vec<f64> = set
                .iter()
                .filter(|t| t.alpha == a && t.beta == a)
                .flat_map(|t| (0..d).map(move |i| t.rho[i] as f64))
                .collect();
            let m = rows.len() / d;
            if m == 0 || DMatrix::from_row_slice(m, d, &rows).rank(1e-9) < d {
                return Err(Error::RangeSpan { species: a });
            }
        }
        let present: BTreeSet<Coord> = set.iter().map(|t| t.rho).collect();
        for e in kuhn_edges(d) {
            if !present.contains(&e) {
                for t in [BondTriplet::new(e, 0, 0), BondTriplet::new(coord_neg(e), 0, 0)] {
                    if set.insert(t) {
                        additions.push((t, Addition::MeshEdge));
                    }
                }
            }
        }

        let triplets: Vec<BondTriplet> = set.into_iter().collect();
        let r1: Vec<Coord> = triplets.iter().map(|t| t.rho).collect::<BTreeSet<_>>().into_iter().collect();
        let rho_index = triplets.iter().map(|t| r1.binary_search(&t.rho).expect("rho present")).collect();
        Ok(InteractionRange { d, species: s, triplets, r1, rho_index, additions })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn triplets(&self) -> &[BondTriplet] {
        &self.triplets
    }

    pub fn triplet(&self, i: usize) -> &BondTriplet {
        &self.triplets[i]
    }

    pub fn position(&self, t: &BondTriplet) -> Option<usize> {
        self.triplets.binary_search(t).ok()
    }

    /// Distinct lattice vectors `ρ` of the range (sorted).
    pub fn r1(&self) -> &[Coord] {
        &self.r1
    }

    /// Index into [`r1`](Self::r1) of the `ρ` of triplet `i`.
    pub fn rho_index(&self, i: usize) -> usize {
        self.rho_index[i]
    }

    pub fn additions(&self) -> &[(BondTriplet, Addition)] {
        &self.additions
    }

    pub fn is_mesh_addition(&self, t: &BondTriplet) -> bool {
        self.additions.iter().any(|(a, why)| a == t && *why == Addition::MeshEdge)
    }
}

/// Edge vectors (up to sign) of the Kuhn triangulation of the unit cube:
/// every nonempty sum of distinct axis vectors.
pub fn kuhn_edges(d: usize) -> Vec<Coord> {
    (1u32..(1 << d))
        .map(|mask| {
            let mut e = [0; 3];
            for (i, ei) in e.iter_mut().enumerate().take(d) {
                if mask & (1 << i) != 0 {
                    *ei = 1;
                }
            }
            e
        })
        .collect()
}

/// Kuhn simplices of the unit cube, as vertex chains `0 = v_0 < .. < v_d`.
pub fn kuhn_simplices(d: usize) -> Vec<Vec<Coord>> {
    let perms: Vec<Vec<usize>> = match d {
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    };
    perms
        .into_iter()
        .map(|p| {
            let mut v = [0; 3];
            let mut chain = vec![v];
            for axis in p {
                v[axis] += 1;
                chain.push(v);
            }
            chain
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Topology {
    /// Sites with `|F z| <= radius`, plus a halo one stencil wide.
    Ball { radius: f64 },
    /// The periodic supercell `Z^d / N Z^d`, sites in row-major order.
    Periodic { size: usize },
}

/// Finite set of lattice sites with a precomputed neighbour table over `R_1`.
#[derive(Clone, Debug)]
pub struct LatticeWindow {
    d: usize,
    topology: Topology,
    sites: Vec<Coord>,
    radii: Vec<f64>,
    index: HashMap<Coord, usize>,
    interior: usize,
    r1: Vec<Coord>,
    neighbors: Vec<Option<usize>>,
}

impl LatticeWindow {
    pub fn ball(lattice: &Multilattice, range: &InteractionRange, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Invalid(format!("window radius must be positive, got {radius}")));
        }
        let d = lattice.d();
        let inv = lattice.cell_inverse();
        let bounds: Vec<i64> = (0..d)
            .map(|i| {
                let row: f64 = (0..d).map(|j| inv[(i, j)].powi(2)).sum::<f64>().sqrt();
                (row * radius).ceil() as i64 + 1
            })
            .collect();
        let mut interior = Vec::new();
        let mut z = [0i64; 3];
        let b2 = if d == 3 { bounds[2] } else { 0 };
        for z0 in -bounds[0]..=bounds[0] {
            for z1 in -bounds[1]..=bounds[1] {
                for z2 in -b2..=b2 {
                    z[0] = z0;
                    z[1] = z1;
                    z[2] = z2;
                    if lattice.radius(z) <= radius + 1e-12 {
                        interior.push(z);
                    }
                }
            }
        }
        let inner: BTreeSet<Coord> = interior.iter().copied().collect();
        let mut halo = BTreeSet::new();
        for &z in &interior {
            for &rho in range.r1() {
                let y = coord_add(z, rho);
                if !inner.contains(&y) {
                    halo.insert(y);
                }
            }
        }
        let n_interior = interior.len();
        let sites: Vec<Coord> = interior.into_iter().chain(halo).collect();
        let radii = sites.iter().map(|&z| lattice.radius(z)).collect();
        let index: HashMap<Coord, usize> = sites.iter().enumerate().map(|(i, &z)| (z, i)).collect();
        let r1 = range.r1().to_vec();
        let neighbors = sites
            .iter()
            .flat_map(|&z| r1.iter().map(|&rho| index.get(&coord_add(z, rho)).copied()).collect::<Vec<_>>())
            .collect();
        Ok(LatticeWindow {
            d,
            topology: Topology::Ball { radius },
            sites,
            radii,
            index,
            interior: n_interior,
            r1,
            neighbors,
        })
    }

    pub fn periodic(lattice: &Multilattice, range: &InteractionRange, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Invalid("periodic supercell must be nonempty".into()));
        }
        let d = lattice.d();
        let count = size.pow(d as u32);
        let sites: Vec<Coord> = (0..count).map(|i| grid_coord(d, size, i)).collect();
        let radii = sites.iter().map(|&z| minimal_image_radius(lattice, size, z)).collect();
        let index: HashMap<Coord, usize> = sites.iter().enumerate().map(|(i, &z)| (z, i)).collect();
        let r1 = range.r1().to_vec();
        let neighbors = sites
            .iter()
            .flat_map(|&z| r1.iter().map(|&rho| Some(grid_index(d, size, coord_add(z, rho)))).collect::<Vec<_>>())
            .collect();
        Ok(LatticeWindow {
            d,
            topology: Topology::Periodic { size },
            sites,
            radii,
            index,
            interior: count,
            r1,
            neighbors,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Number of interior (free) sites; they come first in site order.
    pub fn interior_len(&self) -> usize {
        self.interior
    }

    pub fn is_interior(&self, site: usize) -> bool {
        site < self.interior
    }

    pub fn sites(&self) -> &[Coord] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Coord {
        self.sites[i]
    }

    /// Distance to the origin (minimal image for periodic windows).
    pub fn radius(&self, i: usize) -> f64 {
        self.radii[i]
    }

    pub fn index_of(&self, z: Coord) -> Option<usize> {
        match self.topology {
            Topology::Periodic { size } => Some(grid_index(self.d, size, z)),
            Topology::Ball { .. } => self.index.get(&z).copied(),
        }
    }

    pub fn r1(&self) -> &[Coord] {
        &self.r1
    }

    /// Neighbour `z + ρ` where `ρ = r1()[rho]`; `None` outside the window.
    #[inline]
    pub fn neighbor(&self, site: usize, rho: usize) -> Option<usize> {
        self.neighbors[site * self.r1.len() + rho]
    }
}

/// Row-major coordinate of grid index `i` in `[0, N)^d`.
pub fn grid_coord(d: usize, size: usize, mut i: usize) -> Coord {
    let mut z = [0i64; 3];
    for axis in (0..d).rev() {
        z[axis] = (i % size) as i64;
        i /= size;
    }
    z
}

pub fn grid_index(d: usize, size: usize, z: Coord) -> usize {
    let n = size as i64;
    (0..d).fold(0usize, |acc, axis| acc * size + z[axis].rem_euclid(n) as usize)
}

/// Representative of `z mod N` with entries in `(-N/2, N/2]`.
pub fn centered(d: usize, size: usize, z: Coord) -> Coord {
    let n = size as i64;
    let mut out = [0; 3];
    for axis in 0..d {
        let mut v = z[axis].rem_euclid(n);
        if v > n / 2 {
            v -= n;
        }
        out[axis] = v;
    }
    out
}

pub fn minimal_image_radius(lattice: &Multilattice, size: usize, z: Coord) -> f64 {
    let d = lattice.d();
    let c = centered(d, size, z);
    let n = size as i64;
    let mut best = f64::INFINITY;
    let span: Vec<i64> = vec![-1, 0, 1];
    let b2 = if d == 3 { span.clone() } else { vec![0] };
    for &a in &span {
        for &b in &span {
            for &e in &b2 {
                let y = [c[0] + a * n, c[1] + b * n, c[2] + e * n];
                best = best.min(lattice.radius(y));
            }
        }
    }
    best
}

/// `u_β(ξ + ρ) - u_α(ξ)` at lattice site `xi`.
pub fn finite_difference(u: &DisplacementField, t: &BondTriplet, xi: Coord) -> Result<Vec<f64>> {
    let w = u.window();
    let a = w.index_of(xi).ok_or_else(|| Error::OutsideWindow(xi.to_vec()))?;
    let target = coord_add(xi, t.rho);
    let b = w.index_of(target).ok_or_else(|| Error::OutsideWindow(target.to_vec()))?;
    Ok((0..u.n()).map(|i| u.value(b, t.beta, i) - u.value(a, t.alpha, i)).collect())
}

/// All finite differences at `xi`, in the range's canonical triplet order.
pub fn stencil_apply(u: &DisplacementField, range: &InteractionRange, xi: Coord) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(range.len() * u.n());
    for t in range.triplets() {
        out.extend(finite_difference(u, t, xi)?);
    }
    Ok(out)
}
