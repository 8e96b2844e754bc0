//! Semidiscrete Fourier transforms, the dynamical matrix and its block
//! inverses, phonon branches and the stability certificate.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::energy::{hessian_apply, DisplacementField};
use crate::error::{Error, Result};
use crate::lattice::{centered, grid_coord, Coord, Multilattice};
use crate::potential::SitePotential;

pub type CMatrix = DMatrix<Complex64>;

/// Nodes `k = B m / N`, `m ∈ (-N/2, N/2]^d`, stored in FFT (row-major,
/// `m mod N`) order.
#[derive(Clone, Debug)]
pub struct BrillouinGrid {
    d: usize,
    size: usize,
    dual: DMatrix<f64>,
}

impl BrillouinGrid {
    pub fn new(lattice: &Multilattice, size: usize) -> Result<Self> {
        if size == 0 || size % 2 != 0 {
            return Err(Error::OddGrid(size));
        }
        Ok(BrillouinGrid { d: lattice.d(), size, dual: lattice.dual().clone() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer label `m` of node `idx`, centred in `(-N/2, N/2]`.
    pub fn label(&self, idx: usize) -> Coord {
        centered(self.d, self.size, grid_coord(self.d, self.size, idx))
    }

    pub fn k(&self, idx: usize) -> Vec<f64> {
        let m = self.label(idx);
        (0..self.d).map(|i| (0..self.d).map(|j| self.dual[(i, j)] * m[j] as f64 / self.size as f64).sum()).collect()
    }
}

/// Shortest representative of node `idx` modulo the dual lattice.
pub fn minimal_image_k(lattice: &Multilattice, size: usize, idx: usize) -> Vec<f64> {
    let d = lattice.d();
    let m = centered(d, size, grid_coord(d, size, idx));
    let b = lattice.dual();
    let span: &[i64] = &[-1, 0, 1];
    let third: &[i64] = if d == 3 { span } else { &[0] };
    let mut best = vec![0.0; d];
    let mut best2 = f64::INFINITY;
    for &c0 in span {
        for &c1 in span {
            for &c2 in third {
                let c = [c0, c1, c2];
                let k: Vec<f64> = (0..d)
                    .map(|i| (0..d).map(|j| b[(i, j)] * (m[j] as f64 / size as f64 + c[j] as f64)).sum())
                    .collect();
                let k2: f64 = k.iter().map(|x| x * x).sum();
                if k2 < best2 - 1e-15 {
                    best2 = k2;
                    best = k;
                }
            }
        }
    }
    best
}

fn fft_nd(data: &mut [Complex64], d: usize, size: usize, inverse: bool) -> Result<()> {
    let expected = size.pow(d as u32);
    if data.len() != expected {
        return Err(Error::SizeMismatch { expected, got: data.len() });
    }
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(size) } else { planner.plan_fft_forward(size) };
    for axis in 0..d {
        let stride = size.pow((d - 1 - axis) as u32);
        let outer = expected / (stride * size);
        let lines: Vec<Vec<Complex64>> = (0..outer * stride)
            .into_par_iter()
            .map(|l| {
                let (o, i) = (l / stride, l % stride);
                let start = o * stride * size + i;
                let mut line: Vec<Complex64> = (0..size).map(|j| data[start + j * stride]).collect();
                fft.process(&mut line);
                line
            })
            .collect();
        for (l, line) in lines.into_iter().enumerate() {
            let (o, i) = (l / stride, l % stride);
            let start = o * stride * size + i;
            for (j, v) in line.into_iter().enumerate() {
                data[start + j * stride] = v;
            }
        }
    }
    Ok(())
}

/// `û(k) = Σ_ξ e^{-2πi ξ·k} u(ξ)` on the `N`-grid.
pub fn sdft(values: &[Complex64], d: usize, size: usize) -> Result<Vec<Complex64>> {
    let mut out = values.to_vec();
    fft_nd(&mut out, d, size, false)?;
    Ok(out)
}

/// Inverse of [`sdft`]: `u(ξ) = N^{-d} Σ_k e^{2πi ξ·k} û(k)`.
pub fn isdft(values: &[Complex64], d: usize, size: usize) -> Result<Vec<Complex64>> {
    let mut out = values.to_vec();
    fft_nd(&mut out, d, size, true)?;
    let scale = 1.0 / out.len() as f64;
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(out)
}

/// Hermitian `Sn × Sn` matrix in the `(U, p_1, .., p_{S-1})` basis.
#[derive(Clone, Debug)]
pub struct BlockHermitian {
    pub k: Vec<f64>,
    n: usize,
    full: CMatrix,
}

impl BlockHermitian {
    pub fn new(k: Vec<f64>, n: usize, full: CMatrix) -> Self {
        BlockHermitian { k, n, full }
    }

    pub fn full(&self) -> &CMatrix {
        &self.full
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Size of the shift sector, `(S - 1) n`.
    pub fn shift_dim(&self) -> usize {
        self.full.nrows() - self.n
    }

    pub fn h00(&self) -> CMatrix {
        self.full.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn h0p(&self) -> CMatrix {
        self.full.view((0, self.n), (self.n, self.shift_dim())).into_owned()
    }

    pub fn hp0(&self) -> CMatrix {
        self.full.view((self.n, 0), (self.shift_dim(), self.n)).into_owned()
    }

    pub fn hpp(&self) -> CMatrix {
        let m = self.shift_dim();
        self.full.view((self.n, self.n), (m, m)).into_owned()
    }

    pub fn hermitian_defect(&self) -> f64 {
        (&self.full - self.full.adjoint()).norm()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.full)
    }
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Real force constants of the homogeneous lattice grouped by lattice
/// vector: `H_species(k) = Σ_δ e^{2πi k·Fδ} Φ(δ)`.
#[derive(Clone, Debug)]
pub struct DynamicalMatrix {
    d: usize,
    n: usize,
    species: usize,
    terms: Vec<(Vec<f64>, DMatrix<f64>)>,
}

impl DynamicalMatrix {
    pub fn new(lattice: &Multilattice, pot: &dyn SitePotential) -> Self {
        let range = pot.range();
        let n = pot.n();
        let s = range.species();
        let sn = s * n;
        let k = pot.hess(&vec![0.0; pot.dim()]);
        let mut terms: std::collections::BTreeMap<Coord, DMatrix<f64>> = Default::default();
        let mut add = |delta: Coord, row: usize, col: usize, sign: f64, blk: &DMatrix<f64>| {
            let m = terms.entry(delta).or_insert_with(|| DMatrix::zeros(sn, sn));
            for i in 0..n {
                for j in 0..n {
                    m[(row * n + i, col * n + j)] += sign * blk[(i, j)];
                }
            }
        };
        let ts = range.triplets();
        for (si, s_t) in ts.iter().enumerate() {
            for (ti, t_t) in ts.iter().enumerate() {
                let blk = k.view((si * n, ti * n), (n, n)).into_owned();
                if blk.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let diff = [t_t.rho[0] - s_t.rho[0], t_t.rho[1] - s_t.rho[1], t_t.rho[2] - s_t.rho[2]];
                add(diff, s_t.beta, t_t.beta, 1.0, &blk);
                add(crate::lattice::coord_neg(s_t.rho), s_t.beta, t_t.alpha, -1.0, &blk);
                add(t_t.rho, s_t.alpha, t_t.beta, -1.0, &blk);
                add([0; 3], s_t.alpha, t_t.alpha, 1.0, &blk);
            }
        }
        let terms = terms
            .into_iter()
            .filter(|(_, m)| m.iter().any(|&x| x != 0.0))
            .map(|(delta, m)| (lattice.position(delta), m))
            .collect();
        DynamicalMatrix { d: lattice.d(), n, species: s, terms }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `Φ(0)`: the diagonal block every site sees in the real-space Hessian.
    pub fn onsite_block(&self) -> DMatrix<f64> {
        let sn = self.species * self.n;
        self.terms
            .iter()
            .find(|(x, _)| x.iter().all(|&c| c == 0.0))
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| DMatrix::zeros(sn, sn))
    }

    /// Dynamical matrix in the species basis `(u_0, .., u_{S-1})`.
    pub fn species_basis(&self, k: &[f64]) -> CMatrix {
        let sn = self.species * self.n;
        let mut h = CMatrix::zeros(sn, sn);
        for (x, m) in &self.terms {
            let phase: f64 = 2.0 * PI * k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let e = Complex64::from_polar(1.0, phase);
            for j in 0..sn {
                for i in 0..sn {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        h[(i, j)] += e * v;
                    }
                }
            }
        }
        h
    }

    /// `H(k)` in the `(U, p)` basis.
    pub fn at(&self, k: &[f64]) -> BlockHermitian {
        let hs = self.species_basis(k);
        let sn = self.species * self.n;
        let n = self.n;
        // u_0 = U, u_α = U + p_α
        let t = DMatrix::from_fn(sn, sn, |i, j| {
            let (a, ii) = (i / n, i % n);
            let (b, jj) = (j / n, j % n);
            if ii == jj && (b == 0 || a == b) {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        BlockHermitian::new(k.to_vec(), n, t.adjoint() * hs * t)
    }
}

/// `H(k)` for a potential; builds the force constants on the fly.
pub fn assemble_h(k: &[f64], lattice: &Multilattice, pot: &dyn SitePotential) -> BlockHermitian {
    DynamicalMatrix::new(lattice, pot).at(k)
}

/// Both block forms of `H(k)^{-1}`.
#[derive(Clone, Debug)]
pub struct SchurInverse {
    /// `Q = H00 - H0p Hpp⁻¹ Hp0`.
    pub q: CMatrix,
    /// `P = Hpp - Hp0 H00⁻¹ H0p` (empty when `S = 1`).
    pub p: CMatrix,
    pub inv00: CMatrix,
    pub inv0p: CMatrix,
    pub invp0: CMatrix,
    pub invpp: CMatrix,
    /// The same inverse assembled from `P`.
    pub alt: CMatrix,
    /// `Hpp⁻¹`.
    pub hpp_inv: CMatrix,
}

impl SchurInverse {
    pub fn full(&self) -> CMatrix {
        let n = self.inv00.nrows();
        let m = self.invpp.nrows();
        let mut out = CMatrix::zeros(n + m, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.inv00);
        out.view_mut((0, n), (n, m)).copy_from(&self.inv0p);
        out.view_mut((n, 0), (m, n)).copy_from(&self.invp0);
        out.view_mut((n, n), (m, m)).copy_from(&self.invpp);
        out
    }
}

fn inverse(m: CMatrix, what: &'static str) -> Result<CMatrix> {
    if m.nrows() == 0 {
        return Ok(m);
    }
    m.try_inverse().ok_or(Error::NotInvertible(what))
}

pub fn schur_inverse(h: &BlockHermitian) -> Result<SchurInverse> {
    if h.k.iter().all(|x| x.abs() < 1e-14) {
        return Err(Error::SingularPoint);
    }
    let (h00, h0p, hp0, hpp) = (h.h00(), h.h0p(), h.hp0(), h.hpp());
    let hpp_inv = inverse(hpp.clone(), "Hpp")?;
    let q = &h00 - &h0p * &hpp_inv * &hp0;
    let q_inv = inverse(q.clone(), "Q")?;
    let inv0p = -(&q_inv * &h0p * &hpp_inv);
    let invp0 = -(&hpp_inv * &hp0 * &q_inv);
    let invpp = &hpp_inv * &hp0 * &q_inv * &h0p * &hpp_inv + &hpp_inv;

    let h00_inv = inverse(h00, "H00")?;
    let p = &hpp - &hp0 * &h00_inv * &h0p;
    let p_inv = inverse(p.clone(), "P")?;
    let n = q.nrows();
    let m = p.nrows();
    let mut alt = CMatrix::zeros(n + m, n + m);
    alt.view_mut((0, 0), (n, n)).copy_from(&(&h00_inv + &h00_inv * &h0p * &p_inv * &hp0 * &h00_inv));
    alt.view_mut((0, n), (n, m)).copy_from(&(-(&h00_inv * &h0p * &p_inv)));
    alt.view_mut((n, 0), (m, n)).copy_from(&(-(&p_inv * &hp0 * &h00_inv)));
    alt.view_mut((n, n), (m, m)).copy_from(&p_inv);

    Ok(SchurInverse { q, p, inv00: q_inv, inv0p, invp0, invpp, alt, hpp_inv })
}

/// Sorted eigenvalues per grid node; the lowest `n` are acoustic.
#[derive(Clone, Debug, Serialize)]
pub struct PhononSpectrum {
    pub grid: usize,
    pub acoustic: usize,
    pub k: Vec<Vec<f64>>,
    pub eigenvalues: Vec<Vec<f64>>,
}

pub fn phonons(grid: &BrillouinGrid, dm: &DynamicalMatrix) -> PhononSpectrum {
    let (k, eigenvalues): (Vec<_>, Vec<_>) = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let k = grid.k(idx);
            let ev = dm.at(&k).eigenvalues();
            (k, ev)
        })
        .unzip();
    PhononSpectrum { grid: grid.size(), acoustic: dm.n(), k, eigenvalues }
}

#[derive(Clone, Debug, Serialize)]
pub struct NegativeMode {
    pub k: Vec<f64>,
    pub branch: usize,
    pub eigenvalue: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityCertificate {
    pub grid: usize,
    /// `min λ_a / |k|²` over the nonzero nodes.
    pub gamma_acoustic_low: f64,
    /// `max λ_a / |k|²` over the nonzero nodes.
    pub gamma_acoustic_high: f64,
    /// `min λ_o`; absent for Bravais lattices.
    pub gamma_optical: Option<f64>,
    pub pass: bool,
    /// Most negative eigenvalue found, when one exists.
    pub worst_mode: Option<NegativeMode>,
}

pub fn stability_certificate(
    lattice: &Multilattice,
    grid: &BrillouinGrid,
    dm: &DynamicalMatrix,
    eps_acoustic: f64,
    eps_optical: f64,
) -> StabilityCertificate {
    let n = dm.n();
    let per_node: Vec<(f64, f64, f64, f64, usize)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let k = grid.k(idx);
            let ev = dm.at(&k).eigenvalues();
            let kmin = minimal_image_k(lattice, grid.size(), idx);
            let k2: f64 = kmin.iter().map(|x| x * x).sum();
            let (lo, hi) = if idx == 0 {
                (f64::INFINITY, f64::NEG_INFINITY)
            } else {
                let a = &ev[..n];
                (a[0] / k2, a[n - 1] / k2)
            };
            let opt = ev.get(n).copied().unwrap_or(f64::INFINITY);
            (lo, hi, opt, ev[0], idx)
        })
        .collect();
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    let mut opt = f64::INFINITY;
    let mut worst: Option<(f64, usize)> = None;
    for &(lo, hi, o, e0, idx) in &per_node {
        low = low.min(lo);
        high = high.max(hi);
        opt = opt.min(o);
        if idx != 0 && worst.is_none_or(|(w, _)| e0 < w) {
            worst = Some((e0, idx));
        }
    }
    let gamma_optical = if dm.species() > 1 { Some(opt) } else { None };
    let pass = low >= eps_acoustic && gamma_optical.is_none_or(|o| o >= eps_optical);
    let worst_mode =
        worst.filter(|(e, _)| *e < 0.0).map(|(e, idx)| NegativeMode { k: grid.k(idx), branch: 0, eigenvalue: e });
    StabilityCertificate {
        grid: grid.size(),
        gamma_acoustic_low: low,
        gamma_acoustic_high: high,
        gamma_optical,
        pass,
        worst_mode,
    }
}

/// Which real-space Green's block a decay prediction refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GreensFamily {
    /// `(Q⁻¹)∨`.
    QInv,
    /// `(Q⁻¹ H0p Hpp⁻¹)∨`.
    Coupling,
    /// `(Hpp⁻¹ Hp0 Q⁻¹ H0p Hpp⁻¹ + Hpp⁻¹)∨`.
    ShiftFamily,
}

/// Predicted decay exponent of `t`-fold differences of a Green's block.
pub fn predict_exponent(block: GreensFamily, t: usize, d: usize) -> Result<i32> {
    let (d, t) = (d as i32, t as i32);
    match block {
        GreensFamily::QInv if t == 0 => {
            Err(Error::Invalid("the acoustic block only decays after at least one difference".into()))
        }
        GreensFamily::QInv => Ok(2 - d - t),
        GreensFamily::Coupling => Ok(1 - d - t),
        GreensFamily::ShiftFamily => Ok(-d - t),
    }
}

/// Fourier-side quadratic form `N^{-d} Σ_k [Ẑ; q̂]^* H(k) [Û; p̂]` of two
/// fields on a periodic window, together with the real-space pairing
/// `⟨δ²E(0) u, v⟩`.
pub fn quadratic_form_check(
    u: &DisplacementField,
    v: &DisplacementField,
    pot: &dyn SitePotential,
    lattice: &Multilattice,
    dm: &DynamicalMatrix,
) -> Result<(f64, f64)> {
    let crate::lattice::Topology::Periodic { size } = u.window().topology() else {
        return Err(Error::Invalid("quadratic form check needs a periodic window".into()));
    };
    let d = lattice.d();
    let zero = u.zeros_like();
    let real = hessian_apply(&zero, u, pot).dot(v);
    let uh = ushift_transform(u, d, size)?;
    let vh = ushift_transform(v, d, size)?;
    let grid = BrillouinGrid::new(lattice, size)?;
    let sn = u.site_len();
    let terms: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let h = dm.at(&grid.k(idx));
            let a = nalgebra::DVector::from_fn(sn, |c, _| uh[c][idx]);
            let b = nalgebra::DVector::from_fn(sn, |c, _| vh[c][idx]);
            (b.adjoint() * h.full() * a)[(0, 0)].re
        })
        .collect();
    let fourier = terms.iter().sum::<f64>() / grid.len() as f64;
    Ok((real, fourier))
}

/// Transforms of `U` and `p_α` channels of a field on a periodic window.
pub fn ushift_transform(u: &DisplacementField, d: usize, size: usize) -> Result<Vec<Vec<Complex64>>> {
    let n = u.n();
    let s = u.species();
    let count = size.pow(d as u32);
    if u.window().len() != count {
        return Err(Error::SizeMismatch { expected: count, got: u.window().len() });
    }
    (0..s * n)
        .into_par_iter()
        .map(|c| {
            let (a, i) = (c / n, c % n);
            let chan: Vec<Complex64> = (0..count)
                .map(|site| {
                    let x = if a == 0 { u.value(site, 0, i) } else { u.value(site, a, i) - u.value(site, 0, i) };
                    Complex64::new(x, 0.0)
                })
                .collect();
            sdft(&chan, d, size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BondTriplet, InteractionRange};
    use crate::potential::make_harmonic;

    fn square() -> (Multilattice, DynamicalMatrix) {
        let l = Multilattice::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0, 0.0]], 2).unwrap();
        let ts: Vec<_> =
            [[1, 0], [-1, 0], [0, 1], [0, -1]].iter().map(|r| BondTriplet::new([r[0], r[1], 0], 0, 0)).collect();
        let r = InteractionRange::validate(&l, &ts).unwrap();
        let k: Vec<f64> = r.triplets().iter().map(|t| if r.is_mesh_addition(t) { 0.0 } else { 1.0 }).collect();
        let pot = make_harmonic(&l, &r, k, false).unwrap();
        let dm = DynamicalMatrix::new(&l, &pot);
        (l, dm)
    }

    #[test]
    fn square_lattice_closed_form() {
        let (_, dm) = square();
        for k in [[0.1, 0.2], [0.5, -0.3], [0.0, 0.0]] {
            let h = dm.at(&k);
            let want = 8.0 * (PI * k[0]).sin().powi(2) + 8.0 * (PI * k[1]).sin().powi(2);
            for i in 0..2 {
                for j in 0..2 {
                    let w = if i == j { want } else { 0.0 };
                    assert!((h.full()[(i, j)] - Complex64::new(w, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transform_round_trip_and_delta() {
        let d = 2;
        let size = 8;
        let mut delta = vec![Complex64::new(0.0, 0.0); 64];
        delta[0] = Complex64::new(1.0, 0.0);
        let hat = sdft(&delta, d, size).unwrap();
        assert!(hat.iter().all(|x| (x - Complex64::new(1.0, 0.0)).norm() < 1e-14));
        let back = isdft(&hat, d, size).unwrap();
        assert!((back[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(matches!(sdft(&delta, d, 7), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn plane_wave_is_a_delta() {
        let (d, size) = (2usize, 8usize);
        let m0 = [3i64, -2];
        let wave: Vec<Complex64> = (0..64)
            .map(|i| {
                let z = grid_coord(d, size, i);
                Complex64::from_polar(1.0, 2.0 * PI * (m0[0] * z[0] + m0[1] * z[1]) as f64 / size as f64)
            })
            .collect();
        let hat = sdft(&wave, d, size).unwrap();
        let peak = crate::lattice::grid_index(d, size, [3, -2, 0]);
        for (i, x) in hat.iter().enumerate() {
            let want = if i == peak { 64.0 } else { 0.0 };
            assert!((x - Complex64::new(want, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_wavevector_is_singular() {
        let (_, dm) = square();
        assert!(matches!(schur_inverse(&dm.at(&[0.0, 0.0])), Err(Error::SingularPoint)));
        let inv = schur_inverse(&dm.at(&[0.1, 0.0])).unwrap();
        assert_eq!(inv.q, dm.at(&[0.1, 0.0]).h00());
    }

    #[test]
    fn exponent_table() {
        assert_eq!(predict_exponent(GreensFamily::QInv, 1, 2).unwrap(), -1);
        assert_eq!(predict_exponent(GreensFamily::Coupling, 0, 2).unwrap(), -1);
        assert_eq!(predict_exponent(GreensFamily::ShiftFamily, 0, 3).unwrap(), -3);
        assert!(predict_exponent(GreensFamily::QInv, 0, 2).is_err());
    }

    #[test]
    fn certificate_without_optical_branches() {
        let (l, dm) = square();
        let g = BrillouinGrid::new(&l, 16).unwrap();
        let c = stability_certificate(&l, &g, &dm, 1e-8, 1e-8);
        assert!(c.pass);
        assert!(c.gamma_optical.is_none());
        // 8 sin²(π x)/x² on |x| ≤ 1/2 lies between 32 and 8π²
        assert!(c.gamma_acoustic_low >= 32.0 - 1e-9);
        assert!(c.gamma_acoustic_high <= 8.0 * PI * PI + 1e-9);
    }
}
