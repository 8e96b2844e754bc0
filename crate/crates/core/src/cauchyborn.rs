//! Cauchy-Born energy densities, shift equilibration, the elasticity tensor
//! and its Fourier symbol, and the atomistic-to-continuum consistency check.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{gather, DisplacementField};
use crate::error::{Error, Result};
use crate::lattice::{LatticeWindow, Multilattice};
use crate::potential::SitePotential;
use crate::spectral::{BlockHermitian, CMatrix};

/// Cauchy-Born state: deformation `G` (`n × d`), shifts `p_1..p_{S-1}`
/// (`p_0 = 0`), the density and its derivative blocks.
///
/// Strain variables are flattened as `G[i][j] -> i d + j`.
#[derive(Clone, Debug)]
pub struct CBState {
    pub g: DMatrix<f64>,
    pub p: Vec<Vec<f64>>,
    pub value: f64,
    pub grad_g: DVector<f64>,
    pub grad_p: DVector<f64>,
    pub hess_gg: DMatrix<f64>,
    pub hess_gp: DMatrix<f64>,
    pub hess_pp: DMatrix<f64>,
}

/// Reference deformation `[I; 0]`.
pub fn reference_deformation(lattice: &Multilattice) -> DMatrix<f64> {
    DMatrix::from_fn(lattice.n(), lattice.d(), |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Reference shifts `p_0..p_{S-1}` embedded in `R^n`.
pub fn reference_shifts(lattice: &Multilattice) -> Vec<Vec<f64>> {
    lattice.shifts().iter().map(|p| lattice.embed(p)).collect()
}

/// Bond tuple `(G F ρ + p_β - p_α)_t` and its Jacobian with respect to the
/// variables `(G, p_1, .., p_{S-1})`.
fn bonds_and_jacobian(
    lattice: &Multilattice,
    pot: &dyn SitePotential,
    g: &DMatrix<f64>,
    p: &[Vec<f64>],
) -> (Vec<f64>, DMatrix<f64>) {
    let n = lattice.n();
    let d = lattice.d();
    let s = lattice.species();
    let range = pot.range();
    let nv = n * d + (s - 1) * n;
    let mut h = vec![0.0; range.len() * n];
    let mut jac = DMatrix::zeros(range.len() * n, nv);
    for (ti, t) in range.triplets().iter().enumerate() {
        let r = lattice.position(t.rho);
        for i in 0..n {
            let row = ti * n + i;
            let mut v = p[t.beta][i] - p[t.alpha][i];
            for j in 0..d {
                v += g[(i, j)] * r[j];
                jac[(row, i * d + j)] = r[j];
            }
            h[row] = v;
            if t.beta > 0 {
                jac[(row, n * d + (t.beta - 1) * n + i)] += 1.0;
            }
            if t.alpha > 0 {
                jac[(row, n * d + (t.alpha - 1) * n + i)] -= 1.0;
            }
        }
    }
    (h, jac)
}

/// `Ŵ(G, p) = V̂((G F ρ + p_β - p_α)_t)` with derivative blocks.
pub fn w_hat(lattice: &Multilattice, pot: &dyn SitePotential, g: &DMatrix<f64>, p: &[Vec<f64>]) -> CBState {
    let n = lattice.n();
    let d = lattice.d();
    let (h, jac) = bonds_and_jacobian(lattice, pot, g, p);
    let arg: Vec<f64> = h.iter().zip(pot.reference_bonds()).map(|(a, b)| a - b).collect();
    let value = pot.value(&arg) + pot.reference_energy();
    let grad = jac.transpose() * DVector::from_vec(pot.grad(&arg));
    let hess = jac.transpose() * pot.hess(&arg) * &jac;
    let ng = n * d;
    let np = hess.nrows() - ng;
    CBState {
        g: g.clone(),
        p: p.to_vec(),
        value,
        grad_g: grad.rows(0, ng).into_owned(),
        grad_p: grad.rows(ng, np).into_owned(),
        hess_gg: hess.view((0, 0), (ng, ng)).into_owned(),
        hess_gp: hess.view((0, ng), (ng, np)).into_owned(),
        hess_pp: hess.view((ng, ng), (np, np)).into_owned(),
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Newton iteration on `∂_p Ŵ(G, ·) = 0` from `p_init`.
pub fn shift_equilibrium(
    lattice: &Multilattice,
    pot: &dyn SitePotential,
    g: &DMatrix<f64>,
    p_init: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = lattice.n();
    let s = lattice.species();
    let mut p = p_init.to_vec();
    if s == 1 {
        return Ok(p);
    }
    let tol = 1e-12;
    for _ in 0..100 {
        let st = w_hat(lattice, pot, g, &p);
        let r = st.grad_p.norm();
        if r <= tol {
            return Ok(p);
        }
        let Some(chol) = st.hess_pp.clone().cholesky() else {
            return Err(Error::IndefiniteShiftHessian(min_eigenvalue(&st.hess_pp)));
        };
        let step = chol.solve(&st.grad_p);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<Vec<f64>> = (0..s)
                .map(|a| {
                    if a == 0 {
                        p[0].clone()
                    } else {
                        (0..n).map(|i| p[a][i] - lambda * step[(a - 1) * n + i]).collect()
                    }
                })
                .collect();
            let rt = w_hat(lattice, pot, g, &trial).grad_p.norm();
            if rt < r || lambda < 1e-4 {
                p = trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    let r = w_hat(lattice, pot, g, &p).grad_p.norm();
    if r <= 1e-10 {
        Ok(p)
    } else {
        Err(Error::NoConvergence(format!("shift equilibration stalled at |∂pW| = {r:e}")))
    }
}

/// `A` as an `nd × nd` matrix indexed `(i d + j, k d + l)`.
#[derive(Clone, Debug, Serialize)]
pub struct ElasticTensor {
    pub n: usize,
    pub d: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl ElasticTensor {
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.matrix[i * self.d + j][k * self.d + l]
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        let m = self.n * self.d;
        DMatrix::from_fn(m, m, |a, b| self.matrix[a][b])
    }

    pub fn major_asymmetry(&self) -> f64 {
        let m = self.as_matrix();
        (&m - m.transpose()).amax()
    }

    /// Acoustic tensor `A:(k ⊗ k)`, `n × n`.
    pub fn acoustic(&self, k: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, l| {
            let mut v = 0.0;
            for j in 0..self.d {
                for m in 0..self.d {
                    v += self.get(i, j, l, m) * k[j] * k[m];
                }
            }
            v
        })
    }

    /// `min_{|a| = |k| = 1} A[a⊗k, a⊗k]`, by a sweep over directions `k`.
    pub fn legendre_hadamard_min(&self) -> f64 {
        sphere_directions(self.d)
            .par_iter()
            .map(|k| min_eigenvalue(&self.acoustic(k)))
            .reduce(|| f64::INFINITY, f64::min)
    }
}

fn sphere_directions(d: usize) -> Vec<Vec<f64>> {
    if d == 2 {
        (0..3600)
            .map(|i| {
                let th = PI * i as f64 / 3600.0;
                vec![th.cos(), th.sin()]
            })
            .collect()
    } else {
        // Fibonacci points on the upper half sphere
        let m = 20000;
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..m)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / m as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                vec![r * th.cos(), r * th.sin(), z]
            })
            .collect()
    }
}

/// `∂²W̄ = ∂²_GG Ŵ - ∂²_Gp Ŵ (∂²_pp Ŵ)⁻¹ ∂²_pG Ŵ` at equilibrated shifts.
pub fn elastic_tensor(
    lattice: &Multilattice,
    pot: &dyn SitePotential,
    g: &DMatrix<f64>,
    p: &[Vec<f64>],
) -> Result<ElasticTensor> {
    let st = w_hat(lattice, pot, g, p);
    let mut a = st.hess_gg.clone();
    if st.hess_pp.nrows() > 0 {
        let chol =
            st.hess_pp.clone().cholesky().ok_or_else(|| Error::IndefiniteShiftHessian(min_eigenvalue(&st.hess_pp)))?;
        a -= &st.hess_gp * chol.solve(&st.hess_gp.transpose());
    }
    let m = a.nrows();
    Ok(ElasticTensor {
        n: lattice.n(),
        d: lattice.d(),
        matrix: (0..m).map(|i| (0..m).map(|j| a[(i, j)]).collect()).collect(),
    })
}

/// `W̄(G) = Ŵ(G, p*(G))`, with `p*` found from `p_init`.
pub fn w_bar(lattice: &Multilattice, pot: &dyn SitePotential, g: &DMatrix<f64>, p_init: &[Vec<f64>]) -> Result<f64> {
    let p = shift_equilibrium(lattice, pot, g, p_init)?;
    Ok(w_hat(lattice, pot, g, &p).value)
}

/// Linearised symbol `J(k) = Σ L⁰_s^* ∇²V(0)_{st} L⁰_t` with
/// `L⁰_t = [2πi (k·Fρ_t) I | E_β - E_α]`, assembled directly from the
/// site Hessian.
#[derive(Clone, Debug)]
pub struct ContinuumSymbol {
    n: usize,
    species: usize,
    bonds: Vec<Vec<f64>>,
    ends: Vec<(usize, usize)>,
    force: DMatrix<f64>,
}

impl ContinuumSymbol {
    pub fn new(lattice: &Multilattice, pot: &dyn SitePotential) -> Self {
        let range = pot.range();
        ContinuumSymbol {
            n: pot.n(),
            species: range.species(),
            bonds: range.triplets().iter().map(|t| lattice.position(t.rho)).collect(),
            ends: range.triplets().iter().map(|t| (t.alpha, t.beta)).collect(),
            force: pot.hess(&vec![0.0; pot.dim()]),
        }
    }

    pub fn at(&self, k: &[f64]) -> BlockHermitian {
        let n = self.n;
        let sn = self.species * n;
        let m = self.bonds.len();
        let mut l = CMatrix::zeros(m * n, sn);
        for t in 0..m {
            let kr: f64 = k.iter().zip(&self.bonds[t]).map(|(a, b)| a * b).sum();
            let phase = Complex64::new(0.0, 2.0 * PI * kr);
            let (a, b) = self.ends[t];
            for i in 0..n {
                l[(t * n + i, i)] = phase;
                if b > 0 {
                    l[(t * n + i, b * n + i)] += Complex64::new(1.0, 0.0);
                }
                if a > 0 {
                    l[(t * n + i, a * n + i)] -= Complex64::new(1.0, 0.0);
                }
            }
        }
        let kc = self.force.map(|x| Complex64::new(x, 0.0));
        BlockHermitian::new(k.to_vec(), n, l.adjoint() * kc * &l)
    }
}

/// `M(k) = J00 - J0p Jpp⁻¹ Jp0`.
pub fn schur_m(j: &BlockHermitian) -> Result<CMatrix> {
    if j.shift_dim() == 0 {
        return Ok(j.h00());
    }
    let jpp_inv = j.hpp().try_inverse().ok_or(Error::NotInvertible("Jpp"))?;
    Ok(j.h00() - j.h0p() * jpp_inv * j.hp0())
}

/// Both sides of `Σ A[ai,bj] a_a a_b (2πk_i)(2πk_j) = a^* M(k) a`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClaimantProbe {
    pub lhs: f64,
    pub rhs: f64,
    pub relgap: f64,
}

pub fn claimant_check(tensor: &ElasticTensor, symbol: &ContinuumSymbol, k: &[f64], a: &[f64]) -> Result<ClaimantProbe> {
    let (n, d) = (tensor.n, tensor.d);
    let mut lhs = 0.0;
    for i in 0..n {
        for j in 0..d {
            for l in 0..n {
                for m in 0..d {
                    lhs += tensor.get(i, j, l, m) * a[i] * a[l] * 4.0 * PI * PI * k[j] * k[m];
                }
            }
        }
    }
    let mm = schur_m(&symbol.at(k))?;
    let av = DVector::from_fn(n, |i, _| Complex64::new(a[i], 0.0));
    let rhs = (av.adjoint() * mm * &av)[(0, 0)].re;
    let scale = lhs.abs().max(rhs.abs());
    let relgap = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(ClaimantProbe { lhs, rhs, relgap })
}

/// Lattice first variation of the homogeneous energy at the deformation
/// `y_α(ξ) = G ξ + p_α`, tested against unit single-site fields at the
/// origin: entry `(γ - 1) n + i` pairs with `v_γ(0) = e_i`. Only species
/// `γ ≥ 1` are reported, matching the `∂_p Ŵ` variables.
pub fn single_site_variation(
    lattice: &Multilattice,
    pot: &dyn SitePotential,
    g: &DMatrix<f64>,
    p: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = lattice.n();
    let d = lattice.d();
    let s = lattice.species();
    let range = pot.range();
    let reach = range.r1().iter().map(|&r| lattice.radius(r)).fold(0.0, f64::max);
    let window = Arc::new(LatticeWindow::ball(lattice, range, 2.0 * reach + 1.0)?);
    let g_ref = reference_deformation(lattice);
    let p_ref = reference_shifts(lattice);
    let mut u = DisplacementField::zeros(window.clone(), s, n);
    for site in 0..window.len() {
        let x = lattice.position(window.site(site));
        for a in 0..s {
            for i in 0..n {
                let mut v = p[a][i] - p_ref[a][i];
                for j in 0..d {
                    v += (g[(i, j)] - g_ref[(i, j)]) * x[j];
                }
                u.set(site, a, i, v);
            }
        }
    }
    let origin = window.index_of([0; 3]).expect("origin is in the window");
    let mut out = vec![0.0; s * n];
    let mut du = vec![0.0; pot.dim()];
    let mut sigma = vec![0.0; pot.dim()];
    for site in 0..window.len() {
        // only sites whose stencil touches the origin contribute
        let touches = site == origin || (0..range.r1().len()).any(|k| window.neighbor(site, k) == Some(origin));
        if !touches {
            continue;
        }
        gather(&u, range, site, &mut du);
        pot.grad_into(&du, &mut sigma);
        for (ti, t) in range.triplets().iter().enumerate() {
            let s_t = &sigma[ti * n..(ti + 1) * n];
            if site == origin {
                for i in 0..n {
                    out[t.alpha * n + i] -= s_t[i];
                }
            }
            if window.neighbor(site, range.rho_index(ti)) == Some(origin) {
                for i in 0..n {
                    out[t.beta * n + i] += s_t[i];
                }
            }
        }
    }
    Ok(out[n..].to_vec())
}

/// Smooth periodic test fields on the unit cell `(-1/2, 1/2]^d` in lattice
/// coordinates: `U(x) = Σ_m a_m sin(2π m·x + φ_m)` per component and
/// `p_α(x) = b_α + Σ_m c_{α m} cos(2π m·x)`.
#[derive(Clone, Debug)]
pub struct SmoothFields {
    pub d: usize,
    pub n: usize,
    pub species: usize,
    /// `(mode, component, amplitude, phase)`.
    pub base_modes: Vec<(Vec<f64>, usize, f64, f64)>,
    /// `(species, component, constant)`.
    pub shift_const: Vec<(usize, usize, f64)>,
    /// `(species, mode, component, amplitude)`.
    pub shift_modes: Vec<(usize, Vec<f64>, usize, f64)>,
    /// Optional affine part `U += H x`.
    pub linear: Option<DMatrix<f64>>,
}

impl SmoothFields {
    pub fn zero(d: usize, n: usize, species: usize) -> Self {
        SmoothFields { d, n, species, base_modes: vec![], shift_const: vec![], shift_modes: vec![], linear: None }
    }

    /// A two-mode bump with mode-one shift fields of the given amplitude.
    /// The base modes are four times weaker so that the first-order
    /// shift/strain coupling is not masked by the second-order strain error
    /// at coarse grids.
    pub fn bump(d: usize, n: usize, species: usize, amplitude: f64) -> Self {
        let mut f = Self::zero(d, n, species);
        let m1: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let m2: Vec<f64> = (0..d).map(|i| if i == 1 { 1.0 } else { (i % 2) as f64 }).collect();
        let base = 0.25 * amplitude;
        for c in 0..n {
            f.base_modes.push((m1.clone(), c, base / (1.0 + c as f64), 0.3 * c as f64));
            f.base_modes.push((m2.clone(), c, 0.5 * base, 0.7 + c as f64));
        }
        for a in 1..species {
            for c in 0..n {
                f.shift_modes.push((a, m2.clone(), c, amplitude));
            }
        }
        f
    }

    pub fn base(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        for (m, c, a, ph) in &self.base_modes {
            let arg: f64 = 2.0 * PI * m.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph;
            u[*c] += a * arg.sin();
        }
        if let Some(h) = &self.linear {
            for i in 0..self.n {
                for j in 0..self.d {
                    u[i] += h[(i, j)] * x[j];
                }
            }
        }
        u
    }

    /// Derivative of `U` along lattice direction `rho` at `x`.
    pub fn base_directional(&self, x: &[f64], rho: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        for (m, c, a, ph) in &self.base_modes {
            let arg: f64 = 2.0 * PI * m.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph;
            let mr: f64 = m.iter().zip(rho).map(|(a, b)| a * b).sum();
            u[*c] += a * 2.0 * PI * mr * arg.cos();
        }
        if let Some(h) = &self.linear {
            for i in 0..self.n {
                for j in 0..self.d {
                    u[i] += h[(i, j)] * rho[j];
                }
            }
        }
        u
    }

    pub fn shift(&self, alpha: usize, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        if alpha == 0 {
            return p;
        }
        for &(a, c, v) in &self.shift_const {
            if a == alpha {
                p[c] += v;
            }
        }
        for (a, m, c, v) in &self.shift_modes {
            if *a == alpha {
                let arg: f64 = 2.0 * PI * m.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                p[*c] += v * arg.cos();
            }
        }
        p
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub epsilon: f64,
    pub atomistic: f64,
    pub continuum: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
    /// Least-squares slope of `log gap` against `log ε`; absent when every
    /// gap is at round-off level.
    pub slope: Option<f64>,
}

/// `ε^d Σ_ξ V(D^ε u^ε(ξ))` on the periodic grid with `u^ε_α = U + ε p_α`.
pub fn atomistic_energy_scaled(pot: &dyn SitePotential, fields: &SmoothFields, size: usize) -> f64 {
    let d = fields.d;
    let n = fields.n;
    let eps = 1.0 / size as f64;
    let range = pot.range();
    let count = size.pow(d as u32);
    let coord = |z: [i64; 3]| -> Vec<f64> { (0..d).map(|i| -0.5 + eps * (z[i] as f64 + 1.0)).collect() };
    let vals: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let z = crate::lattice::grid_coord(d, size, idx);
            let x = coord(z);
            let mut g = vec![0.0; pot.dim()];
            for (ti, t) in range.triplets().iter().enumerate() {
                let y: Vec<f64> = (0..d).map(|i| x[i] + eps * t.rho[i] as f64).collect();
                let ua = fields.base(&x);
                let ub = fields.base(&y);
                let pa = fields.shift(t.alpha, &x);
                let pb = fields.shift(t.beta, &y);
                for i in 0..n {
                    g[ti * n + i] = (ub[i] - ua[i]) / eps + pb[i] - pa[i];
                }
            }
            pot.value(&g)
        })
        .collect();
    eps.powi(d as i32) * vals.iter().sum::<f64>()
}

const GAUSS6: [(f64, f64); 6] = [
    (-0.932_469_514_203_152, 0.171_324_492_379_170),
    (-0.661_209_386_466_265, 0.360_761_573_048_139),
    (-0.238_619_186_083_197, 0.467_913_934_572_691),
    (0.238_619_186_083_197, 0.467_913_934_572_691),
    (0.661_209_386_466_265, 0.360_761_573_048_139),
    (0.932_469_514_203_152, 0.171_324_492_379_170),
];

/// `∫_Ω V((∇_ρ U + p_β - p_α)_t) dx` by tensor-product six-point Gauss on
/// `cells^d` congruent subcells of the unit cell.
pub fn continuum_energy(pot: &dyn SitePotential, fields: &SmoothFields, cells: usize) -> f64 {
    let d = fields.d;
    let n = fields.n;
    let range = pot.range();
    let h = 1.0 / cells as f64;
    let total = cells.pow(d as u32);
    let vals: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|c| {
            let z = crate::lattice::grid_coord(d, cells, c);
            let mut acc = 0.0;
            let npts = 6usize.pow(d as u32);
            for q in 0..npts {
                let mut x = vec![0.0; d];
                let mut w = 1.0;
                let mut qq = q;
                for (i, xi) in x.iter_mut().enumerate() {
                    let (node, weight) = GAUSS6[qq % 6];
                    qq /= 6;
                    *xi = -0.5 + h * (z[i] as f64 + 0.5 + 0.5 * node);
                    w *= 0.5 * h * weight;
                }
                let mut g = vec![0.0; pot.dim()];
                for (ti, t) in range.triplets().iter().enumerate() {
                    let rho: Vec<f64> = (0..d).map(|i| t.rho[i] as f64).collect();
                    let du = fields.base_directional(&x, &rho);
                    let pa = fields.shift(t.alpha, &x);
                    let pb = fields.shift(t.beta, &x);
                    for i in 0..n {
                        g[ti * n + i] = du[i] + pb[i] - pa[i];
                    }
                }
                acc += w * pot.value(&g);
            }
            acc
        })
        .collect();
    vals.iter().sum()
}

/// Energy gap over a ladder of grid orders, with a fitted convergence slope.
pub fn cb_consistency(
    pot: &dyn SitePotential,
    fields: &SmoothFields,
    ladder: &[usize],
    cells: usize,
) -> ConsistencyTable {
    let continuum = continuum_energy(pot, fields, cells);
    let rows: Vec<ConsistencyRow> = ladder
        .iter()
        .map(|&size| {
            let atomistic = atomistic_energy_scaled(pot, fields, size);
            ConsistencyRow {
                n: size,
                epsilon: 1.0 / size as f64,
                atomistic,
                continuum,
                gap: (atomistic - continuum).abs(),
            }
        })
        .collect();
    let floor = 1e-12 * continuum.abs().max(1e-300);
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.gap > floor).map(|r| (r.epsilon.ln(), r.gap.ln())).collect();
    let slope = if pts.len() >= 2 { Some(crate::greens::least_squares(&pts).0) } else { None };
    ConsistencyTable { rows, slope }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BondTriplet, InteractionRange};
    use crate::potential::make_harmonic;

    fn square() -> (Multilattice, crate::potential::Harmonic) {
        let l = Multilattice::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0, 0.0]], 2).unwrap();
        let ts: Vec<_> =
            [[1, 0], [-1, 0], [0, 1], [0, -1]].iter().map(|r| BondTriplet::new([r[0], r[1], 0], 0, 0)).collect();
        let r = InteractionRange::validate(&l, &ts).unwrap();
        let k: Vec<f64> = r.triplets().iter().map(|t| if r.is_mesh_addition(t) { 0.0 } else { 1.0 }).collect();
        (l.clone(), make_harmonic(&l, &r, k, false).unwrap())
    }

    #[test]
    fn bravais_tensor_is_the_strain_hessian() {
        let (l, pot) = square();
        let g = reference_deformation(&l);
        let p = reference_shifts(&l);
        let a = elastic_tensor(&l, &pot, &g, &p).unwrap();
        let st = w_hat(&l, &pot, &g, &p);
        assert_eq!(a.as_matrix(), st.hess_gg);
        // vector springs on ±e1, ±e2: A_{ijkl} = 2 δ_ik δ_jl
        assert!((a.get(0, 0, 0, 0) - 2.0).abs() < 1e-14);
        assert!((a.get(0, 1, 0, 1) - 2.0).abs() < 1e-14);
        assert!(a.get(0, 0, 1, 1).abs() < 1e-14);
        assert!(a.legendre_hadamard_min() > 0.0);
    }

    #[test]
    fn square_claimant_closed_form() {
        let (l, pot) = square();
        let g = reference_deformation(&l);
        let a = elastic_tensor(&l, &pot, &g, &reference_shifts(&l)).unwrap();
        let sym = ContinuumSymbol::new(&l, &pot);
        let k = [0.13, -0.07];
        let v = [0.6, 0.8];
        let probe = claimant_check(&a, &sym, &k, &v).unwrap();
        let want = 4.0 * PI * PI * 2.0 * (k[0] * k[0] + k[1] * k[1]);
        assert!((probe.lhs - want).abs() < 1e-12);
        assert!(probe.relgap < 1e-12);
    }

    #[test]
    fn zero_fields_have_zero_gap() {
        let (_, pot) = square();
        let f = SmoothFields::zero(2, 2, 1);
        let t = cb_consistency(&pot, &f, &[8, 16], 4);
        assert!(t.rows.iter().all(|r| r.gap == 0.0));
        assert!(t.slope.is_none());
    }

    #[test]
    fn affine_fields_are_exact() {
        let (_, pot) = square();
        let mut f = SmoothFields::zero(2, 2, 1);
        f.linear = Some(DMatrix::from_row_slice(2, 2, &[0.01, 0.02, -0.01, 0.03]));
        let t = cb_consistency(&pot, &f, &[8, 16], 4);
        assert!(t.rows.iter().all(|r| r.gap < 1e-14));
    }
}
