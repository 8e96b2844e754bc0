//! Newton-Krylov relaxation of the defect equilibrium on a clamped window
//! and the linearisation residual of the relaxed field.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{energy_renormalized, gather, gradient, hessian_apply, unit_gram_apply, DisplacementField};
use crate::error::{Error, Result};
use crate::lattice::{grid_coord, grid_index, InteractionRange, LatticeWindow, Multilattice, Topology};
use crate::potential::{DefectModel, SitePotential};
use crate::spectral::{isdft, sdft, stability_certificate, BrillouinGrid, DynamicalMatrix};

#[derive(Clone, Debug)]
pub struct RelaxOptions {
    /// Target for the a1-dual norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Ramp the dipoles up in this many equal stages (1 = no ramp).
    pub continuation: usize,
    /// Grid order of the stability pre-check; `None` skips it.
    pub stability_grid: Option<usize>,
    pub max_cg: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions { tol: 1e-9, max_iter: 50, continuation: 1, stability_grid: Some(16), max_cg: 20_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub cg_iterations: usize,
    pub descent_fallbacks: usize,
    /// a1-dual norm of the final gradient.
    pub gradient_norm: f64,
    pub energy: f64,
    pub converged: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Inverse of the on-site block of the reference Hessian, applied per site.
struct BlockPreconditioner {
    inv: DMatrix<f64>,
}

impl BlockPreconditioner {
    fn new(dm: &DynamicalMatrix) -> Self {
        let block = dm.onsite_block();
        let inv = block.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
            let diag = block.diagonal().iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            DMatrix::identity(block.nrows(), block.nrows()) / diag.max(1e-12)
        });
        BlockPreconditioner { inv }
    }

    fn apply(&self, r: &DisplacementField) -> DisplacementField {
        let mut z = r.zeros_like();
        let m = r.site_len();
        let interior = r.window().interior_len() * m;
        z.values_mut()[..interior].par_chunks_mut(m).zip(r.values()[..interior].par_chunks(m)).for_each(|(out, rv)| {
            for i in 0..m {
                out[i] = (0..m).map(|j| self.inv[(i, j)] * rv[j]).sum();
            }
        });
        z
    }
}

/// `sqrt(gᵀ G⁻¹ g)` with `G = Σ_t D_tᵀ D_t`, by conjugate gradients.
pub fn dual_norm(g: &DisplacementField, range: &InteractionRange) -> f64 {
    let bnorm = g.norm();
    if bnorm == 0.0 {
        return 0.0;
    }
    let prec = match GramPreconditioner::new(g.window(), range, g.n()) {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("gram preconditioner unavailable: {e}");
            None
        }
    };
    let apply = |r: &DisplacementField| match &prec {
        Some(p) => p.apply(r),
        None => r.clone(),
    };
    let mut x = g.zeros_like();
    let mut r = g.clone();
    let mut z = apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..10 * g.values().len().max(100) {
        let ap = unit_gram_apply(&p, range);
        let alpha = rz / p.dot(&ap);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        // the norm's error is quadratic in the residual
        if r.norm() <= 1e-6 * bnorm {
            break;
        }
        z = apply(&r);
        let rz_new = r.dot(&z);
        p.scale(rz_new / rz);
        p.axpy(1.0, &z);
        rz = rz_new;
    }
    g.dot(&x).max(0.0).sqrt()
}

/// Inverse of the whole-space Gram operator applied on a periodic box that
/// contains the window. Exact away from the boundary, so CG on the clamped
/// Gram operator converges in a handful of steps.
struct GramPreconditioner {
    d: usize,
    size: usize,
    species: usize,
    n: usize,
    nodes: Vec<usize>,
    inverse: Vec<DMatrix<Complex64>>,
}

fn smooth_size(min: usize) -> usize {
    (min.max(2)..)
        .find(|&m| {
            let mut k = m;
            for p in [2, 3, 5] {
                while k % p == 0 {
                    k /= p;
                }
            }
            k == 1 && m % 2 == 0
        })
        .unwrap()
}

impl GramPreconditioner {
    fn new(window: &LatticeWindow, range: &InteractionRange, n: usize) -> Result<Self> {
        let d = window.d();
        let species = range.species();
        let size = match window.topology() {
            Topology::Periodic { size } => size,
            Topology::Ball { .. } => {
                let extent =
                    window.sites().iter().flat_map(|z| z[..d].iter().map(|c| c.unsigned_abs())).max().unwrap_or(0);
                smooth_size(2 * extent as usize + 2)
            }
        };
        let nodes = (0..window.interior_len()).map(|i| grid_index(d, size, window.site(i))).collect();
        let total = size.pow(d as u32);
        let reg = (2.0 * PI / size as f64).powi(2);
        let inverse = (0..total)
            .into_par_iter()
            .map(|node| {
                let m = grid_coord(d, size, node);
                let mut sym = DMatrix::<Complex64>::identity(species, species) * Complex64::new(reg, 0.0);
                for t in range.triplets() {
                    let phase: f64 = (0..d).map(|a| 2.0 * PI * (m[a] * t.rho[a]) as f64 / size as f64).sum();
                    let mut l = vec![Complex64::new(0.0, 0.0); species];
                    l[t.beta] += Complex64::from_polar(1.0, phase);
                    l[t.alpha] -= Complex64::new(1.0, 0.0);
                    for a in 0..species {
                        for b in 0..species {
                            sym[(a, b)] += l[a].conj() * l[b];
                        }
                    }
                }
                sym.try_inverse().ok_or(Error::SingularPoint)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GramPreconditioner { d, size, species, n, nodes, inverse })
    }

    fn apply(&self, r: &DisplacementField) -> DisplacementField {
        let (s, n, d, size) = (self.species, self.n, self.d, self.size);
        let total = size.pow(d as u32);
        let mut hat: Vec<Vec<Complex64>> = (0..s * n)
            .into_par_iter()
            .map(|ch| {
                let mut grid = vec![Complex64::new(0.0, 0.0); total];
                for (site, &node) in self.nodes.iter().enumerate() {
                    grid[node] = Complex64::new(r.values()[site * s * n + ch], 0.0);
                }
                sdft(&grid, d, size).expect("grid has the box size")
            })
            .collect();
        for c in 0..n {
            let mut v = vec![Complex64::new(0.0, 0.0); s];
            for node in 0..total {
                for a in 0..s {
                    v[a] = hat[a * n + c][node];
                }
                let inv = &self.inverse[node];
                for a in 0..s {
                    hat[a * n + c][node] = (0..s).map(|b| inv[(a, b)] * v[b]).sum();
                }
            }
        }
        let back: Vec<Vec<Complex64>> =
            hat.par_iter().map(|h| isdft(h, d, size).expect("grid has the box size")).collect();
        let mut out = r.zeros_like();
        for (site, &node) in self.nodes.iter().enumerate() {
            for ch in 0..s * n {
                out.values_mut()[site * s * n + ch] = back[ch][node].re;
            }
        }
        out
    }
}

enum CgOutcome {
    Solved(DisplacementField, usize),
    NegativeCurvature(DisplacementField, usize),
}

fn pcg(
    u: &DisplacementField,
    rhs: &DisplacementField,
    pot: &dyn SitePotential,
    prec: &BlockPreconditioner,
    stop: f64,
    max_iter: usize,
) -> CgOutcome {
    let mut x = rhs.zeros_like();
    let mut r = rhs.clone();
    let mut z = prec.apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..max_iter {
        if r.norm() <= stop {
            return CgOutcome::Solved(x, it);
        }
        let hp = hessian_apply(u, &p, pot);
        let curv = p.dot(&hp);
        if curv <= 0.0 {
            return if it == 0 { CgOutcome::NegativeCurvature(z, it) } else { CgOutcome::Solved(x, it) };
        }
        let alpha = rz / curv;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &hp);
        z = prec.apply(&r);
        let rz_new = r.dot(&z);
        p.scale(rz_new / rz);
        p.axpy(1.0, &z);
        rz = rz_new;
    }
    CgOutcome::Solved(x, max_iter)
}

fn ball_radius(window: &LatticeWindow) -> f64 {
    match window.topology() {
        Topology::Ball { radius } => radius,
        Topology::Periodic { size } => size as f64,
    }
}

/// Minimise the renormalised defect energy on the window, starting from
/// zero, with the exterior clamped.
pub fn relax(
    lattice: &Multilattice,
    pot: &dyn SitePotential,
    defect: &DefectModel,
    window: Arc<LatticeWindow>,
    opts: &RelaxOptions,
) -> Result<(DisplacementField, SolveReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let dm = DynamicalMatrix::new(lattice, pot);
    if let Some(size) = opts.stability_grid {
        let grid = BrillouinGrid::new(lattice, size)?;
        let cert = stability_certificate(lattice, &grid, &dm, 1e-8, 1e-8);
        if !cert.pass {
            return Err(Error::Unstable(format!(
                "acoustic min {:.3e}, optical min {:?}",
                cert.gamma_acoustic_low, cert.gamma_optical
            )));
        }
    }
    let start = Instant::now();
    let prec = BlockPreconditioner::new(&dm);
    let mut u = DisplacementField::zeros(window, lattice.species(), lattice.n());
    let stages = opts.continuation.max(1);
    let mut total = SolveReport {
        iterations: 0,
        cg_iterations: 0,
        descent_fallbacks: 0,
        gradient_norm: 0.0,
        energy: 0.0,
        converged: false,
        wall_time: 0.0,
    };
    for stage in 1..=stages {
        let scaled = defect.scaled(stage as f64 / stages as f64);
        let rep = newton(&mut u, pot, &scaled, &prec, opts)?;
        total.iterations += rep.iterations;
        total.cg_iterations += rep.cg_iterations;
        total.descent_fallbacks += rep.descent_fallbacks;
        total.gradient_norm = rep.gradient_norm;
        total.energy = rep.energy;
        total.converged = rep.converged;
        if !rep.converged {
            break;
        }
    }
    total.wall_time = start.elapsed().as_secs_f64();
    if !total.converged {
        warn!("relaxation stopped at gradient norm {:.3e}", total.gradient_norm);
    }
    Ok((u, total))
}

fn newton(
    u: &mut DisplacementField,
    pot: &dyn SitePotential,
    defect: &DefectModel,
    prec: &BlockPreconditioner,
    opts: &RelaxOptions,
) -> Result<SolveReport> {
    let range = pot.range();
    let rwin = ball_radius(u.window());
    let mut rep = SolveReport {
        iterations: 0,
        cg_iterations: 0,
        descent_fallbacks: 0,
        gradient_norm: 0.0,
        energy: 0.0,
        converged: false,
        wall_time: 0.0,
    };
    let mut energy = energy_renormalized(u, pot, defect);
    let mut g = gradient(u, pot, defect);
    let mut gnorm = dual_norm(&g, range);
    for it in 0..opts.max_iter {
        debug!("newton {it}: E = {energy:.12e}, |g| = {gnorm:.3e}");
        if gnorm <= opts.tol {
            rep.converged = true;
            break;
        }
        let eta = if pot.is_quadratic() { 0.0 } else { gnorm.sqrt().min(0.1) };
        let stop = (eta * g.norm()).max(opts.tol / (4.0 * rwin));
        let mut rhs = g.clone();
        rhs.scale(-1.0);
        let (mut step, cg_its, descent) = match pcg(u, &rhs, pot, prec, stop, opts.max_cg) {
            CgOutcome::Solved(s, k) => (s, k, false),
            CgOutcome::NegativeCurvature(s, k) => (s, k, true),
        };
        rep.cg_iterations += cg_its;
        let mut slope = g.dot(&step);
        if descent || slope >= 0.0 {
            step = prec.apply(&rhs);
            slope = g.dot(&step);
            rep.descent_fallbacks += 1;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = u.clone();
        for _ in 0..30 {
            trial.clone_from(u);
            trial.axpy(alpha, &step);
            let e = energy_renormalized(&trial, pot, defect);
            if e <= energy + 1e-4 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // energy differences are at round-off; take the full step if the
            // gradient still improves
            trial.clone_from(u);
            trial.axpy(1.0, &step);
            let gt = gradient(&trial, pot, defect);
            if dual_norm(&gt, range) >= gnorm {
                rep.iterations = it + 1;
                break;
            }
        }
        *u = trial;
        energy = energy_renormalized(u, pot, defect);
        g = gradient(u, pot, defect);
        gnorm = dual_norm(&g, range);
        rep.iterations = it + 1;
    }
    if gnorm <= opts.tol {
        rep.converged = true;
    }
    rep.gradient_norm = gnorm;
    rep.energy = energy;
    info!("relaxation: {} Newton steps, {} CG iterations, |g| = {:.3e}", rep.iterations, rep.cg_iterations, gnorm);
    Ok(rep)
}

/// Site-wise tuples `f_(ραβ)(ξ)` over a window.
#[derive(Clone, Debug)]
pub struct ResidualField {
    window: Arc<LatticeWindow>,
    range: InteractionRange,
    n: usize,
    values: Vec<f64>,
    /// Largest number of quadrature panels any site needed.
    pub panels: usize,
}

impl ResidualField {
    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn range(&self) -> &InteractionRange {
        &self.range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.range.len() * self.n
    }

    pub fn site(&self, site: usize) -> &[f64] {
        let m = self.dim();
        &self.values[site * m..(site + 1) * m]
    }

    /// `|f(ξ)|_R` per site.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.chunks(self.dim()).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
    }
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// `∫_0^1 (1 - t) ∇³V(t g)[g, g] dt` with `panels` composite 8-point
/// Gauss-Legendre panels.
fn third_integral(pot: &dyn SitePotential, g: &[f64], panels: usize, out: &mut [f64]) {
    let dim = g.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut tg = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let h = 1.0 / panels as f64;
    for p in 0..panels {
        for &(node, weight) in &GAUSS8 {
            let t = h * (p as f64 + 0.5 * (node + 1.0));
            let w = 0.5 * h * weight * (1.0 - t);
            tg.iter_mut().zip(g).for_each(|(a, b)| *a = t * b);
            pot.third_contract(&tg, g, &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += w * b);
        }
    }
}

/// `f(ξ) = -∫_0^1 (1 - t) ∇³V(t Du(ξ))[Du(ξ), Du(ξ)] dt - g_ξ`, so that
/// `⟨δ²E(0) u, v⟩ = ⟨f, Dv⟩` whenever `u` is an equilibrium.
pub fn residual_f(u: &DisplacementField, pot: &dyn SitePotential, defect: &DefectModel) -> ResidualField {
    let range = pot.range();
    let dim = pot.dim();
    let w = u.window_arc().clone();
    let quadratic = pot.is_quadratic();
    let mut values = vec![0.0; w.len() * dim];
    let panels: Vec<usize> = values
        .par_chunks_mut(dim)
        .enumerate()
        .map(|(site, out)| {
            let mut used = 0;
            if !quadratic {
                let mut du = vec![0.0; dim];
                gather(u, range, site, &mut du);
                if du.iter().any(|&x| x != 0.0) {
                    let mut coarse = vec![0.0; dim];
                    third_integral(pot, &du, 1, &mut coarse);
                    let mut k = 1;
                    loop {
                        let mut fine = vec![0.0; dim];
                        third_integral(pot, &du, 2 * k, &mut fine);
                        let diff: f64 = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        let scale: f64 = fine.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
                        coarse = fine;
                        k *= 2;
                        if diff <= 1e-14 * scale.max(1e-300) || k >= 64 {
                            break;
                        }
                    }
                    used = k;
                    out.iter_mut().zip(&coarse).for_each(|(o, c)| *o = -c);
                }
            }
            if let Some(g) = defect.dipole(w.site(site)) {
                out.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
            }
            used
        })
        .collect();
    ResidualField { window: w, range: range.clone(), n: pot.n(), values, panels: panels.into_iter().max().unwrap_or(0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BondTriplet;
    use crate::potential::{make_harmonic, make_morse_pair, MorseParams};
    use std::collections::BTreeMap;

    fn square() -> (Multilattice, InteractionRange) {
        let l = Multilattice::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0, 0.0]], 2).unwrap();
        let ts: Vec<_> =
            [[1, 0], [-1, 0], [0, 1], [0, -1]].iter().map(|r| BondTriplet::new([r[0], r[1], 0], 0, 0)).collect();
        let r = InteractionRange::validate(&l, &ts).unwrap();
        (l, r)
    }

    fn dipole(l: &Multilattice, r: &InteractionRange, s: f64) -> DefectModel {
        let n = l.n();
        let mut g = vec![0.0; r.len() * n];
        for (i, t) in r.triplets().iter().enumerate() {
            if r.is_mesh_addition(t) {
                continue;
            }
            let b = l.reference_bond(t);
            let len = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..n {
                g[i * n + c] = s * b[c] / len;
            }
        }
        let mut m = BTreeMap::new();
        m.insert([0; 3], g);
        DefectModel::new(l, r, 0.0, m).unwrap()
    }

    #[test]
    fn zero_defect_needs_no_iterations() {
        let (l, r) = square();
        let pot = make_harmonic(&l, &r, vec![1.0; r.len()], false).unwrap();
        let w = Arc::new(LatticeWindow::ball(&l, &r, 6.0).unwrap());
        let (u, rep) = relax(&l, &pot, &DefectModel::none(), w, &RelaxOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn dual_norm_of_gram_image_is_energy_norm() {
        let (l, r) = square();
        let w = Arc::new(LatticeWindow::ball(&l, &r, 12.0).unwrap());
        let v = DisplacementField::from_fn(w, 1, 2, |z, _, i| {
            let q = (z[0] * z[0] + z[1] * z[1]) as f64;
            (-q / 8.0).exp() * (1.0 + i as f64)
        });
        let g = unit_gram_apply(&v, &r);
        let a1 = crate::energy::norm_a1(&v, &r);
        assert!((dual_norm(&g, &r) - a1).abs() <= 1e-8 * a1);
    }

    #[test]
    fn harmonic_defect_converges_in_one_step() {
        let (l, r) = square();
        let pot = make_harmonic(&l, &r, vec![1.0; r.len()], false).unwrap();
        let w = Arc::new(LatticeWindow::ball(&l, &r, 10.0).unwrap());
        let defect = dipole(&l, &r, 0.1);
        let (_, rep) = relax(&l, &pot, &defect, w, &RelaxOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn residual_matches_taylor_remainder() {
        let (l, r) = square();
        let mut pairs = BTreeMap::new();
        pairs.insert((0, 0), MorseParams { depth: 1.0, width: 2.0, r0: 0.9 });
        let pot = make_morse_pair(&l, &r, &pairs, Some(1.2)).unwrap();
        let w = Arc::new(LatticeWindow::ball(&l, &r, 8.0).unwrap());
        let defect = dipole(&l, &r, 0.05);
        let (u, rep) = relax(&l, &pot, &defect, w, &RelaxOptions::default()).unwrap();
        assert!(rep.converged);
        let f = residual_f(&u, &pot, &defect);
        let dim = pot.dim();
        let zero = vec![0.0; dim];
        let f0 = pot.grad(&zero);
        let k0 = pot.hess(&zero);
        let mut du = vec![0.0; dim];
        for site in 0..u.window().len() {
            gather(&u, &r, site, &mut du);
            let lin = &k0 * nalgebra::DVector::from_vec(du.clone());
            let gr = pot.grad(&du);
            let dip = defect.dipole(u.window().site(site));
            for i in 0..dim {
                let want = -(gr[i] - f0[i] - lin[i]) - dip.map_or(0.0, |g| g[i]);
                assert!((f.site(site)[i] - want).abs() < 1e-13, "site {site} slot {i}");
            }
        }
    }
}
