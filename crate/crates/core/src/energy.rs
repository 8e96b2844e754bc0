//! Displacement fields, the renormalised energy and its variations, and the
//! three equivalent strain norms.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{coord_add, kuhn_simplices, InteractionRange, LatticeWindow, Multilattice};
use crate::potential::{DefectModel, SitePotential};
use crate::spectral::{minimal_image_k, sdft, BrillouinGrid};

/// Per-site, per-species vectors on a lattice window. Halo sites of a ball
/// window are part of the exterior and stay zero.
#[derive(Clone, Debug)]
pub struct DisplacementField {
    window: Arc<LatticeWindow>,
    species: usize,
    n: usize,
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(window: Arc<LatticeWindow>, species: usize, n: usize) -> Self {
        let len = window.len() * species * n;
        DisplacementField { window, species, n, values: vec![0.0; len] }
    }

    /// Field with `u_α(ξ)_i = f(z, α, i)` on interior sites.
    pub fn from_fn(
        window: Arc<LatticeWindow>,
        species: usize,
        n: usize,
        mut f: impl FnMut([i64; 3], usize, usize) -> f64,
    ) -> Self {
        let mut u = Self::zeros(window, species, n);
        for site in 0..u.window.interior_len() {
            let z = u.window.site(site);
            for a in 0..species {
                for i in 0..n {
                    let k = u.offset(site, a, i);
                    u.values[k] = f(z, a, i);
                }
            }
        }
        u
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn window_arc(&self) -> &Arc<LatticeWindow> {
        &self.window
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Values per site (`S n` each).
    pub fn site_len(&self) -> usize {
        self.species * self.n
    }

    #[inline]
    pub fn offset(&self, site: usize, alpha: usize, i: usize) -> usize {
        (site * self.species + alpha) * self.n + i
    }

    #[inline]
    pub fn value(&self, site: usize, alpha: usize, i: usize) -> f64 {
        self.values[self.offset(site, alpha, i)]
    }

    pub fn set(&mut self, site: usize, alpha: usize, i: usize, v: f64) {
        let k = self.offset(site, alpha, i);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn site_values(&self, site: usize) -> &[f64] {
        let m = self.site_len();
        &self.values[site * m..(site + 1) * m]
    }

    /// Base displacement `U(ξ) = u_0(ξ)`.
    pub fn base(&self, site: usize) -> &[f64] {
        let k = self.offset(site, 0, 0);
        &self.values[k..k + self.n]
    }

    /// Shift `p_α(ξ) = u_α(ξ) - u_0(ξ)`.
    pub fn shift(&self, site: usize, alpha: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(site, alpha, i) - self.value(site, 0, i)).collect()
    }

    /// Zero every halo value.
    pub fn clamp(&mut self) {
        let start = self.window.interior_len() * self.site_len();
        self.values[start..].iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn zeros_like(&self) -> Self {
        DisplacementField {
            window: self.window.clone(),
            species: self.species,
            n: self.n,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        self.values.iter_mut().zip(&x.values).for_each(|(y, x)| *y += a * x);
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|x| *x *= a);
    }

    /// Add `c` to every species at every interior site.
    pub fn translate(&mut self, c: &[f64]) {
        for site in 0..self.window.interior_len() {
            for a in 0..self.species {
                for i in 0..self.n {
                    let k = self.offset(site, a, i);
                    self.values[k] += c[i];
                }
            }
        }
    }

    /// Values at lattice point `z`, zero when outside the window.
    pub fn at(&self, z: [i64; 3]) -> Option<&[f64]> {
        self.window.index_of(z).map(|s| self.site_values(s))
    }
}

/// `Du(ξ)` at a window site; neighbours outside the window read as zero.
pub fn gather(u: &DisplacementField, range: &InteractionRange, site: usize, out: &mut [f64]) {
    let n = u.n;
    let m = u.species * n;
    let w = u.window();
    let here = &u.values[site * m..(site + 1) * m];
    for (t, tr) in range.triplets().iter().enumerate() {
        let o = &mut out[t * n..(t + 1) * n];
        let a = &here[tr.alpha * n..(tr.alpha + 1) * n];
        match w.neighbor(site, range.rho_index(t)) {
            Some(b) => {
                let ub = &u.values[b * m + tr.beta * n..b * m + (tr.beta + 1) * n];
                for i in 0..n {
                    o[i] = ub[i] - a[i];
                }
            }
            None => {
                for i in 0..n {
                    o[i] = -a[i];
                }
            }
        }
    }
}

/// Accumulate `⟨σ, D v⟩` as a covector: `-σ_t` on `(ξ, α)`, `+σ_t` on
/// `(ξ + ρ, β)`. Halo slots are dropped.
fn scatter(out: &mut DisplacementField, range: &InteractionRange, site: usize, sigma: &[f64]) {
    let n = out.n;
    let m = out.species * n;
    let interior = out.window.interior_len();
    for (t, tr) in range.triplets().iter().enumerate() {
        let s = &sigma[t * n..(t + 1) * n];
        if site < interior {
            let o = &mut out.values[site * m + tr.alpha * n..site * m + (tr.alpha + 1) * n];
            for i in 0..n {
                o[i] -= s[i];
            }
        }
        if let Some(b) = out.window.neighbor(site, range.rho_index(t)) {
            if b < interior {
                let o = &mut out.values[b * m + tr.beta * n..b * m + (tr.beta + 1) * n];
                for i in 0..n {
                    o[i] += s[i];
                }
            }
        }
    }
}

/// Per-site map over all window sites; `f(site, Du(site), out)` fills a
/// `dim`-slot buffer. The buffers are returned in site order.
fn per_site<F>(u: &DisplacementField, range: &InteractionRange, dim_out: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    let dim = range.len() * u.n;
    let mut buf = vec![0.0; u.window.len() * dim_out];
    buf.par_chunks_mut(dim_out).enumerate().for_each_init(
        || vec![0.0; dim],
        |du, (site, out)| {
            gather(u, range, site, du);
            f(site, du, out);
        },
    );
    buf
}

const BLOCK: usize = 2048;

/// Covector `Σ_ξ D^T σ(ξ)` where `σ(ξ)` is produced by
/// `f(site, Dv(site), scratch, σ)`. Sites are mapped in parallel block by
/// block and scattered in site order, so the result does not depend on the
/// thread count.
fn map_scatter<F>(v: &DisplacementField, range: &InteractionRange, f: F) -> DisplacementField
where
    F: Fn(usize, &[f64], &mut [f64], &mut [f64]) + Sync,
{
    let dim = range.len() * v.n;
    let len = v.window.len();
    let mut out = v.zeros_like();
    let mut buf = vec![0.0; BLOCK.min(len) * dim];
    for start in (0..len).step_by(BLOCK) {
        let end = (start + BLOCK).min(len);
        buf[..(end - start) * dim].par_chunks_mut(dim).enumerate().for_each_init(
            || (vec![0.0; dim], vec![0.0; dim]),
            |(dv, scratch), (j, sigma)| {
                gather(v, range, start + j, dv);
                f(start + j, dv, scratch, sigma);
            },
        );
        for j in 0..end - start {
            scatter(&mut out, range, start + j, &buf[j * dim..(j + 1) * dim]);
        }
    }
    out
}

/// `Σ_ξ [V_ξ(Du) - V'(0)·Du]`.
pub fn energy_renormalized(u: &DisplacementField, pot: &dyn SitePotential, defect: &DefectModel) -> f64 {
    let range = pot.range();
    let dim = pot.dim();
    let zero = vec![0.0; dim];
    let f0 = pot.grad(&zero);
    let w = u.window();
    let vals = per_site(u, range, 1, |site, du, out| {
        let mut e = pot.value(du) - dot(&f0, du);
        if let Some(g) = defect.dipole(w.site(site)) {
            e += dot(g, du);
        }
        out[0] = e;
    });
    vals.iter().sum()
}

/// First variation as a covector on the free sites.
pub fn gradient(u: &DisplacementField, pot: &dyn SitePotential, defect: &DefectModel) -> DisplacementField {
    let range = pot.range();
    let dim = pot.dim();
    let f0 = pot.grad(&vec![0.0; dim]);
    let w = u.window();
    map_scatter(u, range, |site, du, _, out| {
        pot.grad_into(du, out);
        out.iter_mut().zip(&f0).for_each(|(o, r)| *o -= r);
        if let Some(g) = defect.dipole(w.site(site)) {
            out.iter_mut().zip(g).for_each(|(o, x)| *o += x);
        }
    })
}

/// `δ²E(u) v` as a covector on the free sites.
pub fn hessian_apply(u: &DisplacementField, v: &DisplacementField, pot: &dyn SitePotential) -> DisplacementField {
    let range = pot.range();
    if pot.is_quadratic() {
        return map_scatter(v, range, |_, dv, _, out| pot.hess_apply(dv, dv, out));
    }
    map_scatter(v, range, |site, dv, du, out| {
        gather(u, range, site, du);
        pot.hess_apply(du, dv, out);
    })
}

/// `Σ_t D_tᵀ D_t v`, the Gram operator of the a1 norm.
pub fn unit_gram_apply(v: &DisplacementField, range: &InteractionRange) -> DisplacementField {
    map_scatter(v, range, |_, dv, _, out| out.copy_from_slice(dv))
}

/// Pairing `⟨σ, D v⟩` for a site-wise tuple field `σ` (flat, site-major).
pub fn pair_with_differences(sigma: &[f64], v: &DisplacementField, range: &InteractionRange) -> f64 {
    let dim = range.len() * v.n;
    let dv = per_site(v, range, dim, |_, d, out| out.copy_from_slice(d));
    let local: Vec<f64> = sigma.par_chunks(dim).zip(dv.par_chunks(dim)).map(|(a, b)| dot(a, b)).collect();
    local.iter().sum()
}

/// All `Du(ξ)` tuples, site-major.
pub fn differences(u: &DisplacementField, range: &InteractionRange) -> Vec<f64> {
    let dim = range.len() * u.n;
    per_site(u, range, dim, |_, d, out| out.copy_from_slice(d))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖u‖²_{a1} = Σ_ξ |Du(ξ)|²`, returned as its square root.
pub fn norm_a1(u: &DisplacementField, range: &InteractionRange) -> f64 {
    let vals = per_site(u, range, 1, |_, du, out| out[0] = dot(du, du));
    vals.iter().sum::<f64>().sqrt()
}

/// `‖∇ I U‖² + Σ_α ‖I q_α‖²` with `I` the P1 interpolant on the Kuhn mesh
/// mapped by `F`, returned as its square root.
pub fn norm_a2(u: &DisplacementField, lattice: &Multilattice) -> f64 {
    let d = lattice.d();
    let n = u.n;
    let s = u.species;
    let b = lattice.dual();
    let simplices = kuhn_simplices(d);
    let fact: f64 = (1..=d).map(|x| x as f64).product();
    let vol = 1.0 / fact;
    let mass_diag = vol * 2.0 / ((d + 1) * (d + 2)) as f64;
    let mass_off = vol / ((d + 1) * (d + 2)) as f64;
    let w = u.window();
    let zero = vec![0.0; s * n];
    let vals: Vec<f64> = (0..w.len())
        .into_par_iter()
        .map(|site| {
            let base = w.site(site);
            let mut acc = 0.0;
            for simplex in &simplices {
                let verts: Vec<&[f64]> = simplex.iter().map(|&v| u.at(coord_add(base, v)).unwrap_or(&zero)).collect();
                // lattice-coordinate gradient of U along the chain
                for i in 0..n {
                    let mut gz = [0.0; 3];
                    for k in 1..=d {
                        let axis = (0..d).find(|&a| simplex[k][a] != simplex[k - 1][a]).unwrap();
                        gz[axis] = verts[k][i] - verts[k - 1][i];
                    }
                    let mut g2 = 0.0;
                    for r in 0..d {
                        let gx: f64 = (0..d).map(|c| b[(r, c)] * gz[c]).sum();
                        g2 += gx * gx;
                    }
                    acc += vol * g2;
                }
                for a in 1..s {
                    for i in 0..n {
                        let q: Vec<f64> = verts.iter().map(|x| x[a * n + i] - x[i]).collect();
                        let sum: f64 = q.iter().sum();
                        let sq: f64 = q.iter().map(|x| x * x).sum();
                        acc += mass_diag * sq + mass_off * (sum * sum - sq);
                    }
                }
            }
            acc
        })
        .collect();
    vals.iter().sum::<f64>().sqrt()
}

/// `(1/N^d) Σ_k [4π²|k|² |Û(k)|² + Σ_α |q̂_α(k)|²]` on an `N`-periodic
/// embedding of the field, returned as its square root.
pub fn norm_a3(u: &DisplacementField, lattice: &Multilattice, grid: usize) -> Result<f64> {
    let d = lattice.d();
    let n = u.n;
    let s = u.species;
    let w = u.window();
    let grid_spec = BrillouinGrid::new(lattice, grid)?;
    let count = grid_spec.len();
    let mut channels = vec![vec![Complex64::new(0.0, 0.0); count]; s * n];
    let half = grid as i64 / 2;
    for site in 0..w.interior_len() {
        let z = w.site(site);
        if z[..d].iter().any(|&c| c <= -half || c > half) {
            return Err(Error::SupercellTooSmall {
                n: grid,
                extent: z[..d].iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0),
            });
        }
        let idx = crate::lattice::grid_index(d, grid, z);
        for i in 0..n {
            channels[i][idx] = Complex64::new(u.value(site, 0, i), 0.0);
            for a in 1..s {
                channels[a * n + i][idx] = Complex64::new(u.value(site, a, i) - u.value(site, 0, i), 0.0);
            }
        }
    }
    let hats: Vec<Vec<Complex64>> = channels.into_par_iter().map(|c| sdft(&c, d, grid)).collect::<Result<_>>()?;
    let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
    let mut acc = 0.0;
    for m in 0..count {
        let k = minimal_image_k(lattice, grid, m);
        let k2: f64 = k.iter().map(|x| x * x).sum();
        for i in 0..n {
            acc += four_pi2 * k2 * hats[i][m].norm_sqr();
        }
        for c in n..s * n {
            acc += hats[c][m].norm_sqr();
        }
    }
    Ok((acc / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BondTriplet;
    use crate::potential::make_harmonic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn setup() -> (Multilattice, InteractionRange, Arc<LatticeWindow>) {
        let l = Multilattice::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0, 0.0], vec![0.5, 0.5]], 2).unwrap();
        let mut ts = Vec::new();
        for a in 0..2 {
            for r in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
                ts.push(BondTriplet::new([r[0], r[1], 0], a, a));
            }
        }
        let r = InteractionRange::validate(&l, &ts).unwrap();
        let w = Arc::new(LatticeWindow::ball(&l, &r, 4.0).unwrap());
        (l, r, w)
    }

    fn random_field(w: &Arc<LatticeWindow>, seed: u64) -> DisplacementField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DisplacementField::from_fn(w.clone(), 2, 2, |_, _, _| rng.gen_range(-0.1..0.1))
    }

    #[test]
    fn translation_has_zero_norms() {
        let (l, r, w) = setup();
        let mut u = DisplacementField::zeros(w.clone(), 2, 2);
        // a full-lattice translation is zero in the interior of the ball
        u.translate(&[0.3, -0.2]);
        let d = differences(&u, &r);
        let free: usize = w.interior_len();
        let interior_only: f64 = (0..free)
            .filter(|&s| (0..r.r1().len()).all(|k| w.neighbor(s, k).is_some_and(|b| b < free)))
            .map(|s| d[s * r.len() * 2..(s + 1) * r.len() * 2].iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!(interior_only < 1e-28);
        let z = DisplacementField::zeros(w, 2, 2);
        assert_eq!(norm_a1(&z, &r), 0.0);
        assert_eq!(norm_a2(&z, &l), 0.0);
    }

    #[test]
    fn harmonic_energy_is_half_hessian_pairing() {
        let (l, r, w) = setup();
        let pot = make_harmonic(&l, &r, vec![1.0; r.len()], false).unwrap();
        let u = random_field(&w, 3);
        let hu = hessian_apply(&u, &u, &pot);
        let e = energy_renormalized(&u, &pot, &DefectModel::none());
        assert!((e - 0.5 * hu.dot(&u)).abs() < 1e-12 * e.abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (l, r, w) = setup();
        let pot = make_harmonic(&l, &r, vec![1.0; r.len()], false).unwrap();
        let mut dip = BTreeMap::new();
        dip.insert([0, 0, 0], (0..pot.dim()).map(|i| 0.1 * (i as f64).sin()).collect());
        let defect = DefectModel::new(&l, &r, 0.0, dip).unwrap();
        let u = random_field(&w, 5);
        let v = random_field(&w, 6);
        let g = gradient(&u, &pot, &defect);
        let h = 1e-6;
        let mut up = u.clone();
        up.axpy(h, &v);
        let mut um = u.clone();
        um.axpy(-h, &v);
        let fd = (energy_renormalized(&up, &pot, &defect) - energy_renormalized(&um, &pot, &defect)) / (2.0 * h);
        assert!((fd - g.dot(&v)).abs() < 1e-7 * fd.abs().max(1.0));
    }

    #[test]
    fn single_site_shift_has_unit_a3_mass() {
        let (l, _r, w) = setup();
        let mut u = DisplacementField::zeros(w.clone(), 2, 2);
        let s = w.index_of([0, 0, 0]).unwrap();
        u.set(s, 1, 0, 0.6);
        u.set(s, 1, 1, 0.8);
        // U = 0, so only the shift sector contributes
        assert!((norm_a3(&u, &l, 16).unwrap() - 1.0).abs() < 1e-12);
    }
}
