//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Set `ACCEPTANCE_ONLY=3,7` to run a subset.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multilattice::cauchyborn::{
    cb_consistency, claimant_check, elastic_tensor, reference_deformation, reference_shifts, shift_equilibrium,
    single_site_variation, w_hat, ContinuumSymbol, SmoothFields,
};
use multilattice::energy::{gather, norm_a1, norm_a2, norm_a3};
use multilattice::greens::{
    decay_fit, greens_blocks, least_squares, reconstruct_solution, solution_decay_report, DecayFit,
};
use multilattice::relax::{relax, residual_f, RelaxOptions};
use multilattice::spectral::{predict_exponent, quadratic_form_check, GreensFamily};
use multilattice::{Crystal, DisplacementField, LatticeWindow, PresetRegistry, SitePotential};

const SEED: u64 = 20240611;
const R_WIN: f64 = 64.0;
const HALF_WINDOW: f64 = R_WIN / 2.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn preset(name: &str) -> Crystal {
    PresetRegistry::default().build(name).expect("preset builds")
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn fd_errors(pot: &dyn SitePotential, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let m = pot.dim();
    let mut g = random_vec(rng, m, 1.0);
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = rng.gen_range(0.0..0.1);
    g.iter_mut().for_each(|x| *x *= target / norm);
    let w = random_vec(rng, m, 1.0);
    let h = 1e-5;
    let shifted = |s: f64| -> Vec<f64> { g.iter().zip(&w).map(|(a, b)| a + s * b).collect() };

    let grad = pot.grad(&g);
    let mut e = g.clone();
    let fd_grad: Vec<f64> = (0..m)
        .map(|i| {
            e[i] = g[i] + h;
            let up = pot.value(&e);
            e[i] = g[i] - h;
            let dn = pot.value(&e);
            e[i] = g[i];
            (up - dn) / (2.0 * h)
        })
        .collect();

    let mut hw = vec![0.0; m];
    pot.hess_apply(&g, &w, &mut hw);
    let (gp, gm) = (pot.grad(&shifted(h)), pot.grad(&shifted(-h)));
    let fd_hess: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();

    let third = pot.third(&g, &w);
    let (mut hp, mut hm) = (vec![0.0; m], vec![0.0; m]);
    pot.hess_apply(&shifted(h), &w, &mut hp);
    pot.hess_apply(&shifted(-h), &w, &mut hm);
    let fd_third: Vec<f64> = hp.iter().zip(&hm).map(|(a, b)| (a - b) / (2.0 * h)).collect();

    (rel(&grad, &fd_grad), rel(&hw, &fd_hess), rel(&third, &fd_third))
}

fn derivative_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut parts = Vec::new();
    for name in ["square1", "hex2d"] {
        let c = preset(name);
        let mut w = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let (a, b, t) = fd_errors(c.potential.as_ref(), &mut rng);
            w = (w.0.max(a), w.1.max(b), w.2.max(t));
        }
        parts.push(format!("{}: {:.1e}/{:.1e}/{:.1e}", c.potential.kind(), w.0, w.1, w.2));
        worst = (worst.0.max(w.0), worst.1.max(w.1), worst.2.max(w.2));
    }
    Outcome { pass: worst.0 <= 1e-6 && worst.1 <= 1e-6 && worst.2 <= 1e-5, detail: parts.join(", ") }
}

fn random_periodic(c: &Crystal, size: usize, rng: &mut ChaCha8Rng) -> DisplacementField {
    let w = Arc::new(LatticeWindow::periodic(&c.lattice, &c.range, size).unwrap());
    DisplacementField::from_fn(w, c.lattice.species(), c.lattice.n(), |_, _, _| rng.gen_range(-1.0..1.0))
}

fn fourier_tie() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["square1", "hex2d", "hex2d-harmonic", "diamond3d"] {
        let c = preset(name);
        let dm = c.dynamical_matrix();
        let size = if c.lattice.d() == 2 { 16 } else { 8 };
        let mut w: f64 = 0.0;
        for _ in 0..20 {
            let u = random_periodic(&c, size, &mut rng);
            let v = random_periodic(&c, size, &mut rng);
            let (real, fourier) = quadratic_form_check(&u, &v, c.potential.as_ref(), &c.lattice, &dm).unwrap();
            w = w.max((real - fourier).abs() / real.abs().max(fourier.abs()));
        }
        parts.push(format!("{name} {w:.1e}"));
        worst = worst.max(w);
    }
    Outcome { pass: worst <= 1e-10, detail: parts.join(", ") }
}

fn stability() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, grid) in [("hex2d", 64), ("diamond3d", 24)] {
        let cert = preset(name).stability(grid).unwrap();
        let ok = cert.pass && cert.gamma_acoustic_low > 0.0 && cert.gamma_optical.is_some_and(|g| g > 0.0);
        pass &= ok;
        parts.push(format!(
            "{name} N={grid} acoustic {:.3e} optical {:.3e}",
            cert.gamma_acoustic_low,
            cert.gamma_optical.unwrap_or(f64::NAN)
        ));
    }
    let soft = preset("square1-soft").stability(64).unwrap();
    let located = soft.worst_mode.as_ref().map(|m| m.eigenvalue < 0.0).unwrap_or(false);
    pass &= !soft.pass && located;
    parts.push(format!(
        "square1-soft fails={} at λ={:.3e}",
        !soft.pass,
        soft.worst_mode.map(|m| m.eigenvalue).unwrap_or(f64::NAN)
    ));
    Outcome { pass, detail: parts.join(", ") }
}

fn shift_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["hex2d", "diamond3d"] {
        let c = preset(name);
        let l = &c.lattice;
        let pot = c.potential.as_ref();
        let g0 = reference_deformation(l);
        let p0 = reference_shifts(l);
        let mut w: f64 = 0.0;
        for _ in 0..200 {
            let g = &g0 + DMatrix::from_fn(g0.nrows(), g0.ncols(), |_, _| rng.gen_range(-0.05..0.05));
            let p: Vec<Vec<f64>> = p0
                .iter()
                .enumerate()
                .map(|(a, v)| v.iter().map(|x| if a == 0 { *x } else { x + rng.gen_range(-0.02..0.02) }).collect())
                .collect();
            let lattice_side = single_site_variation(l, pot, &g, &p).unwrap();
            let cb_side = w_hat(l, pot, &g, &p).grad_p;
            for (a, b) in lattice_side.iter().zip(cb_side.iter()) {
                w = w.max((a - b).abs());
            }
        }
        parts.push(format!("{name} {w:.1e}"));
        worst = worst.max(w);
    }
    Outcome { pass: worst <= 1e-12, detail: parts.join(", ") }
}

fn continuum_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["square1", "hex2d", "hex2d-harmonic", "diamond3d"] {
        let c = preset(name);
        let l = &c.lattice;
        let pot = c.potential.as_ref();
        let g = reference_deformation(l);
        let p = shift_equilibrium(l, pot, &g, &reference_shifts(l)).unwrap();
        let a = elastic_tensor(l, pot, &g, &p).unwrap();
        let sym = ContinuumSymbol::new(l, pot);
        let mut w: f64 = 0.0;
        for _ in 0..1000 {
            let k = random_vec(&mut rng, l.d(), 1.0);
            let v = random_vec(&mut rng, l.n(), 1.0);
            w = w.max(claimant_check(&a, &sym, &k, &v).unwrap().relgap);
        }
        parts.push(format!("{name} {w:.1e}"));
        worst = worst.max(w);
    }
    Outcome { pass: worst <= 1e-8, detail: parts.join(", ") }
}

fn cb_rate() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["hex2d", "hex2d-harmonic"] {
        let c = preset(name);
        let fields = SmoothFields::bump(c.lattice.d(), c.lattice.n(), c.lattice.species(), 0.05);
        let table = cb_consistency(c.potential.as_ref(), &fields, &[8, 16, 32, 64], 32);
        let slope = table.slope.unwrap_or(f64::NAN);
        pass &= slope >= 0.85;
        let gaps: Vec<String> = table.rows.iter().map(|r| format!("{:.2e}", r.gap)).collect();
        parts.push(format!("{name} slope {slope:.3} gaps [{}]", gaps.join(" ")));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn greens_decay() -> Outcome {
    let c = preset("hex2d");
    let dm = Arc::new(c.dynamical_matrix());
    let families = [(GreensFamily::QInv, 1), (GreensFamily::Coupling, 0), (GreensFamily::ShiftFamily, 0)];
    let fits = |size: usize| -> Vec<DecayFit> {
        let blocks = greens_blocks(&c.lattice, &c.range, dm.clone(), size).unwrap();
        families.iter().map(|&(f, t)| decay_fit(&blocks, f, t, 8.0, 64.0).unwrap()).collect()
    };
    let a = fits(256);
    let b = fits(512);
    let mut pass = true;
    let mut parts = Vec::new();
    for ((fa, fb), &(fam, t)) in a.iter().zip(&b).zip(&families) {
        let target = predict_exponent(fam, t, 2).unwrap() as f64;
        let ok = (fa.exponent - target).abs() <= 0.3 && (fa.exponent - fb.exponent).abs() <= 0.1;
        pass &= ok;
        parts.push(format!("{} t={t}: {:.3} (N=512 {:.3}, target {target})", fa.label, fa.exponent, fb.exponent));
    }
    Outcome { pass, detail: parts.join(", ") }
}

struct Relaxed {
    crystal: Crystal,
    u: DisplacementField,
}

fn relaxed_hex(radius: f64) -> Relaxed {
    let c = preset("hex2d");
    let w = Arc::new(LatticeWindow::ball(&c.lattice, &c.range, radius).unwrap());
    let (u, report) = relax(&c.lattice, c.potential.as_ref(), &c.defect, w, &RelaxOptions::default()).unwrap();
    assert!(report.converged, "relaxation did not converge: {report:?}");
    Relaxed { crystal: c, u }
}

fn solution_decay(r: &Relaxed) -> Outcome {
    let fits = solution_decay_report(&r.u, &r.crystal.lattice, 4.0, HALF_WINDOW);
    let get = |label: &str| -> Option<f64> {
        fits.iter().filter_map(|f| f.as_ref().ok()).find(|f| f.label == label).map(|f| f.exponent)
    };
    let (du, p, d2u) = (get("D1U"), get("D0p1"), get("D2U"));
    let pass = du.is_some_and(|e| (e + 2.0).abs() <= 0.4)
        && p.is_some_and(|e| (e + 2.0).abs() <= 0.4)
        && d2u.is_some_and(|e| e <= -2.6);
    Outcome {
        pass,
        detail: format!(
            "DU {:.3}, p {:.3}, D2U {:.3}",
            du.unwrap_or(f64::NAN),
            p.unwrap_or(f64::NAN),
            d2u.unwrap_or(f64::NAN)
        ),
    }
}

fn residual_bound(r: &Relaxed) -> Outcome {
    let c = &r.crystal;
    let f = residual_f(&r.u, c.potential.as_ref(), &c.defect);
    let mags = f.magnitudes();
    let w = r.u.window();
    let reach = c.range.r1().iter().map(|&z| c.lattice.radius(z)).fold(0.0, f64::max);
    let mut du = vec![0.0; c.potential.dim()];
    let mut pts = Vec::new();
    for site in 0..w.interior_len() {
        // the clamped outer half is excluded, as in the decay fits
        let radius = w.radius(site);
        if radius <= c.defect.core_radius() + reach || radius > HALF_WINDOW {
            continue;
        }
        gather(&r.u, &c.range, site, &mut du);
        let a = du.iter().map(|x| x * x).sum::<f64>().sqrt();
        if a > 1e-10 && mags[site] > 0.0 {
            pts.push((a.ln(), mags[site].ln()));
        }
    }
    let (slope, _, rms) = least_squares(&pts);
    Outcome { pass: slope >= 1.9, detail: format!("slope {slope:.3} over {} sites (rms {rms:.2e})", pts.len()) }
}

fn reconstruction() -> Outcome {
    let c = preset("hex2d-harmonic");
    let dm = Arc::new(c.dynamical_matrix());
    // the relax window grows with the supercell so both error sources shrink together
    let gap = |size: usize| -> (f64, f64) {
        let radius = size as f64 / 4.0;
        let w = Arc::new(LatticeWindow::ball(&c.lattice, &c.range, radius).unwrap());
        let opts = RelaxOptions { tol: 1e-11, ..RelaxOptions::default() };
        let (u, _) = relax(&c.lattice, c.potential.as_ref(), &c.defect, w.clone(), &opts).unwrap();
        let f = residual_f(&u, c.potential.as_ref(), &c.defect);
        let blocks = greens_blocks(&c.lattice, &c.range, dm.clone(), size).unwrap();
        let rec = reconstruct_solution(&f, &blocks).unwrap();
        let half: Vec<usize> = (0..w.interior_len()).filter(|&s| w.radius(s) <= radius / 2.0).collect();
        let (s, n) = (u.species(), u.n());
        let diff = |site: usize, a: usize, i: usize| -> f64 {
            let z = w.site(site);
            let j = rec.field.window().index_of(z).unwrap();
            rec.field.value(j, a, i) - u.value(site, a, i)
        };
        let offset: Vec<f64> =
            (0..n).map(|i| half.iter().map(|&site| diff(site, 0, i)).sum::<f64>() / half.len() as f64).collect();
        let mut sup: f64 = 0.0;
        for &site in &half {
            for a in 0..s {
                for i in 0..n {
                    sup = sup.max((diff(site, a, i) - offset[i]).abs());
                }
            }
        }
        (sup, rec.residual)
    };
    let (g256, r256) = gap(256);
    let (g512, r512) = gap(512);
    Outcome {
        pass: g256 <= 1e-3 && g512 < g256 && r256 <= 1e-8 && r512 <= 1e-8,
        detail: format!("sup gap N=256 {g256:.2e}, N=512 {g512:.2e}, solve residual {:.1e}", r256.max(r512)),
    }
}

/// Extremes of a1/a2, a2/a1, a2/a3, a3/a2 over random compact fields.
fn norm_ratios(c: &Crystal, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Arc::new(LatticeWindow::ball(&c.lattice, &c.range, 6.0).unwrap());
    let mut out = [0.0f64; 4];
    for _ in 0..200 {
        let support = rng.gen_range(1.0..5.0);
        let u = DisplacementField::from_fn(w.clone(), c.lattice.species(), c.lattice.n(), |z, _, _| {
            if c.lattice.radius(z) <= support {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let a1 = norm_a1(&u, &c.range);
        let a2 = norm_a2(&u, &c.lattice);
        let a3 = norm_a3(&u, &c.lattice, 32).unwrap();
        for (slot, r) in out.iter_mut().zip([a1 / a2, a2 / a1, a2 / a3, a3 / a2]) {
            *slot = slot.max(r);
        }
    }
    out
}

fn norm_equivalence() -> Outcome {
    // recorded with the suite seed
    let recorded: [(&str, [f64; 4]); 2] =
        [("square1", [1.855, 0.6375, 0.8188, 1.3396]), ("hex2d", [2.859, 0.4807, 0.9616, 1.1843])];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, bounds) in recorded {
        let c = preset(name);
        let first = norm_ratios(&c, SEED + 11);
        let second = norm_ratios(&c, SEED + 12);
        let ok = first.iter().chain(&second).all(|r| r.is_finite())
            && first.iter().zip(&bounds).all(|(a, b)| *a <= 2.0 * b && *b <= 2.0 * a)
            && second.iter().zip(&bounds).all(|(a, b)| *a <= 2.0 * b && *b <= 2.0 * a);
        pass &= ok;
        parts.push(format!(
            "{name} [{:.4} {:.4} {:.4} {:.4}] reseeded [{:.4} {:.4} {:.4} {:.4}]",
            first[0], first[1], first[2], first[3], second[0], second[1], second[2], second[3]
        ));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn main() {
    // `cargo test` passes harness flags; the only ones honoured are listing
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|v| v.contains(&i));

    type Check = Box<dyn Fn() -> Outcome>;
    let relaxed = std::cell::OnceCell::new();
    let hex = || relaxed.get_or_init(|| relaxed_hex(R_WIN));
    let checks: Vec<(usize, &str, Duration, Check)> = vec![
        (1, "derivative consistency", Duration::from_secs(10), Box::new(derivative_consistency)),
        (2, "real/k-space quadratic form", Duration::from_secs(30), Box::new(fourier_tie)),
        (3, "stability certificate", Duration::from_secs(120), Box::new(stability)),
        (4, "shift-equilibrium identity", Duration::from_secs(20), Box::new(shift_identity)),
        (5, "continuum identity", Duration::from_secs(30), Box::new(continuum_identity)),
        (6, "Cauchy-Born consistency rate", Duration::from_secs(120), Box::new(cb_rate)),
        (7, "Green's block decay", Duration::from_secs(300), Box::new(greens_decay)),
    ];
    let mut failed = 0;
    let mut report = |i: usize, name: &str, limit: Duration, run: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let ok = out.pass && took <= limit;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {i:>2} {}: {name}: {} ({:.1}s of {}s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    for (i, name, limit, run) in &checks {
        if wanted(*i) {
            report(*i, name, *limit, run.as_ref());
        }
    }
    if wanted(8) {
        report(8, "defect solution decay", Duration::from_secs(600), &|| solution_decay(hex()));
    }
    if wanted(9) {
        let r = hex();
        report(9, "quadratic residual bound", Duration::from_secs(60), &|| residual_bound(r));
    }
    if wanted(10) {
        report(10, "reconstruction cross-check", Duration::from_secs(180), &reconstruction);
    }
    if wanted(11) {
        report(11, "norm equivalence", Duration::from_secs(30), &norm_equivalence);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
