use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use multilattice::cauchyborn::{
    cb_consistency, claimant_check, elastic_tensor, reference_deformation, reference_shifts, shift_equilibrium,
    ContinuumSymbol, SmoothFields,
};
use multilattice::energy::differences;
use multilattice::fieldio::{read_binary, write_binary, write_csv};
use multilattice::greens::{
    decay_fit, greens_blocks, least_squares, reconstruct_solution, solution_decay_report, DecayFit,
};
use multilattice::lattice::Topology;
use multilattice::relax::{relax as relax_window, residual_f, RelaxOptions, SolveReport};
use multilattice::spectral::{phonons, predict_exponent, BrillouinGrid, GreensFamily};
use multilattice::{load_crystal, Crystal, DisplacementField, LatticeWindow, PresetRegistry};

use crate::output::{csv_error, csv_writer, emit, Report};
use crate::{BlockChoice, CbArgs, CbCheck, CliError, CliResult, DecayArgs, GreensArgs, PhononArgs, RelaxArgs};
use crate::{StabilityArgs, StudyArgs};

pub fn presets(show: Option<&str>) -> CliResult<()> {
    let reg = PresetRegistry::default();
    match show {
        Some(name) => println!("{}", reg.doc(name)?.to_json()),
        None => reg.names().for_each(|n| println!("{n}")),
    }
    Ok(())
}

fn crystal(spec: &str) -> CliResult<Crystal> {
    let c = load_crystal(spec).map_err(|e| match e {
        multilattice::Error::Io(io) => CliError::Usage(format!("{spec}: {io}")),
        other => other.into(),
    })?;
    info!("loaded {} (d = {}, n = {}, S = {})", c.name, c.lattice.d(), c.lattice.n(), c.lattice.species());
    Ok(c)
}

#[derive(Serialize)]
struct ResidualSummary {
    max: f64,
    /// Log-log slope of `|f|` against `|Du|` between the core and half the window.
    quadratic_slope: Option<f64>,
    sites: usize,
}

fn residual_summary(c: &Crystal, u: &DisplacementField) -> ResidualSummary {
    let f = residual_f(u, c.potential.as_ref(), &c.defect);
    let mags = f.magnitudes();
    let w = u.window();
    let half = window_radius(w) / 2.0;
    let reach = c.range.r1().iter().map(|&rho| c.lattice.radius(rho)).fold(0.0, f64::max);
    let dim = c.range.len() * u.n();
    let du = differences(u, &c.range);
    let pts: Vec<(f64, f64)> = (0..w.interior_len())
        .filter(|&s| w.radius(s) > c.defect.core_radius() + reach && w.radius(s) <= half)
        .filter_map(|s| {
            let d = du[s * dim..(s + 1) * dim].iter().map(|x| x * x).sum::<f64>().sqrt();
            (d > 1e-10 && mags[s] > 0.0).then(|| (d.ln(), mags[s].ln()))
        })
        .collect();
    let quadratic_slope = (pts.len() >= 2).then(|| least_squares(&pts).0);
    ResidualSummary { max: mags.iter().cloned().fold(0.0, f64::max), quadratic_slope, sites: pts.len() }
}

fn window_radius(w: &LatticeWindow) -> f64 {
    match w.topology() {
        Topology::Ball { radius } => radius,
        Topology::Periodic { size } => size as f64,
    }
}

fn relax_opts(tol: f64, max_iter: usize, continuation: usize, grid: usize) -> RelaxOptions {
    RelaxOptions { tol, max_iter, continuation, stability_grid: (grid > 0).then_some(grid), ..RelaxOptions::default() }
}

fn solve(c: &Crystal, radius: f64, opts: &RelaxOptions) -> CliResult<(DisplacementField, SolveReport)> {
    let w = Arc::new(LatticeWindow::ball(&c.lattice, &c.range, radius)?);
    info!("relaxing on {} sites", w.interior_len());
    let out = relax_window(&c.lattice, c.potential.as_ref(), &c.defect, w, opts)?;
    info!("energy {:.6e}, gradient {:.2e}", out.1.energy, out.1.gradient_norm);
    Ok(out)
}

pub fn relax(a: &RelaxArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    let opts = relax_opts(a.tol, a.max_iter, a.continuation, a.stability_grid);
    let (u, report) = solve(&c, a.rwin, &opts)?;
    if let Some(p) = &a.out {
        crate::output::ensure_parent(p)?;
        write_binary(&u, &c.lattice, p)?;
    }
    if let Some(p) = &a.csv {
        crate::output::ensure_parent(p)?;
        write_csv(&u, &c.lattice, p)?;
    }
    let body = json!({
        "rwin": a.rwin,
        "sites": u.window().interior_len(),
        "solve": report,
        "max_displacement": u.max_abs(),
        "residual": residual_summary(&c, &u),
    });
    emit(&Report::new("relax", seed, &c.name, body), a.report.as_deref())?;
    if !report.converged {
        return Err(CliError::Failed(format!("relaxation stopped at gradient norm {:.3e}", report.gradient_norm)));
    }
    Ok(())
}

pub fn phonon(a: &PhononArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    let grid = BrillouinGrid::new(&c.lattice, a.grid)?;
    let spec = phonons(&grid, &c.dynamical_matrix());
    if let Some(p) = &a.out {
        let mut w = csv_writer(p)?;
        let d = c.lattice.d();
        let branches = spec.eigenvalues.first().map_or(0, Vec::len);
        let header: Vec<String> =
            (0..d).map(|i| format!("k{i}")).chain((0..branches).map(|b| format!("lambda{b}"))).collect();
        w.write_record(&header).map_err(csv_error)?;
        for (k, ev) in spec.k.iter().zip(&spec.eigenvalues) {
            let row: Vec<String> = k.iter().chain(ev).map(|x| format!("{x:.12e}")).collect();
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| CliError::Core(e.into()))?;
    }
    let branches = spec.eigenvalues.first().map_or(0, Vec::len);
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..branches)
        .map(|b| {
            spec.eigenvalues
                .iter()
                .map(|ev| ev[b])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)))
        })
        .unzip();
    let body = json!({
        "grid": spec.grid,
        "acoustic_branches": spec.acoustic,
        "branch_min": lo,
        "branch_max": hi,
    });
    emit(&Report::new("phonon", seed, &c.name, body), a.report.as_deref())
}

pub fn stability(a: &StabilityArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    let cert = c.stability(a.grid)?;
    emit(&Report::new("stability", seed, &c.name, &cert), a.out.as_deref())?;
    if !cert.pass {
        let at = cert
            .worst_mode
            .as_ref()
            .map(|m| format!(" (λ = {:.3e} on branch {} at k = {:?})", m.eigenvalue, m.branch, m.k))
            .unwrap_or_default();
        return Err(CliError::Failed(format!("{} is not phonon stable{at}", c.name)));
    }
    Ok(())
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn cb(a: &CbArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    let l = &c.lattice;
    let pot = c.potential.as_ref();
    let body = match a.check {
        CbCheck::Tensor | CbCheck::Claimant => {
            let g = reference_deformation(l);
            let p = shift_equilibrium(l, pot, &g, &reference_shifts(l))?;
            let tensor = elastic_tensor(l, pot, &g, &p)?;
            if let CbCheck::Tensor = a.check {
                json!({
                    "check": "tensor",
                    "shifts": p,
                    "tensor": tensor,
                    "legendre_hadamard_min": tensor.legendre_hadamard_min(),
                    "major_asymmetry": tensor.major_asymmetry(),
                })
            } else {
                let sym = ContinuumSymbol::new(l, pot);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut worst: f64 = 0.0;
                for _ in 0..a.probes {
                    let k = random_vec(&mut rng, l.d());
                    let v = random_vec(&mut rng, l.n());
                    worst = worst.max(claimant_check(&tensor, &sym, &k, &v)?.relgap);
                }
                json!({ "check": "claimant", "probes": a.probes, "max_relgap": worst })
            }
        }
        CbCheck::Consistency => {
            let fields = SmoothFields::bump(l.d(), l.n(), l.species(), a.amplitude);
            let table = cb_consistency(pot, &fields, &a.ladder, a.cells);
            json!({ "check": "consistency", "amplitude": a.amplitude, "cells": a.cells, "table": table })
        }
    };
    emit(&Report::new("cb", seed, &c.name, body), a.out.as_deref())
}

const FAMILIES: [(BlockChoice, GreensFamily, usize); 3] = [
    (BlockChoice::QInv, GreensFamily::QInv, 1),
    (BlockChoice::Coupling, GreensFamily::Coupling, 0),
    (BlockChoice::ShiftFamily, GreensFamily::ShiftFamily, 0),
];

#[derive(Serialize)]
struct Skipped {
    label: String,
    reason: String,
}

fn block_fits(
    c: &Crystal,
    size: usize,
    choice: &[BlockChoice],
    r_min: f64,
    r_max: f64,
) -> CliResult<(Vec<DecayFit>, Vec<Skipped>, f64)> {
    let blocks = greens_blocks(&c.lattice, &c.range, Arc::new(c.dynamical_matrix()), size)?;
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (b, fam, t) in FAMILIES {
        if !choice.contains(&BlockChoice::All) && !choice.contains(&b) {
            continue;
        }
        if c.lattice.species() == 1 && fam != GreensFamily::QInv {
            skipped.push(Skipped { label: format!("{fam:?}"), reason: "no shift sector".into() });
            continue;
        }
        match decay_fit(&blocks, fam, t, r_min, r_max) {
            Ok(mut f) => {
                f.predicted = predict_exponent(fam, t, c.lattice.d()).ok();
                fits.push(f)
            }
            Err(e) => skipped.push(Skipped { label: format!("{fam:?}"), reason: e.to_string() }),
        }
    }
    Ok((fits, skipped, blocks.max_imag))
}

fn write_annuli(path: &std::path::Path, fits: &[DecayFit]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["label", "r", "sup", "log_r", "log_sup"]).map_err(csv_error)?;
    for f in fits {
        for (r, s) in f.radii.iter().zip(&f.sups) {
            w.write_record([f.label.clone(), r.to_string(), s.to_string(), r.ln().to_string(), s.ln().to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| CliError::Core(e.into()))
}

pub fn greens(a: &GreensArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    let r_max = a.r_max.unwrap_or(a.size as f64 / 4.0);
    let (fits, skipped, max_imag) = block_fits(&c, a.size, &a.blocks, a.r_min, r_max)?;
    if let Some(p) = &a.csv {
        write_annuli(p, &fits)?;
    }
    let body = if a.fit {
        json!({ "N": a.size, "max_imag": max_imag, "fits": fits, "skipped": skipped })
    } else {
        let annuli: Vec<Value> =
            fits.iter().map(|f| json!({ "label": f.label, "radii": f.radii, "sups": f.sups })).collect();
        json!({ "N": a.size, "max_imag": max_imag, "annuli": annuli, "skipped": skipped })
    };
    emit(&Report::new("greens", seed, &c.name, body), a.out.as_deref())
}

fn split_fits(all: Vec<Result<DecayFit, String>>, keep: impl Fn(&str) -> bool) -> (Vec<DecayFit>, Vec<Skipped>) {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for r in all {
        match r {
            Ok(f) if keep(&f.label) => fits.push(f),
            Ok(_) => {}
            Err(e) => {
                let (label, reason) = e.split_once(": ").unwrap_or(("", e.as_str()));
                if keep(label) {
                    skipped.push(Skipped { label: label.into(), reason: reason.into() });
                }
            }
        }
    }
    (fits, skipped)
}

fn order_filter(orders: &[usize]) -> impl Fn(&str) -> bool + '_ {
    move |label: &str| {
        let digits: String = label.chars().skip(1).take_while(|c| c.is_ascii_digit()).collect();
        let j: usize = digits.parse().unwrap_or(usize::MAX);
        let rest = &label[1 + digits.len()..];
        if rest == "U" {
            orders.contains(&j)
        } else {
            orders.contains(&(j + 1))
        }
    }
}

pub fn decay(a: &DecayArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    if let Some(bad) = a.orders.iter().find(|&&j| !(1..=3).contains(&j)) {
        return Err(CliError::Usage(format!("difference order {bad} is outside 1..=3")));
    }
    let u = read_binary(&a.field, &c.lattice, &c.range)?;
    let r_max = a.r_max.unwrap_or(window_radius(u.window()) / 2.0);
    let all = solution_decay_report(&u, &c.lattice, a.r_min, r_max);
    let (fits, skipped) = split_fits(all, order_filter(&a.orders));
    let body = json!({ "r_min": a.r_min, "r_max": r_max, "fits": fits, "skipped": skipped });
    emit(&Report::new("decay", seed, &c.name, body), a.out.as_deref())
}

/// Sup of the difference between relaxed and reconstructed fields on the
/// half-window, after removing the mean offset of the displacement.
fn cross_check(c: &Crystal, u: &DisplacementField, size: usize) -> CliResult<Value> {
    let f = residual_f(u, c.potential.as_ref(), &c.defect);
    let blocks = greens_blocks(&c.lattice, &c.range, Arc::new(c.dynamical_matrix()), size)?;
    let rec = reconstruct_solution(&f, &blocks)?;
    let w = u.window();
    let half = window_radius(w) / 2.0;
    let sites: Vec<usize> = (0..w.interior_len()).filter(|&s| w.radius(s) <= half).collect();
    let (s, n) = (u.species(), u.n());
    let diff = |site: usize, a: usize, i: usize| -> CliResult<f64> {
        let z = w.site(site);
        let j = rec
            .field
            .window()
            .index_of(z)
            .ok_or_else(|| CliError::Usage(format!("supercell of order {size} does not cover the relax window")))?;
        Ok(rec.field.value(j, a, i) - u.value(site, a, i))
    };
    let mut offset = vec![0.0; n];
    for (i, o) in offset.iter_mut().enumerate() {
        for &site in &sites {
            *o += diff(site, 0, i)?;
        }
        *o /= sites.len().max(1) as f64;
    }
    let mut sup: f64 = 0.0;
    for &site in &sites {
        for a in 0..s {
            for (i, o) in offset.iter().enumerate() {
                sup = sup.max((diff(site, a, i)? - o).abs());
            }
        }
    }
    Ok(json!({ "N": size, "sup_gap": sup, "offset": offset, "solve_residual": rec.residual }))
}

pub fn study(a: &StudyArgs, seed: u64) -> CliResult<()> {
    let c = crystal(&a.crystal.crystal)?;
    std::fs::create_dir_all(&a.out_dir).map_err(multilattice::Error::from)?;
    let report_path = a.out_dir.join("study_report.json");
    let mut stages = serde_json::Map::new();

    let cert = c.stability(a.grid)?;
    stages.insert("stability".into(), serde_json::to_value(&cert).map_err(multilattice::Error::from)?);
    if !cert.pass {
        emit(&Report::new("study", seed, &c.name, &stages), Some(&report_path))?;
        return Err(CliError::Failed(format!("{} is not phonon stable", c.name)));
    }

    let opts = relax_opts(a.tol, 50, 1, 0);
    let (u, solve_report) = solve(&c, a.rwin, &opts)?;
    write_binary(&u, &c.lattice, &a.out_dir.join("field.bin"))?;
    stages.insert(
        "relax".into(),
        json!({ "rwin": a.rwin, "sites": u.window().interior_len(), "solve": solve_report, "max_displacement": u.max_abs() }),
    );
    stages
        .insert("residual".into(), serde_json::to_value(residual_summary(&c, &u)).map_err(multilattice::Error::from)?);

    let (fits, skipped, max_imag) = block_fits(&c, a.size, &[BlockChoice::All], 8.0, a.size as f64 / 4.0)?;
    stages.insert("greens".into(), json!({ "N": a.size, "max_imag": max_imag, "fits": fits, "skipped": skipped }));

    let (fits, mut skipped) = split_fits(solution_decay_report(&u, &c.lattice, 4.0, a.rwin / 2.0), |_| true);
    if c.defect.is_empty() {
        for s in &mut skipped {
            s.reason = "zero defect, the field vanishes identically".into();
        }
    }
    stages.insert("decay".into(), json!({ "r_min": 4.0, "r_max": a.rwin / 2.0, "fits": fits, "skipped": skipped }));

    if c.potential.is_quadratic() {
        stages.insert("cross_check".into(), cross_check(&c, &u, a.size)?);
    }
    emit(&Report::new("study", seed, &c.name, &stages), Some(&report_path))?;
    info!("wrote {}", report_path.display());
    if !solve_report.converged {
        return Err(CliError::Failed("relaxation did not converge".into()));
    }
    Ok(())
}
