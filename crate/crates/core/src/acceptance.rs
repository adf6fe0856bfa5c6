//! Self-check suite: one runner per advertised guarantee of the toolkit,
//! each reporting pass/fail with the observed value and the accepted band.
//!
//! The `check` subcommand runs all criteria and writes `check.csv`; the
//! integration tests drive the same runners through the binary. Every
//! criterion is computed from scratch with fixed seeds and deterministic
//! solvers, so two runs of the suite produce identical reports.

use crate::cell;
use crate::dns;
use crate::error::Result;
use crate::geometry::{self, BcKind, GridMasks, HoleShape};
use crate::grid::{self, GridDims, ScalarField, VelocityField};
use crate::homogenized::{self, Forcing};
use crate::ops;
use crate::regimes::{self, Regime, ScalingFamily, ScalingKind};
use crate::solver::{self, SolveOpts};
use crate::spectral;
use crate::util;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    /// Position in the suite, 1-based.
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable summary with the measured quantities.
    pub detail: String,
    /// Machine-readable observed value (17 significant digits).
    pub observed: String,
    /// The accepted band the observation is judged against.
    pub expected: String,
    pub seconds: f64,
}

/// Identity permeability, embedded in the fixed 3×3 storage.
fn eye(dim: usize) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate().take(dim) {
        row[i] = 1.0;
    }
    a
}

/// Wrap a criterion body with timing, error capture, and budget enforcement.
fn report(
    index: usize,
    name: &'static str,
    expected: &str,
    budget_seconds: Option<f64>,
    body: impl FnOnce() -> Result<(bool, String, String)>,
) -> CriterionReport {
    let start = Instant::now();
    let outcome = body();
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail, observed) = match outcome {
        Ok(t) => t,
        Err(e) => (false, format!("failed to run: {e}"), "error".to_string()),
    };
    if let Some(budget) = budget_seconds {
        if seconds > budget {
            passed = false;
            detail.push_str(&format!("; runtime {seconds:.1}s exceeded the {budget:.0}s budget"));
        }
    }
    CriterionReport {
        index,
        name,
        passed,
        detail,
        observed,
        expected: expected.to_string(),
        seconds,
    }
}

/// max/min of a list of positive numbers (the "band factor").
fn band(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

// ---------------------------------------------------------------------------
// Criterion bodies.
// ---------------------------------------------------------------------------

/// 1. The derived scales satisfy `sigma · c_eta = epsilon` to a few ulp.
fn scaling_identity() -> Result<(bool, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let mut worst = 0u64;
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=4usize);
        let epsilon = 10f64.powf(rng.gen_range(-6.0..0.0));
        let a_eps = epsilon * 10f64.powf(rng.gen_range(-6.0..-0.01));
        let params = regimes::derive_params(dim, epsilon, a_eps)?;
        let d = util::ulp_distance(params.sigma * params.c_eta, epsilon);
        worst = worst.max(d);
    }
    Ok((
        worst <= 4,
        format!("worst product error over 1000 random triples: {worst} ulp"),
        format!("{worst}"),
    ))
}

/// 2. The regime classifier decides all reference cases correctly.
fn regime_classifier() -> Result<(bool, String, String)> {
    enum Want {
        Small,
        Large,
        Critical(f64),
        Unsupported,
    }
    let cases: Vec<(usize, ScalingKind, Want)> = vec![
        (3, ScalingKind::PowerLaw { coeff: 1.0, gamma: 3.0 }, Want::Critical(1.0)),
        (3, ScalingKind::PowerLaw { coeff: 1.0, gamma: 1.0 }, Want::Large),
        (2, ScalingKind::LogCritical { sigma_star: 2.0 }, Want::Critical(2.0)),
        (2, ScalingKind::PowerLaw { coeff: 0.2, gamma: 1.0 }, Want::Large),
        (3, ScalingKind::PowerLaw { coeff: 2.0, gamma: 4.0 }, Want::Small),
        (3, ScalingKind::PowerLaw { coeff: 0.5, gamma: 2.0 }, Want::Large),
        (4, ScalingKind::PowerLaw { coeff: 1.0, gamma: 2.0 }, Want::Critical(1.0)),
        (2, ScalingKind::PowerLaw { coeff: 0.5, gamma: 3.0 }, Want::Large),
        (3, ScalingKind::LogCritical { sigma_star: 1.0 }, Want::Unsupported),
    ];
    let total = cases.len();
    let mut wrong = Vec::new();
    for (i, (dim, kind, want)) in cases.into_iter().enumerate() {
        let got = ScalingFamily::new(dim, kind).and_then(|f| regimes::classify(&f));
        let ok = match (&want, &got) {
            (Want::Small, Ok(Regime::SmallHoles)) => true,
            (Want::Large, Ok(Regime::LargeHoles)) => true,
            (Want::Critical(s), Ok(Regime::Critical { sigma_star })) => {
                (sigma_star - s).abs() <= 1e-12 * s.abs()
            }
            (Want::Unsupported, Err(crate::Error::UnsupportedFamily(_))) => true,
            _ => false,
        };
        if !ok {
            wrong.push(format!("case {}: got {got:?}", i + 1));
        }
    }
    let passed = wrong.is_empty();
    let detail = if passed {
        format!("all {total} reference cases classified correctly")
    } else {
        wrong.join("; ")
    };
    Ok((passed, detail, format!("{} correct", total - wrong.len())))
}

/// 3. Discrete calculus: div/grad adjointness, Laplacian symmetry, and the
/// spectral inverse divergence hitting its target pointwise.
fn discrete_calculus() -> Result<(bool, String, String)> {
    let mut worst_adj = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_div = 0.0f64;
    for dim in [2usize, 3] {
        let cell = geometry::build_cell(dim, 0.25, HoleShape::Ball { r: 0.5 }, 0.3125)?;
        let masks = Arc::new(geometry::rasterize_cell(&cell, 32, BcKind::Periodic)?);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003 + dim as u64);
        let len = masks.dims.len();

        let mut u = VelocityField::zeros(&masks);
        let mut v = VelocityField::zeros(&masks);
        for comp in 0..dim {
            for idx in 0..len {
                if masks.face_fluid[comp][idx] {
                    u.comps[comp][idx] = rng.gen_range(-1.0..1.0);
                    v.comps[comp][idx] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut p = ScalarField::zeros(&masks);
        for idx in 0..len {
            if masks.cell_fluid[idx] {
                p.data[idx] = rng.gen_range(-1.0..1.0);
            }
        }

        // ⟨div u, p⟩ = −⟨u, ∇p⟩, relative to the product of the norms.
        let lhs = grid::dot(&ops::divergence(&u).data, &p.data);
        let rhs = -grid::vel_dot(&u, &ops::gradient(&p));
        let nu = grid::vel_dot(&u, &u).sqrt();
        let np = grid::dot(&p.data, &p.data).sqrt();
        worst_adj = worst_adj.max((lhs - rhs).abs() / (nu * np));

        // ⟨−Δu, v⟩ = ⟨u, −Δv⟩.
        let mut lu = VelocityField::zeros(&masks);
        let mut lv = VelocityField::zeros(&masks);
        ops::neg_laplacian(&u, &mut lu);
        ops::neg_laplacian(&v, &mut lv);
        let s1 = grid::vel_dot(&lu, &v);
        let s2 = grid::vel_dot(&u, &lv);
        let nv = grid::vel_dot(&v, &v).sqrt();
        let nlu = grid::vel_dot(&lu, &lu).sqrt();
        let nlv = grid::vel_dot(&lv, &lv).sqrt();
        worst_sym = worst_sym.max((s1 - s2).abs() / (nlu * nv + nu * nlv));

        // Spectral inverse divergence on the full torus: div ũ = f pointwise.
        let full = Arc::new(GridMasks::unmasked(GridDims::new(dim, 32), BcKind::Periodic));
        let mut f = ScalarField::zeros(&full);
        for val in f.data.iter_mut() {
            *val = rng.gen_range(-1.0..1.0);
        }
        let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
        let mut finf = 0.0f64;
        for val in f.data.iter_mut() {
            *val -= mean;
            finf = finf.max(val.abs());
        }
        let (ut, _) = spectral::inverse_divergence(&f)?;
        let div = ops::divergence(&ut);
        let mut dinf = 0.0f64;
        for (a, b) in div.data.iter().zip(&f.data) {
            dinf = dinf.max((a - b).abs());
        }
        worst_div = worst_div.max(dinf / finf);
    }
    let passed = worst_adj <= 1e-12 && worst_sym <= 1e-12 && worst_div <= 1e-10;
    Ok((
        passed,
        format!(
            "adjointness {worst_adj:.3e}, symmetry {worst_sym:.3e}, inverse-divergence residual {worst_div:.3e}"
        ),
        format!("{},{},{}", util::fmt_f64(worst_adj), util::fmt_f64(worst_sym), util::fmt_f64(worst_div)),
    ))
}

/// 4. The Krylov solver agrees with a dense factorization of the identical
/// discrete system on a coarse cell problem.
fn dense_oracle() -> Result<(bool, String, String)> {
    let cell = geometry::build_cell(2, 0.25, HoleShape::Ball { r: 0.5 }, 0.3125)?;
    let masks = Arc::new(geometry::rasterize_cell(&cell, 16, BcKind::Periodic)?);
    let c = regimes::c_eta(2, 0.25);
    let f = VelocityField::from_fn(&masks, |comp, _| if comp == 0 { c * c } else { 0.0 });
    let (ud, _) = solver::dense_reference(&masks, &f)?;
    let opts = SolveOpts::with_tol(1e-10);
    let (u, _, _) = solver::solve_saddle(&masks, None, &f, &opts)?;
    let mut diff = u.clone();
    for comp in 0..2 {
        for (a, b) in diff.comps[comp].iter_mut().zip(&ud.comps[comp]) {
            *a -= b;
        }
    }
    let rel = grid::vel_dot(&diff, &diff).sqrt() / grid::vel_dot(&ud, &ud).sqrt();
    Ok((
        rel <= 1e-8,
        format!("iterative vs dense relative L2 difference {rel:.3e}"),
        util::fmt_f64(rel),
    ))
}

/// 5. The energy and velocity-average permeability evaluations agree under
/// refinement. Returns the tensors for the health checks of criterion 6.
#[allow(clippy::type_complexity)]
fn permeability_agreement(
    opts: &SolveOpts,
) -> Result<(bool, String, String, Vec<(String, [[f64; 3]; 3])>)> {
    let eta = 0.25;
    let cell = geometry::build_cell(2, eta, HoleShape::Ball { r: 0.5 }, cell::delta3_for(2, &HoleShape::Ball { r: 0.5 }, eta))?;
    let mut diffs = Vec::new();
    let mut tensors = Vec::new();
    let mut a11_last = 0.0;
    for n in [64usize, 128, 256] {
        let sol = cell::solve_cell(&cell, n, false, opts)?;
        let ae = cell::permeability_energy(&sol);
        let aa = cell::permeability_average(&sol);
        let mut d = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((ae[i][j] - aa[i][j]).abs());
            }
        }
        diffs.push(d);
        a11_last = ae[0][0];
        tensors.push((format!("energy eta=0.25 N={n}"), ae));
        tensors.push((format!("average eta=0.25 N={n}"), aa));
    }
    let passed = strictly_decreasing(&diffs) && diffs[2] <= 0.02 * a11_last;
    let detail = format!(
        "two-formula gap over N 64/128/256: {:.3e} / {:.3e} / {:.3e} (A11 {:.4e})",
        diffs[0], diffs[1], diffs[2], a11_last
    );
    let observed = diffs.iter().map(|d| util::fmt_f64(*d)).collect::<Vec<_>>().join(",");
    Ok((passed, detail, observed, tensors))
}

/// 6. Every computed permeability tensor is symmetric, positive
/// semi-definite, and respects the disk-hole isotropy bands.
fn tensor_health(tensors: &[(String, [[f64; 3]; 3])]) -> Result<(bool, String, String)> {
    if tensors.is_empty() {
        return Ok((false, "no tensors were computed".into(), "0 tensors".into()));
    }
    let mut failures = Vec::new();
    let mut worst_asym = 0.0f64;
    let mut worst_eig = 0.0f64;
    for (ctx, a) in tensors {
        let dim = 2;
        let a11 = a[0][0];
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                asym = asym.max((a[i][j] - a[j][i]).abs());
            }
        }
        worst_asym = worst_asym.max(asym / a11);
        if asym > 1e-8 * a11 {
            failures.push(format!("{ctx}: asymmetry {asym:.3e}"));
        }
        // Smallest eigenvalue of the symmetrized 2×2 block.
        let b = 0.5 * (a[0][1] + a[1][0]);
        let mid = 0.5 * (a[0][0] + a[1][1]);
        let rad = ((0.5 * (a[0][0] - a[1][1])).powi(2) + b * b).sqrt();
        let eig_min = mid - rad;
        let trace = a[0][0] + a[1][1];
        worst_eig = worst_eig.min(eig_min / trace);
        if eig_min < -1e-10 * trace {
            failures.push(format!("{ctx}: eigenvalue {eig_min:.3e}"));
        }
        if a[0][1].abs() > 1e-3 * a11 {
            failures.push(format!("{ctx}: off-diagonal {:.3e}", a[0][1]));
        }
        if (a[0][0] - a[1][1]).abs() > 0.005 * a11 {
            failures.push(format!("{ctx}: anisotropy {:.3e}", (a[0][0] - a[1][1]).abs()));
        }
    }
    let passed = failures.is_empty();
    let detail = if passed {
        format!(
            "{} tensors healthy; worst relative asymmetry {worst_asym:.3e}",
            tensors.len()
        )
    } else {
        failures.join("; ")
    };
    Ok((passed, detail, format!("{} tensors", tensors.len())))
}

/// 7. The extrapolated two-dimensional permeability limit against the
/// inverse of the continuum drag tensor.
fn permeability_limit(rows: &[cell::SweepRow]) -> Result<(bool, String, String)> {
    let est = cell::extrapolate_limit(2, rows)?;
    let target = 1.0 / std::f64::consts::PI;
    let rel = (est.intercept - target).abs() / target;
    let a11s: Vec<String> = rows.iter().map(|r| format!("{:.4e}", r.a11_energy)).collect();
    Ok((
        rel <= 0.10,
        format!(
            "extrapolated A11 {} (slope {:.3e}), {:.1}% from the target {target:.5}; sweep A11 {}",
            util::fmt_f64(est.intercept),
            est.slope,
            100.0 * rel,
            a11s.join(" / ")
        ),
        util::fmt_f64(est.intercept),
    ))
}

/// 8. Scaling bands over the sweep: the normalized solution norms and the
/// Poincaré constant stay within constant factors.
fn scaling_bands(rows: &[cell::SweepRow]) -> Result<(bool, String, String)> {
    let grad = band(rows.iter().map(|r| r.norm_gradw / r.c_eta));
    let q = band(rows.iter().map(|r| r.norm_q / r.c_eta));
    let w = band(rows.iter().map(|r| r.norm_w));
    let poin = band(rows.iter().map(|r| r.poincare * r.c_eta));
    let passed = grad <= 3.0 && q <= 3.0 && w <= 3.0 && poin <= 4.0;
    Ok((
        passed,
        format!(
            "band factors: gradient {grad:.3}, pressure {q:.3}, velocity {w:.3}, Poincaré {poin:.3}"
        ),
        format!(
            "{},{},{},{}",
            util::fmt_f64(grad),
            util::fmt_f64(q),
            util::fmt_f64(w),
            util::fmt_f64(poin)
        ),
    ))
}

/// 9. Degenerate effective-model cases that have closed-form solutions.
fn exact_limit_cases(opts: &SolveOpts) -> Result<(bool, String, String)> {
    let tol = opts.tol;
    // Darcy, constant force, identity permeability: no flow, linear pressure.
    let darcy = homogenized::solve_darcy(2, 64, &eye(2), &Forcing::Constant([1.0, 0.0, 0.0]), opts)?;
    let nu_darcy = ops::l2_norm_vel(&darcy.u);
    let expected_p = ScalarField::from_fn(&darcy.masks, |x| x[0] - 0.5);
    let mut perr = 0.0f64;
    for (a, b) in darcy.p.data.iter().zip(&expected_p.data) {
        perr = perr.max((a - b).abs());
    }
    let pressure_band = 10.0 / (64.0 * 64.0);

    // Stokes and Brinkman under gradient forcing: hydrostatic, no flow.
    let phi = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos() / (2.0 * std::f64::consts::PI);
    let grad_force = Forcing::Potential(Arc::new(phi));
    let stokes = homogenized::solve_stokes(2, 32, &grad_force, opts)?;
    let brinkman = homogenized::solve_brinkman(2, 32, &eye(2), 1.0, &grad_force, opts)?;
    let nu_stokes = ops::l2_norm_vel(&stokes.u);
    let nu_brinkman = ops::l2_norm_vel(&brinkman.u);

    let passed = nu_darcy <= 10.0 * tol
        && perr <= pressure_band
        && nu_stokes <= 10.0 * tol
        && nu_brinkman <= 10.0 * tol;
    Ok((
        passed,
        format!(
            "Darcy |u| {nu_darcy:.3e}, pressure error {perr:.3e}; hydrostatic |u| Stokes {nu_stokes:.3e} / Brinkman {nu_brinkman:.3e}"
        ),
        format!(
            "{},{},{},{}",
            util::fmt_f64(nu_darcy),
            util::fmt_f64(perr),
            util::fmt_f64(nu_stokes),
            util::fmt_f64(nu_brinkman)
        ),
    ))
}

/// 10. Brinkman bridges its endpoints: it approaches Stokes as the critical
/// scale grows and its flow is monotone in that scale.
fn brinkman_endpoints(opts: &SolveOpts) -> Result<(bool, String, String)> {
    let n = 64;
    let a = {
        let mut a = [[0.0; 3]; 3];
        a[0][0] = 1.0 / std::f64::consts::PI;
        a[1][1] = a[0][0];
        a
    };
    let stokes = homogenized::solve_stokes(2, n, &Forcing::SinShear, opts)?;
    let ns = ops::l2_norm_vel(&stokes.u);
    let mut rels = Vec::new();
    for sigma in [10.0, 100.0, 1000.0] {
        let b = homogenized::solve_brinkman(2, n, &a, sigma, &Forcing::SinShear, opts)?;
        let mut diff = b.u.clone();
        for comp in 0..2 {
            for (x, y) in diff.comps[comp].iter_mut().zip(&stokes.u.comps[comp]) {
                *x -= y;
            }
        }
        rels.push(ops::l2_norm_vel(&diff) / ns);
    }
    let mut norms = Vec::new();
    for sigma in [0.1, 1.0, 10.0] {
        let b = homogenized::solve_brinkman(2, n, &a, sigma, &Forcing::SinShear, opts)?;
        norms.push(ops::l2_norm_vel(&b.u));
    }
    let increasing = norms.windows(2).all(|w| w[1] > w[0]);
    let passed = strictly_decreasing(&rels) && rels[1] <= 0.02 && increasing;
    Ok((
        passed,
        format!(
            "distance to Stokes at sigma* 10/100/1000: {:.3e} / {:.3e} / {:.3e}; |u| at 0.1/1/10: {:.3e} / {:.3e} / {:.3e}",
            rels[0], rels[1], rels[2], norms[0], norms[1], norms[2]
        ),
        rels.iter().map(|r| util::fmt_f64(*r)).collect::<Vec<_>>().join(","),
    ))
}

/// 11. The direct solve satisfies the energy identity and extends by zero.
fn energy_identity(opts: &SolveOpts) -> Result<(bool, String, String)> {
    let sol = dns::solve_dns(2, 0.25, 0.1, HoleShape::Ball { r: 0.5 }, 64, &Forcing::SinShear, opts)?;
    let masks = &sol.masks;
    let h = 1.0 / masks.dims.n as f64;
    let hd = h * h;
    let f = Forcing::SinShear.realize(masks)?;
    let energy = ops::h1_seminorm(&sol.u).powi(2);
    let work = grid::vel_dot(&f, &sol.u) * hd;
    let gap = (energy - work).abs() / energy.max(work).max(1.0);

    // Extension by zero: solid faces vanish exactly, so the norm over the
    // whole box equals the norm over the fluid faces bit for bit.
    let mut solid_max = 0.0f64;
    let mut sum_all = 0.0f64;
    let mut sum_fluid = 0.0f64;
    for comp in 0..2 {
        for idx in 0..masks.dims.len() {
            let v = sol.u.comps[comp][idx];
            sum_all += v * v;
            if masks.face_fluid[comp][idx] {
                sum_fluid += v * v;
            } else {
                solid_max = solid_max.max(v.abs());
            }
        }
    }
    let extension_exact = solid_max == 0.0 && sum_all == sum_fluid;
    let passed = gap <= 100.0 * opts.tol && extension_exact;
    Ok((
        passed,
        format!(
            "energy/work gap {gap:.3e}; solid-face maximum {solid_max:.1e}; box and fluid norms {}",
            if extension_exact { "identical" } else { "differ" }
        ),
        util::fmt_f64(gap),
    ))
}

/// 12. In the large-hole regime the rescaled coarse-grained flow approaches
/// the Darcy prediction as the spacing shrinks, with the perforated Poincaré
/// ratios stable across the sweep.
fn darcy_trend(opts: &SolveOpts) -> Result<(bool, String, String)> {
    let family = ScalingFamily::new(
        2,
        ScalingKind::PowerLaw { coeff: 0.2, gamma: 1.0 },
    )?;
    // The asserted quantities are O(10⁻¹) comparison errors; solving the
    // refinement ladder two orders past 1e-6 only burns the runtime budget.
    // A user-supplied looser tolerance is honored as-is.
    let local = SolveOpts {
        tol: opts.tol.max(1e-6),
        ..opts.clone()
    };
    let rows = dns::compare_regime(
        &family,
        &HoleShape::Ball { r: 0.5 },
        &Forcing::SinShear,
        &[0.125, 0.0625, 0.03125],
        None,
        dns::DEFAULT_WINDOW_FACTOR,
        &local,
    )?;
    let v: Vec<f64> = rows.iter().map(|r| r.rel_l2_velocity).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.rel_l2_pressure).collect();
    let r1 = band(rows.iter().map(|r| r.norm_u / r.norm_gradu / r.sigma));
    let r2 = band(rows.iter().map(|r| r.norm_gradu / r.sigma));
    let r3 = band(rows.iter().map(|r| r.norm_u / (r.sigma * r.sigma)));
    // The velocity trend must be strict; the pressure trend (no rate is
    // available for it) must not increase.
    let passed = strictly_decreasing(&v)
        && v[2] <= 0.35
        && p.windows(2).all(|w| w[1] <= w[0])
        && r1 <= 3.0
        && r2 <= 3.0
        && r3 <= 3.0;
    Ok((
        passed,
        format!(
            "velocity error over eps 1/8, 1/16, 1/32: {:.3e} / {:.3e} / {:.3e}; pressure {:.3e} / {:.3e} / {:.3e}; Poincaré bands {r1:.2} / {r2:.2} / {r3:.2}",
            v[0], v[1], v[2], p[0], p[1], p[2]
        ),
        v.iter().map(|x| util::fmt_f64(*x)).collect::<Vec<_>>().join(","),
    ))
}

/// 13. Tiling the periodic cell solution across the box and coarse-graining
/// recovers its mean: the weak limit of the oscillating corrector.
fn tiled_cell_limit(opts: &SolveOpts) -> Result<(bool, String, String)> {
    let eta = 0.2;
    let shape = HoleShape::Ball { r: 0.5 };
    let cell_geom = geometry::build_cell(2, eta, shape.clone(), cell::delta3_for(2, &shape, eta))?;
    let n = cell::n_for_eta(shape.delta1(), eta);
    let sol = cell::solve_cell(&cell_geom, n, false, opts)?;
    let w = &sol.w[0];
    let len = w.masks.dims.len();
    let mut mean = [0.0f64; 2];
    for comp in 0..2 {
        mean[comp] = w.comps[comp].iter().sum::<f64>() / len as f64;
    }
    let mean_scale = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();

    let mut errors = Vec::new();
    for m in [4usize, 8, 16] {
        let epsilon = 1.0 / m as f64;
        let (_tiled_masks, tiled) = cell::tile_velocity(w, m)?;
        let coarse = dns::coarse_grain(&tiled, 0.25, epsilon)?;
        let vol = coarse.window.powi(2);
        let mut sq = 0.0f64;
        for comp in 0..2 {
            for &v in &coarse.comps[comp] {
                sq += (v - mean[comp]) * (v - mean[comp]) * vol;
            }
        }
        errors.push(sq.sqrt() / mean_scale);
    }
    let passed = errors.iter().all(|&e| e <= 1e-12) || strictly_decreasing(&errors);
    Ok((
        passed,
        format!(
            "relative deviation from the cell mean over eps 1/4, 1/8, 1/16: {:.3e} / {:.3e} / {:.3e}",
            errors[0], errors[1], errors[2]
        ),
        errors.iter().map(|e| util::fmt_f64(*e)).collect::<Vec<_>>().join(","),
    ))
}

/// 14. Re-running an artifact-producing subcommand with the same resolved
/// configuration reproduces its CSVs byte for byte.
fn determinism(scratch: &Path) -> Result<(bool, String, String)> {
    let run = |args: &[&str]| -> Result<()> {
        match std::env::current_exe() {
            Ok(exe) => {
                let out = std::process::Command::new(exe)
                    .args(args)
                    .output()
                    .map_err(crate::Error::Io)?;
                if !out.status.success() {
                    return Err(crate::Error::Config(format!(
                        "rerun exited with {:?}: {}",
                        out.status.code(),
                        String::from_utf8_lossy(&out.stderr)
                    )));
                }
                Ok(())
            }
            Err(_) => {
                let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
                if crate::cli::run_main(&owned) != 0 {
                    return Err(crate::Error::Config("in-process rerun failed".into()));
                }
                Ok(())
            }
        }
    };
    let read = |dir: &Path, names: &[&str]| -> Result<Vec<Vec<u8>>> {
        names
            .iter()
            .map(|n| std::fs::read(dir.join(n)).map_err(crate::Error::Io))
            .collect()
    };

    let sweep_dir = scratch.join("det_sweep");
    let sweep_args: Vec<String> = vec![
        "sweep".into(),
        "--dim".into(),
        "2".into(),
        "--hole".into(),
        "disk:0.5".into(),
        "--etas".into(),
        "0.2,0.1".into(),
        "--out".into(),
        sweep_dir.to_string_lossy().into_owned(),
    ];
    let sweep_refs: Vec<&str> = sweep_args.iter().map(|s| s.as_str()).collect();
    run(&sweep_refs)?;
    let first = read(&sweep_dir, &["sweep.csv", "run.csv", "manifest.txt"])?;
    run(&sweep_refs)?;
    let second = read(&sweep_dir, &["sweep.csv", "run.csv", "manifest.txt"])?;
    let sweep_identical = first == second;

    let cmp_dir = scratch.join("det_compare");
    let cmp_args: Vec<String> = vec![
        "compare".into(),
        "--dim".into(),
        "2".into(),
        "--family".into(),
        "powerlaw:0.3,1".into(),
        "--eps".into(),
        "1/4".into(),
        "--n-cap".into(),
        "64".into(),
        "--out".into(),
        cmp_dir.to_string_lossy().into_owned(),
    ];
    let cmp_refs: Vec<&str> = cmp_args.iter().map(|s| s.as_str()).collect();
    run(&cmp_refs)?;
    let first = read(&cmp_dir, &["comparison.csv", "run.csv", "manifest.txt"])?;
    run(&cmp_refs)?;
    let second = read(&cmp_dir, &["comparison.csv", "run.csv", "manifest.txt"])?;
    let cmp_identical = first == second;

    let passed = sweep_identical && cmp_identical;
    Ok((
        passed,
        format!(
            "sweep rerun {}, comparison rerun {}",
            if sweep_identical { "identical" } else { "differs" },
            if cmp_identical { "identical" } else { "differs" }
        ),
        format!("{}", u8::from(passed)),
    ))
}

/// Run the whole suite. `scratch` receives the rerun artifacts of the
/// determinism criterion; solver settings come from `opts`.
pub fn run_all(scratch: &Path, opts: &SolveOpts) -> Vec<CriterionReport> {
    let mut reports = Vec::with_capacity(14);

    reports.push(report(1, "scaling-identity", "<= 4 ulp", Some(1.0), scaling_identity));
    reports.push(report(2, "regime-classifier", "9 of 9 correct", Some(1.0), regime_classifier));
    reports.push(report(
        3,
        "discrete-calculus",
        "adjointness/symmetry <= 1e-12, inverse divergence <= 1e-10",
        Some(10.0),
        discrete_calculus,
    ));
    reports.push(report(4, "dense-oracle", "relative L2 <= 1e-8", Some(30.0), dense_oracle));

    // Criterion 5 feeds its tensors into criterion 6; the sweep of
    // criterion 7 feeds criteria 6 and 8.
    let mut tensors: Vec<(String, [[f64; 3]; 3])> = Vec::new();
    let start5 = Instant::now();
    let five = permeability_agreement(opts);
    let secs5 = start5.elapsed().as_secs_f64();
    reports.push(match five {
        Ok((passed, detail, observed, t)) => {
            tensors.extend(t);
            let mut r = CriterionReport {
                index: 5,
                name: "permeability-agreement",
                passed,
                detail,
                observed,
                expected: "gap decreasing, <= 2% of A11 at N=256".to_string(),
                seconds: secs5,
            };
            if secs5 > 300.0 {
                r.passed = false;
                r.detail.push_str(&format!("; runtime {secs5:.1}s exceeded the 300s budget"));
            }
            r
        }
        Err(e) => CriterionReport {
            index: 5,
            name: "permeability-agreement",
            passed: false,
            detail: format!("failed to run: {e}"),
            observed: "error".to_string(),
            expected: "gap decreasing, <= 2% of A11 at N=256".to_string(),
            seconds: secs5,
        },
    });

    let start7 = Instant::now();
    let sweep = cell::sweep_eta(2, &HoleShape::Ball { r: 0.5 }, &cell::DEFAULT_ETAS, opts);
    let sweep_seconds = start7.elapsed().as_secs_f64();
    if let Ok(rows) = &sweep {
        for r in rows {
            tensors.push((format!("energy eta={}", r.eta), r.a_energy));
            tensors.push((format!("average eta={}", r.eta), r.a_avg));
        }
    }

    reports.push(report(
        6,
        "tensor-health",
        "symmetric, PSD, isotropic within bands",
        None,
        || tensor_health(&tensors),
    ));

    let mut c7 = match &sweep {
        Ok(rows) => report(7, "permeability-limit", "within 10% of 1/pi", None, || {
            permeability_limit(rows)
        }),
        Err(e) => CriterionReport {
            index: 7,
            name: "permeability-limit",
            passed: false,
            detail: format!("sweep failed: {e}"),
            observed: "error".to_string(),
            expected: "within 10% of 1/pi".to_string(),
            seconds: 0.0,
        },
    };
    // The sweep itself is this criterion's work; charge its time here and
    // enforce the budget on the total.
    c7.seconds += sweep_seconds;
    if c7.seconds > 1800.0 {
        c7.passed = false;
        c7.detail
            .push_str(&format!("; runtime {:.1}s exceeded the 1800s budget", c7.seconds));
    }
    reports.push(c7);

    reports.push(match &sweep {
        Ok(rows) => report(
            8,
            "scaling-bands",
            "gradient/pressure/velocity <= 3, Poincaré <= 4",
            None,
            || scaling_bands(rows),
        ),
        Err(e) => CriterionReport {
            index: 8,
            name: "scaling-bands",
            passed: false,
            detail: format!("sweep failed: {e}"),
            observed: "error".to_string(),
            expected: "gradient/pressure/velocity <= 3, Poincaré <= 4".to_string(),
            seconds: 0.0,
        },
    });

    reports.push(report(
        9,
        "exact-limit-cases",
        "|u| <= 10 tol, pressure error O(1/N^2)",
        Some(60.0),
        || exact_limit_cases(opts),
    ));
    reports.push(report(
        10,
        "brinkman-endpoints",
        "distance to Stokes decreasing, <= 2% at sigma*=100; |u| increasing",
        Some(300.0),
        || brinkman_endpoints(opts),
    ));
    reports.push(report(
        11,
        "energy-identity",
        "energy = work to solver tolerance; extension exact",
        None,
        || energy_identity(opts),
    ));
    reports.push(report(
        12,
        "darcy-trend",
        "velocity error decreasing, <= 35% at eps=1/32; bands <= 3",
        Some(1800.0),
        || darcy_trend(opts),
    ));
    reports.push(report(
        13,
        "tiled-cell-limit",
        "deviation <= 1e-12 or strictly decreasing",
        Some(300.0),
        || tiled_cell_limit(opts),
    ));
    reports.push(report(
        14,
        "determinism",
        "reruns byte-identical",
        None,
        || determinism(scratch),
    ));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_and_monotonicity_helpers_behave() {
        assert!((band([1.0, 2.0, 4.0]) - 4.0).abs() < 1e-15);
        assert!((band([3.0]) - 1.0).abs() < 1e-15);
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0, 1.0]));
    }

    #[test]
    fn cheap_criteria_pass() {
        let (ok, detail, _) = scaling_identity().unwrap();
        assert!(ok, "{detail}");
        let (ok, detail, _) = regime_classifier().unwrap();
        assert!(ok, "{detail}");
        let (ok, detail, _) = discrete_calculus().unwrap();
        assert!(ok, "{detail}");
        let (ok, detail, _) = dense_oracle().unwrap();
        assert!(ok, "{detail}");
    }
}
