//! Iterative solvers: a preconditioned conjugate-residual core, the
//! pressure-Schur (Uzawa) saddle-point solver, and an inverse-power smallest
//! eigenvalue estimator.
//!
//! The Krylov core is conjugate residual rather than conjugate gradient: for
//! symmetric positive definite systems it minimizes the preconditioned
//! residual norm over the Krylov space, which makes that norm non-increasing
//! across iterations — a property the tests assert. Everything runs with a
//! zero initial guess, sequential reductions, and no randomness, so repeated
//! solves are bitwise identical.
//!
//! The saddle solver eliminates velocity: with momentum operator `A` (the
//! masked `−Δ` plus an optional zeroth-order term), gradient `G`, and
//! divergence `D = −Gᵀ`, the pressure satisfies `(−D A⁻¹ G) p = −D A⁻¹ f`,
//! a symmetric positive definite system on zero-mean pressures over a
//! connected fluid region. The outer residual of that system *is* the
//! divergence of the implied velocity, so the outer loop stops on the mass
//! defect directly; momentum accuracy is controlled by the inner tolerance
//! and both relative residuals are re-verified (and the tolerances tightened,
//! up to three rounds) before a solve is declared converged.

use crate::error::{Error, Result};
use crate::geometry::{BcKind, GridMasks};
use crate::grid::{ScalarField, VelocityField};
use crate::ops;
use crate::spectral::PoissonPrecond;
use std::sync::Arc;
use std::time::Instant;

/// Solver configuration shared by the saddle and eigenvalue drivers.
#[derive(Debug, Clone)]
pub struct SolveOpts {
    /// Relative residual target for both equations.
    pub tol: f64,
    /// Cap on outer (pressure) iterations summed over verification rounds.
    pub max_outer: usize,
    /// Inner momentum solves run at `inner_factor * tol` relative accuracy.
    pub inner_factor: f64,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            tol: 1e-8,
            max_outer: 600,
            inner_factor: 0.01,
        }
    }
}

impl SolveOpts {
    pub fn with_tol(tol: f64) -> Self {
        SolveOpts {
            tol,
            ..Default::default()
        }
    }
}

/// Outcome of one solve, echoed into run logs.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Outer (pressure) iterations; for plain CG solves, total iterations.
    pub iterations: usize,
    /// Inner momentum iterations accumulated over the whole solve.
    pub inner_iterations: usize,
    /// Final relative residual (the worse of momentum and continuity).
    pub residual: f64,
    pub residual_momentum: f64,
    pub residual_divergence: f64,
    pub tol: f64,
    /// Whether every Krylov run kept its preconditioned residual monotone.
    pub residual_monotone: bool,
    pub seconds: f64,
}

/// Result of one conjugate-residual run.
pub struct KrylovOutcome {
    pub iterations: usize,
    /// Final unpreconditioned `‖r‖₂`.
    pub residual: f64,
    pub converged: bool,
    /// Preconditioned residual norm never increased (up to round-off slack).
    pub monotone: bool,
}

/// Preconditioned conjugate residual for SPD `A` and SPD `M`, on flat arrays.
/// Starts from the current content of `x` (callers pass zeros). `apply_m =
/// None` means the identity. Stops when `‖r‖₂ ≤ tol_abs`.
pub fn conjugate_residual(
    apply_a: &mut dyn FnMut(&[f64], &mut [f64]),
    apply_m: &mut Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    b: &[f64],
    x: &mut [f64],
    tol_abs: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let dot = crate::grid::dot;
    let mut r = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    apply_a(x, &mut scratch);
    for i in 0..n {
        r[i] = b[i] - scratch[i];
    }
    let mut resnorm = dot(&r, &r).sqrt();
    if resnorm <= tol_abs {
        return KrylovOutcome {
            iterations: 0,
            residual: resnorm,
            converged: true,
            monotone: true,
        };
    }
    let mut z = vec![0.0; n];
    match apply_m {
        Some(m) => m(&r, &mut z),
        None => z.copy_from_slice(&r),
    }
    let mut az = vec![0.0; n];
    apply_a(&z, &mut az);
    let mut rho = dot(&z, &az);
    let mut p = z.clone();
    let mut ap = az.clone();
    let mut map = vec![0.0; n];
    let mut prec_norm2 = dot(&r, &z);
    let mut monotone = true;
    let mut iterations = 0;
    for _ in 0..max_iter {
        match apply_m {
            Some(m) => m(&ap, &mut map),
            None => map.copy_from_slice(&ap),
        }
        let gamma = dot(&ap, &map);
        if !(gamma > 0.0) {
            break;
        }
        let alpha = rho / gamma;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] -= alpha * map[i];
        }
        iterations += 1;
        resnorm = dot(&r, &r).sqrt();
        let pn2 = dot(&r, &z);
        // Allow round-off-sized wiggle: a relative factor for recurrence
        // noise plus an absolute floor two orders below the stopping level
        // (increases that small are indistinguishable from convergence).
        if pn2 > prec_norm2 * (1.0 + 1e-9) + 1e-4 * tol_abs * tol_abs {
            monotone = false;
        }
        prec_norm2 = pn2;
        if resnorm <= tol_abs {
            break;
        }
        apply_a(&z, &mut az);
        let rho_new = dot(&z, &az);
        if !(rho_new > 0.0) {
            break;
        }
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
            ap[i] = az[i] + beta * ap[i];
        }
        rho = rho_new;
    }
    KrylovOutcome {
        iterations,
        residual: resnorm,
        converged: resnorm <= tol_abs,
        monotone,
    }
}

/// Zeroth-order momentum coefficient: the symmetric matrix `C` in
/// `−Δu + ∇p + C u = f`.
#[derive(Debug, Clone)]
pub struct ZerothOrder {
    pub matrix: [[f64; 3]; 3],
}

/// Add `C u` to `out` on fluid faces. Diagonal entries act pointwise;
/// off-diagonal entries see the other component through the four-point face
/// average whose stencil is its own transpose, so a symmetric `C` yields a
/// symmetric operator.
pub fn add_zeroth_order(
    masks: &GridMasks,
    matrix: &[[f64; 3]; 3],
    u: &VelocityField,
    out: &mut VelocityField,
) {
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let periodic = masks.bc == BcKind::Periodic;
    for a in 0..dims.dim {
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let i = [i0, i1, i2];
                    let idx = dims.idx(i);
                    if !masks.face_fluid[a][idx] {
                        continue;
                    }
                    let mut acc = matrix[a][a] * u.comps[a][idx];
                    for b in 0..dims.dim {
                        if b == a || matrix[a][b] == 0.0 {
                            continue;
                        }
                        // u_b averaged from the four surrounding b-faces:
                        // j_a ∈ {i_a − 1, i_a}, j_b ∈ {i_b, i_b + 1}.
                        let mut avg = 0.0;
                        for da in [-1isize, 0] {
                            for db in [0isize, 1] {
                                let mut j = [i[0] as isize, i[1] as isize, i[2] as isize];
                                j[a] += da;
                                j[b] += db;
                                let mut ok = true;
                                for ax in 0..dims.dim {
                                    let nax = dims.shape[ax] as isize;
                                    if j[ax] < 0 || j[ax] >= nax {
                                        if periodic {
                                            j[ax] = (j[ax] + nax) % nax;
                                        } else {
                                            ok = false;
                                        }
                                    }
                                }
                                if !ok {
                                    continue;
                                }
                                let jdx = dims.idx([j[0] as usize, j[1] as usize, j[2] as usize]);
                                if masks.face_fluid[b][jdx] {
                                    avg += 0.25 * u.comps[b][jdx];
                                }
                            }
                        }
                        acc += matrix[a][b] * avg;
                    }
                    out.comps[a][idx] += acc;
                }
            }
        }
    }
}

fn flatten(u: &VelocityField, out: &mut [f64]) {
    let len = u.dims().len();
    for (c, comp) in u.comps.iter().enumerate() {
        out[c * len..(c + 1) * len].copy_from_slice(comp);
    }
}

fn unflatten_masked(masks: &GridMasks, data: &[f64], u: &mut VelocityField) {
    let len = masks.dims.len();
    for (c, comp) in u.comps.iter_mut().enumerate() {
        let src = &data[c * len..(c + 1) * len];
        for idx in 0..len {
            comp[idx] = if masks.face_fluid[c][idx] { src[idx] } else { 0.0 };
        }
    }
}

fn project_zero_mean_fluid(masks: &GridMasks, p: &mut [f64]) {
    let mut sum = 0.0;
    for (v, &fl) in p.iter().zip(&masks.cell_fluid) {
        if fl {
            sum += v;
        }
    }
    let mean = sum / masks.n_fluid_cells as f64;
    for (v, &fl) in p.iter_mut().zip(&masks.cell_fluid) {
        if fl {
            *v -= mean;
        } else {
            *v = 0.0;
        }
    }
}

/// Stokes-type saddle-point solve on a masked grid:
/// `−Δu + C u + ∇p = f`, `div u = 0`, `u = 0` on solid faces, zero-mean `p`.
pub fn solve_saddle(
    masks: &Arc<GridMasks>,
    zeroth: Option<&ZerothOrder>,
    f: &VelocityField,
    opts: &SolveOpts,
) -> Result<(VelocityField, ScalarField, SolveReport)> {
    let start = Instant::now();
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::Config(format!(
            "solver tolerance must lie in (0, 1e-2], got {}",
            opts.tol
        )));
    }
    if !masks.connected {
        return Err(Error::SingularSystem(
            "fluid region is disconnected: pressure is determined only up to one constant per component".into(),
        ));
    }
    let dims = masks.dims;
    let len = dims.len();
    let vlen = dims.dim * len;

    let mut fb = vec![0.0; vlen];
    {
        let mut fm = f.clone();
        fm.enforce_mask();
        flatten(&fm, &mut fb);
    }
    let norm_f = crate::grid::dot(&fb, &fb).sqrt();
    if norm_f == 0.0 {
        // Zero data: the solution is exactly zero; report a converged solve.
        let u = VelocityField::zeros(masks);
        let p = ScalarField::zeros(masks);
        let report = SolveReport {
            iterations: 0,
            inner_iterations: 0,
            residual: 0.0,
            residual_momentum: 0.0,
            residual_divergence: 0.0,
            tol: opts.tol,
            residual_monotone: true,
            seconds: start.elapsed().as_secs_f64(),
        };
        return Ok((u, p, report));
    }

    let shift = zeroth.map_or(0.0, |z| {
        let mut tr = 0.0;
        for a in 0..dims.dim {
            tr += z.matrix[a][a];
        }
        (tr / dims.dim as f64).max(0.0)
    });
    let precond = PoissonPrecond::new(dims, shift);

    // Reusable velocity-shaped buffers behind the flat interface.
    let mut vin = VelocityField::zeros(masks);
    let mut vout = VelocityField::zeros(masks);

    let mut apply_mom = |x: &[f64], y: &mut [f64]| {
        unflatten_masked(masks, x, &mut vin);
        ops::neg_laplacian(&vin, &mut vout);
        if let Some(z) = zeroth {
            add_zeroth_order(masks, &z.matrix, &vin, &mut vout);
        }
        flatten(&vout, y);
    };
    let mut pv_in = VelocityField::zeros(masks);
    let mut pv_out = VelocityField::zeros(masks);
    let mut apply_prec = |x: &[f64], y: &mut [f64]| {
        unflatten_masked(masks, x, &mut pv_in);
        precond.apply(masks, &pv_in, &mut pv_out);
        flatten(&pv_out, y);
    };

    let mut inner_total = 0usize;
    let mut monotone = true;

    // Inner momentum solve A v = rhs to the given relative accuracy.
    let max_inner = 20_000;
    macro_rules! inner_solve {
        ($rhs:expr, $rel:expr) => {{
            let rhs: &[f64] = $rhs;
            let nb = crate::grid::dot(rhs, rhs).sqrt();
            let mut x = vec![0.0; vlen];
            if nb > 0.0 {
                let mut pm: Option<&mut dyn FnMut(&[f64], &mut [f64])> = Some(&mut apply_prec);
                let out = conjugate_residual(
                    &mut apply_mom,
                    &mut pm,
                    rhs,
                    &mut x,
                    $rel * nb,
                    max_inner,
                );
                inner_total += out.iterations;
                monotone &= out.monotone;
            }
            x
        }};
    }

    let mut inner_rel = opts.inner_factor * opts.tol;
    let mut outer_cushion = 0.5;
    let mut outer_total = 0usize;
    let mut p_flat = vec![0.0; len];
    let mut last_mom = f64::INFINITY;
    let mut last_div = f64::INFINITY;

    let velocity_of = |flat: &[f64], masks: &Arc<GridMasks>| {
        let mut u = VelocityField::zeros(masks);
        unflatten_masked(masks, flat, &mut u);
        u
    };

    for _round in 0..3 {
        // Right-hand side of the Schur system: b = −D A⁻¹ f.
        let uf = inner_solve!(&fb, inner_rel);
        let b = {
            let u = velocity_of(&uf, masks);
            let d = ops::divergence(&u);
            let mut b: Vec<f64> = d.data.iter().map(|v| -v).collect();
            project_zero_mean_fluid(masks, &mut b);
            b
        };
        // Outer operator: d ↦ −D A⁻¹ G d, projected to zero mean.
        let mut grad_in = ScalarField::zeros(masks);
        let mut gflat = vec![0.0; vlen];
        let mut schur = |d: &[f64], out: &mut [f64]| {
            grad_in.data.copy_from_slice(d);
            let g = ops::gradient(&grad_in);
            flatten(&g, &mut gflat);
            let v = inner_solve!(&gflat, inner_rel);
            let vu = velocity_of(&v, masks);
            let dv = ops::divergence(&vu);
            for i in 0..len {
                out[i] = -dv.data[i];
            }
            project_zero_mean_fluid(masks, out);
        };
        // The outer residual equals the divergence of the implied velocity;
        // stop it against the momentum data norm, which lower-bounds the
        // verification denominator.
        let outer_tol = outer_cushion * opts.tol * norm_f;
        let remaining = opts.max_outer.saturating_sub(outer_total).max(1);
        let mut ident: Option<&mut dyn FnMut(&[f64], &mut [f64])> = None;
        let out = conjugate_residual(&mut schur, &mut ident, &b, &mut p_flat, outer_tol, remaining);
        outer_total += out.iterations;
        monotone &= out.monotone;

        // Recover the velocity for the current pressure and verify.
        let gp = {
            grad_in.data.copy_from_slice(&p_flat);
            let g = ops::gradient(&grad_in);
            flatten(&g, &mut gflat);
            let mut rhs = fb.clone();
            for i in 0..vlen {
                rhs[i] -= gflat[i];
            }
            rhs
        };
        let ufinal = inner_solve!(&gp, 0.5 * inner_rel);
        let u = velocity_of(&ufinal, masks);

        // Momentum residual ‖f − A u − G p‖ / ‖f‖ (flat norms; the h^{d/2}
        // weights cancel in the ratio).
        let mut au = vec![0.0; vlen];
        apply_mom(&ufinal, &mut au);
        let mut rm2 = 0.0;
        for i in 0..vlen {
            let r = gp[i] - au[i];
            rm2 += r * r;
        }
        let res_mom = rm2.sqrt() / norm_f;
        // Continuity residual against max(|u|_{H¹}, ‖f‖) in weighted norms.
        let div = ops::divergence(&u);
        let div_l2 = ops::l2_norm_scalar(&div);
        let f_l2 = norm_f * dims.cell_volume().sqrt();
        let denom = ops::h1_seminorm(&u).max(f_l2).max(f64::MIN_POSITIVE);
        let res_div = div_l2 / denom;

        last_mom = res_mom;
        last_div = res_div;
        if res_mom <= opts.tol && res_div <= opts.tol {
            let mut p = ScalarField {
                masks: masks.clone(),
                data: p_flat,
            };
            project_zero_mean_fluid(masks, &mut p.data);
            let report = SolveReport {
                iterations: outer_total,
                inner_iterations: inner_total,
                residual: res_mom.max(res_div),
                residual_momentum: res_mom,
                residual_divergence: res_div,
                tol: opts.tol,
                residual_monotone: monotone,
                seconds: start.elapsed().as_secs_f64(),
            };
            return Ok((u, p, report));
        }
        if outer_total >= opts.max_outer {
            break;
        }
        // Tighten and take another round from the current pressure iterate.
        inner_rel *= 0.1;
        outer_cushion *= 0.2;
    }
    Err(Error::NoConvergence {
        iterations: outer_total,
        residual: last_mom.max(last_div),
        tol: opts.tol,
        context: format!(
            "saddle solve N={} dim={}: momentum residual {:.3e}, continuity residual {:.3e}",
            dims.n, dims.dim, last_mom, last_div
        ),
    })
}

/// Cell-centered scalar Laplacian with the uniform no-slip closure: any
/// neighbor that is solid or beyond a Dirichlet wall mirrors the center value
/// (`v_ghost = −v`), placing the zero set halfway between centers; periodic
/// sides wrap. Solid cells stay zero.
pub fn scalar_neg_laplacian(masks: &GridMasks, x: &[f64], out: &mut [f64]) {
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let inv_h2 = (dims.n as f64) * (dims.n as f64);
    let periodic = masks.bc == BcKind::Periodic;
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let i = [i0, i1, i2];
                let idx = dims.idx(i);
                if !masks.cell_fluid[idx] {
                    out[idx] = 0.0;
                    continue;
                }
                let c = x[idx];
                let mut acc = 0.0;
                for b in 0..dims.dim {
                    for dir in [-1isize, 1] {
                        let ib = i[b] as isize + dir;
                        let nb = dims.shape[b] as isize;
                        let val = if ib >= 0 && ib < nb {
                            let mut j = i;
                            j[b] = ib as usize;
                            let jdx = dims.idx(j);
                            if masks.cell_fluid[jdx] {
                                x[jdx]
                            } else {
                                -c
                            }
                        } else if periodic {
                            let mut j = i;
                            j[b] = ((ib + nb) % nb) as usize;
                            let jdx = dims.idx(j);
                            if masks.cell_fluid[jdx] {
                                x[jdx]
                            } else {
                                -c
                            }
                        } else {
                            -c
                        };
                        acc += val - c;
                    }
                }
                out[idx] = -acc * inv_h2;
            }
        }
    }
}

/// Smallest eigenvalue of the scalar Laplacian on fluid cells by inverse
/// power iteration (conjugate-residual inner solves), started from the
/// projected all-ones vector. Returns the final Rayleigh quotient — an upper
/// bound on the true discrete eigenvalue — and the iteration count.
pub fn smallest_eigenvalue(masks: &Arc<GridMasks>, tol: f64) -> Result<(f64, usize)> {
    let dims = masks.dims;
    if masks.bc == BcKind::Periodic && masks.n_fluid_cells == dims.len() {
        return Err(Error::NoDirichletData);
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Config(format!("eigenvalue tolerance out of range: {tol}")));
    }
    let len = dims.len();
    let mut apply = |x: &[f64], y: &mut [f64]| scalar_neg_laplacian(masks, x, y);
    let precond = PoissonPrecond::new(dims, 0.0);
    let mut apply_m = |x: &[f64], y: &mut [f64]| precond.apply_scalar(&masks.cell_fluid, x, y);

    let mut x: Vec<f64> = masks
        .cell_fluid
        .iter()
        .map(|&f| if f { 1.0 } else { 0.0 })
        .collect();
    let nx = crate::grid::dot(&x, &x).sqrt();
    for v in x.iter_mut() {
        *v /= nx;
    }
    // The Rayleigh quotient is second-order accurate in the eigenvector
    // error, so the inner solves need far less than the eigenvalue tolerance.
    // The floor tracks the rounding plateau of the residual, which grows with
    // the unknown count; an absolute 1e-11 is unreachable at a million cells.
    let inner_tol = (0.01 * tol).max(1e-12 * (len as f64).sqrt());
    let mut lam_prev = f64::INFINITY;
    let mut ly = vec![0.0; len];
    for it in 1..=200 {
        let mut y = vec![0.0; len];
        let mut pm: Option<&mut dyn FnMut(&[f64], &mut [f64])> = Some(&mut apply_m);
        let out = conjugate_residual(&mut apply, &mut pm, &x, &mut y, inner_tol, 50_000);
        if !out.converged {
            return Err(Error::NoConvergence {
                iterations: out.iterations,
                residual: out.residual,
                tol: inner_tol,
                context: format!(
                    "inverse-power inner solve at N={}, outer iteration {it}",
                    dims.n
                ),
            });
        }
        let ny = crate::grid::dot(&y, &y).sqrt();
        if !(ny > 0.0) {
            return Err(Error::SingularSystem(
                "inverse power iteration collapsed to zero".into(),
            ));
        }
        for v in y.iter_mut() {
            *v /= ny;
        }
        apply(&y, &mut ly);
        let lam = crate::grid::dot(&y, &ly);
        if (lam - lam_prev).abs() <= tol * lam.abs() {
            return Ok((lam, it));
        }
        lam_prev = lam;
        x = y;
    }
    Err(Error::NoConvergence {
        iterations: 200,
        residual: f64::NAN,
        tol,
        context: "inverse power iteration did not settle".into(),
    })
}

/// Solve the Stokes saddle system by dense Gaussian elimination, assembling
/// the discrete operator by probing with basis vectors. The system is exactly
/// the one [`solve_saddle`] iterates on (no drag term), closed with a
/// Lagrange multiplier pinning the pressure mean, so the two solutions agree
/// to solver tolerance. Cost is cubic in the unknown count — an oracle for
/// coarse grids, not a solver.
pub fn dense_reference(
    masks: &Arc<GridMasks>,
    f: &VelocityField,
) -> Result<(VelocityField, ScalarField)> {
    let dims = masks.dims;
    let d = dims.dim;
    let len = dims.len();

    // Flat index maps for fluid unknowns: faces first, then cells.
    let mut face_ids = vec![None; d * len];
    let mut next = 0;
    for c in 0..d {
        for idx in 0..len {
            if masks.face_fluid[c][idx] {
                face_ids[c * len + idx] = Some(next);
                next += 1;
            }
        }
    }
    let nu = next;
    let mut cell_ids = vec![None; len];
    for idx in 0..len {
        if masks.cell_fluid[idx] {
            cell_ids[idx] = Some(next);
            next += 1;
        }
    }
    let np = next - nu;
    let total = nu + np + 1; // +1 Lagrange multiplier for the pressure mean.
    if total > 4096 {
        return Err(Error::BudgetExceeded {
            needed: total,
            cap: 4096,
            context: "dense reference solve".into(),
        });
    }

    let mut mat = vec![vec![0.0; total]; total];
    // Momentum block and divergence rows from velocity probes.
    for c in 0..d {
        for idx in 0..len {
            let Some(col) = face_ids[c * len + idx] else { continue };
            let mut e = VelocityField::zeros(masks);
            e.comps[c][idx] = 1.0;
            let mut lap = VelocityField::zeros(masks);
            ops::neg_laplacian(&e, &mut lap);
            for cc in 0..d {
                for jdx in 0..len {
                    if let Some(row) = face_ids[cc * len + jdx] {
                        mat[row][col] = lap.comps[cc][jdx];
                    }
                }
            }
            let div = ops::divergence(&e);
            for jdx in 0..len {
                if let Some(row) = cell_ids[jdx] {
                    mat[row][col] = div.data[jdx];
                }
            }
        }
    }
    // Gradient block columns from pressure probes, plus the mean constraint.
    for idx in 0..len {
        let Some(col) = cell_ids[idx] else { continue };
        let mut e = ScalarField::zeros(masks);
        e.data[idx] = 1.0;
        let g = ops::gradient(&e);
        for cc in 0..d {
            for jdx in 0..len {
                if let Some(row) = face_ids[cc * len + jdx] {
                    mat[row][col] = g.comps[cc][jdx];
                }
            }
        }
        mat[col][total - 1] = 1.0;
        mat[total - 1][col] = 1.0;
    }

    let mut rhs = vec![0.0; total];
    for c in 0..d {
        for idx in 0..len {
            if let Some(row) = face_ids[c * len + idx] {
                rhs[row] = f.comps[c][idx];
            }
        }
    }
    let sol = crate::util::solve_dense(mat, &rhs)?;

    let mut u = VelocityField::zeros(masks);
    for c in 0..d {
        for idx in 0..len {
            if let Some(col) = face_ids[c * len + idx] {
                u.comps[c][idx] = sol[col];
            }
        }
    }
    let mut p = ScalarField::zeros(masks);
    for idx in 0..len {
        if let Some(col) = cell_ids[idx] {
            p.data[idx] = sol[col];
        }
    }
    Ok((u, p))
}
