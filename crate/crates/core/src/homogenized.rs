//! Solvers for the three effective (obstacle-free) flow models on the unit
//! box with no-slip walls: Stokes, Darcy, and the Brinkman interpolation
//! between them. These are the macroscopic models that perforated-domain
//! solutions are compared against; all three share the staggered grid and the
//! saddle-point machinery of [`crate::solver`].
//!
//! The Darcy model is posed in flux form: find a mean-free cell pressure with
//! `div(A(f − ∇p)) = 0` and zero normal flux through the walls, then recover
//! the face velocity `u = A(f − ∇p)`. Discretely the wall flux is zero by
//! construction (boundary faces carry no unknowns), so mass conservation
//! holds cell by cell, and the pressure system `Gᵀ A G` is symmetric positive
//! semidefinite with only the constants in its kernel.

use crate::error::{Error, Result};
use crate::geometry::{BcKind, GridMasks};
use crate::grid::{GridDims, ScalarField, VelocityField};
use crate::ops;
use crate::solver::{self, SolveOpts, SolveReport, ZerothOrder};
use crate::util;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

/// Body force for an effective-model solve.
#[derive(Clone)]
pub enum Forcing {
    /// Spatially constant vector.
    Constant([f64; 3]),
    /// Horizontal force varying with height: `f = (sin 2πx₂, 0, …)`.
    SinShear,
    /// Discrete gradient of a scalar potential sampled at cell centers;
    /// useful for probing the pressure-only degenerate case.
    Potential(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    /// Per-component field loaded from a dump written by
    /// [`crate::grid::dump_fields`].
    FromFile(PathBuf),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Constant(v) => write!(f, "Constant({v:?})"),
            Forcing::SinShear => write!(f, "SinShear"),
            Forcing::Potential(_) => write!(f, "Potential(fn)"),
            Forcing::FromFile(p) => write!(f, "FromFile({p:?})"),
        }
    }
}

impl Forcing {
    /// Sample the force onto the fluid faces of a grid.
    pub fn realize(&self, masks: &Arc<GridMasks>) -> Result<VelocityField> {
        match self {
            Forcing::Constant(v) => Ok(VelocityField::from_fn(masks, |c, _| v[c])),
            Forcing::SinShear => Ok(VelocityField::from_fn(masks, |c, p| {
                if c == 0 {
                    (2.0 * std::f64::consts::PI * p[1]).sin()
                } else {
                    0.0
                }
            })),
            Forcing::Potential(g) => {
                let pot = ScalarField::from_fn(masks, |p| g(p));
                Ok(ops::gradient(&pot))
            }
            Forcing::FromFile(path) => {
                let text = std::fs::read_to_string(path)?;
                let (dim, n, comps) = crate::grid::parse_fields(&text)?;
                let dims = masks.dims;
                if dim != dims.dim || n != dims.n || comps.len() != dims.dim {
                    return Err(Error::Config(format!(
                        "forcing file {} is {dim}d with {n} cells and {} components; expected {}d with {} cells",
                        path.display(),
                        comps.len(),
                        dims.dim,
                        dims.n
                    )));
                }
                let mut f = VelocityField::zeros(masks);
                for (c, comp) in comps.into_iter().enumerate() {
                    f.comps[c] = comp;
                }
                f.enforce_mask();
                Ok(f)
            }
        }
    }
}

/// Velocity/pressure pair from an effective-model solve.
#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub masks: Arc<GridMasks>,
    pub u: VelocityField,
    pub p: ScalarField,
    pub report: SolveReport,
}

fn box_masks(dim: usize, n: usize) -> Arc<GridMasks> {
    Arc::new(GridMasks::unmasked(GridDims::new(dim, n), BcKind::Dirichlet))
}

/// Stokes flow in the box: `−Δu + ∇p = f`, `div u = 0`, no-slip walls.
pub fn solve_stokes(
    dim: usize,
    n: usize,
    forcing: &Forcing,
    opts: &SolveOpts,
) -> Result<LimitSolution> {
    let masks = box_masks(dim, n);
    let f = forcing.realize(&masks)?;
    let (u, p, report) = solver::solve_saddle(&masks, None, &f, opts)?;
    Ok(LimitSolution { masks, u, p, report })
}

/// Brinkman flow in the box: `−Δu + ∇p + σ⁻² A⁻¹ u = f` with the same
/// incompressibility and wall conditions as Stokes. `a` must be symmetric
/// positive definite; `sigma` is the critical scale multiplying the drag.
pub fn solve_brinkman(
    dim: usize,
    n: usize,
    a: &[[f64; 3]; 3],
    sigma: f64,
    forcing: &Forcing,
    opts: &SolveOpts,
) -> Result<LimitSolution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "Brinkman drag scale must be positive and finite, got {sigma}"
        )));
    }
    util::check_spd(a, dim, "Brinkman permeability")?;
    let mut inv = util::invert_small(a, dim)?;
    let s2 = sigma * sigma;
    for row in inv.iter_mut() {
        for v in row.iter_mut() {
            *v /= s2;
        }
    }
    let zeroth = ZerothOrder { matrix: inv };
    let masks = box_masks(dim, n);
    let f = forcing.realize(&masks)?;
    let (u, p, report) = solver::solve_saddle(&masks, Some(&zeroth), &f, opts)?;
    Ok(LimitSolution { masks, u, p, report })
}

/// Apply the permeability to a face field: `out = A v`, with off-diagonal
/// entries seen through the four-point transverse average.
fn apply_permeability(
    masks: &GridMasks,
    a: &[[f64; 3]; 3],
    v: &VelocityField,
    out: &mut VelocityField,
) {
    for comp in out.comps.iter_mut() {
        for x in comp.iter_mut() {
            *x = 0.0;
        }
    }
    solver::add_zeroth_order(masks, a, v, out);
}

/// Darcy flow in the box: mean-free cell pressure with
/// `div(A(f − ∇p)) = 0`, zero wall flux, and `u = A(f − ∇p)`.
pub fn solve_darcy(
    dim: usize,
    n: usize,
    a: &[[f64; 3]; 3],
    forcing: &Forcing,
    opts: &SolveOpts,
) -> Result<LimitSolution> {
    let start = Instant::now();
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::Config(format!(
            "solver tolerance must lie in (0, 1e-2], got {}",
            opts.tol
        )));
    }
    util::check_spd(a, dim, "Darcy permeability")?;
    let masks = box_masks(dim, n);
    let dims = masks.dims;
    let len = dims.len();
    let f = forcing.realize(&masks)?;

    // Right-hand side −D A f, projected onto mean-free cell fields.
    let mut af = VelocityField::zeros(&masks);
    apply_permeability(&masks, a, &f, &mut af);
    let daf = ops::divergence(&af);
    let mut b: Vec<f64> = daf.data.iter().map(|v| -v).collect();
    project_mean(&mut b);
    let norm_b = crate::grid::dot(&b, &b).sqrt();

    let mut p = ScalarField::zeros(&masks);
    let mut iterations = 0;
    let mut monotone = true;
    if norm_b > 0.0 {
        // Pressure operator Gᵀ A G, kept on the mean-free subspace.
        let mut grad = ScalarField::zeros(&masks);
        let mut ag = VelocityField::zeros(&masks);
        let mut apply = |x: &[f64], y: &mut [f64]| {
            grad.data.copy_from_slice(x);
            let g = ops::gradient(&grad);
            apply_permeability(&masks, a, &g, &mut ag);
            let d = ops::divergence(&ag);
            for i in 0..len {
                y[i] = -d.data[i];
            }
            project_mean(y);
        };
        // The permeability scales the operator by roughly its mean diagonal,
        // so scale the Poisson preconditioner accordingly.
        let mut abar = 0.0;
        for i in 0..dim {
            abar += a[i][i];
        }
        abar /= dim as f64;
        let precond = crate::spectral::PoissonPrecond::new(dims, 0.0);
        let all_fluid = vec![true; len];
        let mut apply_m = |x: &[f64], y: &mut [f64]| {
            precond.apply_scalar(&all_fluid, x, y);
            for v in y.iter_mut() {
                *v /= abar;
            }
            project_mean(y);
        };
        let mut pm: Option<&mut dyn FnMut(&[f64], &mut [f64])> = Some(&mut apply_m);
        let out = solver::conjugate_residual(
            &mut apply,
            &mut pm,
            &b,
            &mut p.data,
            opts.tol * norm_b,
            opts.max_outer.max(10 * n),
        );
        iterations = out.iterations;
        monotone = out.monotone;
        if !out.converged {
            return Err(Error::NoConvergence {
                iterations: out.iterations,
                residual: out.residual / norm_b,
                tol: opts.tol,
                context: format!("Darcy pressure solve at N={n}, dim {dim}"),
            });
        }
    }
    project_mean(&mut p.data);

    // Recover the flux and verify mass conservation: the residual of the
    // pressure system is exactly the divergence of the recovered velocity.
    let gp = ops::gradient(&p);
    let mut fmgp = f.clone();
    for c in 0..dim {
        for i in 0..len {
            fmgp.comps[c][i] -= gp.comps[c][i];
        }
    }
    let mut u = VelocityField::zeros(&masks);
    apply_permeability(&masks, a, &fmgp, &mut u);
    let du = ops::divergence(&u);
    let res_div = if norm_b > 0.0 {
        crate::grid::dot(&du.data, &du.data).sqrt() / norm_b
    } else {
        0.0
    };
    let report = SolveReport {
        iterations,
        inner_iterations: 0,
        residual: res_div,
        residual_momentum: 0.0,
        residual_divergence: res_div,
        tol: opts.tol,
        residual_monotone: monotone,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(LimitSolution { masks, u, p, report })
}

fn project_mean(data: &mut [f64]) {
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    for v in data.iter_mut() {
        *v -= mean;
    }
}

/// Identity matrix padded to the fixed 3×3 storage.
pub fn identity_matrix() -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        a[i][i] = 1.0;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::vel_dot;

    #[test]
    fn stokes_energy_balances_work() {
        // ⟨∇u, ∇u⟩ = ⟨f, u⟩ for the discrete solution, to solver accuracy.
        let opts = SolveOpts::with_tol(1e-10);
        let sol = solve_stokes(2, 32, &Forcing::SinShear, &opts).unwrap();
        let f = Forcing::SinShear.realize(&sol.masks).unwrap();
        let energy = ops::h1_pair(&sol.u, &sol.u);
        let work = vel_dot(&f, &sol.u) * sol.masks.dims.cell_volume();
        assert!(
            (energy - work).abs() < 1e-8 * work.abs().max(1e-30),
            "{energy} vs {work}"
        );
        assert!(sol.report.residual <= opts.tol);
    }

    #[test]
    fn brinkman_energy_includes_the_drag_term() {
        let opts = SolveOpts::with_tol(1e-10);
        let a = identity_matrix();
        let sigma = 0.7;
        let sol = solve_brinkman(2, 32, &a, sigma, &Forcing::SinShear, &opts).unwrap();
        let f = Forcing::SinShear.realize(&sol.masks).unwrap();
        let mut cu = VelocityField::zeros(&sol.masks);
        let inv = util::invert_small(&a, 2).unwrap();
        let mut scaled = inv;
        for row in scaled.iter_mut() {
            for v in row.iter_mut() {
                *v /= sigma * sigma;
            }
        }
        solver::add_zeroth_order(&sol.masks, &scaled, &sol.u, &mut cu);
        let vol = sol.masks.dims.cell_volume();
        let energy = ops::h1_pair(&sol.u, &sol.u) + vel_dot(&cu, &sol.u) * vol;
        let work = vel_dot(&f, &sol.u) * vol;
        assert!(
            (energy - work).abs() < 1e-8 * work.abs().max(1e-30),
            "{energy} vs {work}"
        );
    }

    #[test]
    fn brinkman_approaches_stokes_as_drag_vanishes() {
        let opts = SolveOpts::with_tol(1e-10);
        let stokes = solve_stokes(2, 24, &Forcing::SinShear, &opts).unwrap();
        let weak = solve_brinkman(
            2,
            24,
            &identity_matrix(),
            1e3,
            &Forcing::SinShear,
            &opts,
        )
        .unwrap();
        let mut diff = 0.0f64;
        for c in 0..2 {
            for i in 0..stokes.masks.dims.len() {
                diff = diff.max((stokes.u.comps[c][i] - weak.u.comps[c][i]).abs());
            }
        }
        let scale = ops::l2_norm_vel(&stokes.u);
        assert!(diff < 1e-4 * scale.max(1e-30), "drift {diff} vs scale {scale}");
    }

    #[test]
    fn darcy_constant_force_gives_linear_pressure_and_no_flow() {
        // With f = e¹ and A = I the exact solution is u = 0, p = x₁ − ½; the
        // discrete problem reproduces it to solver precision.
        let opts = SolveOpts::with_tol(1e-12);
        let sol = solve_darcy(2, 32, &identity_matrix(), &Forcing::Constant([1.0, 0.0, 0.0]), &opts)
            .unwrap();
        let dims = sol.masks.dims;
        let umax = sol
            .u
            .comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(umax < 1e-10, "spurious flow {umax}");
        let mut pmax = 0.0f64;
        for idx in 0..dims.len() {
            let x = dims.cell_center(dims.decode(idx))[0];
            pmax = pmax.max((sol.p.data[idx] - (x - 0.5)).abs());
        }
        assert!(pmax < 1e-9, "pressure defect {pmax}");
    }

    #[test]
    fn darcy_flux_is_conservative_and_energy_balances() {
        let opts = SolveOpts::with_tol(1e-11);
        let a = {
            let mut a = identity_matrix();
            a[0][0] = 2.0;
            a[0][1] = 0.4;
            a[1][0] = 0.4;
            a[1][1] = 1.3;
            a
        };
        let sol = solve_darcy(2, 48, &a, &Forcing::SinShear, &opts).unwrap();
        assert!(sol.report.residual_divergence <= opts.tol);
        // ⟨A⁻¹u, u⟩ = ⟨f, u⟩ because the pressure does no work on a
        // divergence-free, wall-tangential flux.
        let f = Forcing::SinShear.realize(&sol.masks).unwrap();
        let vol = sol.masks.dims.cell_volume();
        let inv = util::invert_small(&a, 2).unwrap();
        let mut aiu = VelocityField::zeros(&sol.masks);
        solver::add_zeroth_order(&sol.masks, &inv, &sol.u, &mut aiu);
        let lhs = vel_dot(&aiu, &sol.u) * vol;
        let rhs = vel_dot(&f, &sol.u) * vol;
        // The face-interpolated A and A⁻¹ are not exact matrix inverses of
        // each other, so this identity holds to discretization accuracy.
        assert!(
            (lhs - rhs).abs() < 0.02 * rhs.abs().max(1e-30),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn darcy_rejects_indefinite_permeability() {
        let mut a = identity_matrix();
        a[0][0] = -1.0;
        let err = solve_darcy(2, 16, &a, &Forcing::SinShear, &SolveOpts::default()).unwrap_err();
        assert!(matches!(err, Error::NotSpd(_)));
    }

    #[test]
    fn potential_forcing_is_a_discrete_gradient() {
        let masks = box_masks(2, 16);
        let g = |p: &[f64]| p[0] * p[0] + 0.5 * p[1];
        let forcing = Forcing::Potential(Arc::new(g));
        let f = forcing.realize(&masks).unwrap();
        let sampled = ScalarField::from_fn(&masks, |p| g(p));
        let grad = ops::gradient(&sampled);
        for c in 0..2 {
            assert_eq!(f.comps[c], grad.comps[c]);
        }
    }

    #[test]
    fn file_forcing_round_trips() {
        let masks = box_masks(2, 8);
        let f0 = VelocityField::from_fn(&masks, |c, p| (c as f64 + 1.0) * p[0] + p[1]);
        let text = crate::grid::dump_fields(
            masks.dims,
            &f0.comps.iter().map(|c| c.as_slice()).collect::<Vec<_>>(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forcing.txt");
        std::fs::write(&path, text).unwrap();
        let f1 = Forcing::FromFile(path).realize(&masks).unwrap();
        for c in 0..2 {
            assert_eq!(f0.comps[c], f1.comps[c]);
        }
        let bad = Forcing::FromFile(dir.path().join("missing.txt"));
        assert!(bad.realize(&masks).is_err());
    }

    #[test]
    fn stokes_sin_shear_converges_under_refinement() {
        // The velocity norm settles at second order; check the refinement
        // ratio rather than a frozen value so the test explains itself.
        let opts = SolveOpts::with_tol(1e-10);
        let mut norms = Vec::new();
        for n in [16usize, 32, 64] {
            let sol = solve_stokes(2, n, &Forcing::SinShear, &opts).unwrap();
            norms.push(ops::l2_norm_vel(&sol.u));
        }
        let d01 = (norms[1] - norms[0]).abs();
        let d12 = (norms[2] - norms[1]).abs();
        assert!(d12 < 0.4 * d01, "refinement stalled: {norms:?}");
        assert!(norms[2] > 0.0);
    }
}
