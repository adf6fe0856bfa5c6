//! Discrete differential operators on the staggered grid.
//!
//! Conventions, shared by every solver in the crate:
//!
//! * `divergence` maps face velocities to cell centers with the compact
//!   two-point stencil; under Dirichlet conditions the unstored faces on the
//!   far walls carry the value zero.
//! * `gradient` maps cell pressures to faces and is evaluated only on fluid
//!   faces, whose two neighbor cells are fluid by construction of the masks —
//!   so `⟨div u, p⟩ = −⟨u, grad p⟩` holds exactly (up to summation order).
//! * `neg_laplacian` applies the vector five/seven-point Laplacian with
//!   no-slip closures: a solid neighbor along the component's own axis is a
//!   wall face with value zero, while a solid neighbor in a transverse
//!   direction mirrors the center value (`u_ghost = −u`), placing the wall
//!   halfway between the two face centers at second order.
//! * `h1_pair` is the bilinear form associated with `neg_laplacian`:
//!   `h1_pair(u, v) = ⟨−Δ_h u, v⟩ h^d` in exact arithmetic, written as a sum
//!   over edges so it is symmetric bitwise and manifestly positive
//!   semidefinite on the diagonal.

use crate::geometry::BcKind;
use crate::grid::{ScalarField, VelocityField};

/// Divergence of a face field at cell centers (solid cells get zero).
pub fn divergence(u: &VelocityField) -> ScalarField {
    let masks = &u.masks;
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let inv_h = dims.n as f64;
    let mut out = ScalarField::zeros(&u.masks);
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let i = [i0, i1, i2];
                let idx = dims.idx(i);
                if !masks.cell_fluid[idx] {
                    continue;
                }
                let mut div = 0.0;
                for a in 0..dims.dim {
                    let lo = u.comps[a][idx];
                    let mut j = i;
                    let hi = if i[a] + 1 < dims.shape[a] {
                        j[a] = i[a] + 1;
                        u.comps[a][dims.idx(j)]
                    } else {
                        match masks.bc {
                            BcKind::Periodic => {
                                j[a] = 0;
                                u.comps[a][dims.idx(j)]
                            }
                            // The unstored face on the far wall is the wall.
                            BcKind::Dirichlet => 0.0,
                        }
                    };
                    div += (hi - lo) * inv_h;
                }
                out.data[idx] = div;
            }
        }
    }
    out
}

/// Gradient of a cell field at fluid faces (solid faces get zero).
pub fn gradient(p: &ScalarField) -> VelocityField {
    let masks = &p.masks;
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let inv_h = dims.n as f64;
    let mut out = VelocityField::zeros(&p.masks);
    for a in 0..dims.dim {
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let i = [i0, i1, i2];
                    let idx = dims.idx(i);
                    if !masks.face_fluid[a][idx] {
                        continue;
                    }
                    // A fluid face always has a fluid cell on both sides, and
                    // under Dirichlet conditions never sits on the wall, so
                    // the lower neighbor only wraps under periodicity.
                    let mut j = i;
                    j[a] = if i[a] == 0 { dims.shape[a] - 1 } else { i[a] - 1 };
                    out.comps[a][idx] = (p.data[idx] - p.data[dims.idx(j)]) * inv_h;
                }
            }
        }
    }
    out
}

/// `out = −Δ_h u` on fluid faces with no-slip closures (solid faces zero).
pub fn neg_laplacian(u: &VelocityField, out: &mut VelocityField) {
    let masks = &u.masks;
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let inv_h2 = (dims.n as f64) * (dims.n as f64);
    let periodic = masks.bc == BcKind::Periodic;
    for a in 0..dims.dim {
        let arr = &u.comps[a];
        let fluid = &masks.face_fluid[a];
        let dst = &mut out.comps[a];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let i = [i0, i1, i2];
                    let idx = dims.idx(i);
                    if !fluid[idx] {
                        dst[idx] = 0.0;
                        continue;
                    }
                    let c = arr[idx];
                    let mut acc = 0.0;
                    for b in 0..dims.dim {
                        for dir in [-1isize, 1] {
                            let ib = i[b] as isize + dir;
                            let nb = dims.shape[b] as isize;
                            let val = if ib >= 0 && ib < nb {
                                let mut j = i;
                                j[b] = ib as usize;
                                let jdx = dims.idx(j);
                                if fluid[jdx] {
                                    arr[jdx]
                                } else if a == b {
                                    // Solid face on the component's own axis
                                    // is a wall face: the value is zero.
                                    0.0
                                } else {
                                    // Transverse wall halfway to the neighbor.
                                    -c
                                }
                            } else if periodic {
                                let mut j = i;
                                j[b] = ((ib + nb) % nb) as usize;
                                let jdx = dims.idx(j);
                                if fluid[jdx] {
                                    arr[jdx]
                                } else if a == b {
                                    0.0
                                } else {
                                    -c
                                }
                            } else if a == b {
                                // The unstored far-wall face.
                                0.0
                            } else {
                                -c
                            };
                            acc += val - c;
                        }
                    }
                    dst[idx] = -acc * inv_h2;
                }
            }
        }
    }
}

/// H¹ seminorm pair form: sum over edges of `(Δu)(Δv)` scaled by `h^{d−2}`,
/// with wall edges contributing `u·v` along the component axis and `2·u·v`
/// transversally (the ghost-mirror closure). Equal to `⟨−Δ_h u, v⟩ h^d` in
/// exact arithmetic; symmetric in its arguments bitwise.
pub fn h1_pair(u: &VelocityField, v: &VelocityField) -> f64 {
    let masks = &u.masks;
    let dims = masks.dims;
    debug_assert!(std::sync::Arc::ptr_eq(&u.masks, &v.masks) || v.masks.dims == dims);
    let periodic = masks.bc == BcKind::Periodic;
    let scale = dims.h().powi(dims.dim as i32 - 2);
    let mut total = 0.0;
    for a in 0..dims.dim {
        let ua = &u.comps[a];
        let va = &v.comps[a];
        let fluid = &masks.face_fluid[a];
        for b in 0..dims.dim {
            let nb = dims.shape[b];
            // Edge e along axis b connects the faces at i_b = e−1 and i_b = e.
            let e_count = if periodic { nb } else { nb + 1 };
            let mut bounds = dims.shape;
            bounds[b] = e_count;
            for i0 in 0..bounds[0] {
                for i1 in 0..bounds[1] {
                    for i2 in 0..bounds[2] {
                        let e = [i0, i1, i2];
                        // Resolve the two endpoint faces; None is off-grid.
                        let hi = if e[b] < nb {
                            Some(dims.idx(e))
                        } else {
                            None
                        };
                        let lo = if e[b] > 0 {
                            let mut j = e;
                            j[b] = e[b] - 1;
                            Some(dims.idx(j))
                        } else if periodic {
                            let mut j = e;
                            j[b] = nb - 1;
                            Some(dims.idx(j))
                        } else {
                            None
                        };
                        if a == b {
                            // Off-grid or solid endpoints read as zero.
                            let (ul, vl) = lo.map_or((0.0, 0.0), |j| (ua[j], va[j]));
                            let (uh, vh) = hi.map_or((0.0, 0.0), |j| (ua[j], va[j]));
                            total += (uh - ul) * (vh - vl) * scale;
                        } else {
                            let lf = lo.map_or(false, |j| fluid[j]);
                            let hf = hi.map_or(false, |j| fluid[j]);
                            match (lf, hf) {
                                (true, true) => {
                                    let (jl, jh) = (lo.unwrap(), hi.unwrap());
                                    total += (ua[jh] - ua[jl]) * (va[jh] - va[jl]) * scale;
                                }
                                (true, false) => {
                                    let j = lo.unwrap();
                                    total += 2.0 * ua[j] * va[j] * scale;
                                }
                                (false, true) => {
                                    let j = hi.unwrap();
                                    total += 2.0 * ua[j] * va[j] * scale;
                                }
                                (false, false) => {}
                            }
                        }
                    }
                }
            }
        }
    }
    total
}

/// H¹ seminorm `(Σ |∇u|²)^{1/2}` with the closure conventions of `h1_pair`.
pub fn h1_seminorm(u: &VelocityField) -> f64 {
    h1_pair(u, u).max(0.0).sqrt()
}

/// L² norm of a face field, `(Σ u² h^d)^{1/2}`.
pub fn l2_norm_vel(u: &VelocityField) -> f64 {
    let vol = u.dims().cell_volume();
    (crate::grid::vel_dot(u, u) * vol).sqrt()
}

/// L² norm of a cell field, `(Σ p² h^d)^{1/2}`.
pub fn l2_norm_scalar(p: &ScalarField) -> f64 {
    let vol = p.dims().cell_volume();
    (crate::grid::dot(&p.data, &p.data) * vol).sqrt()
}

/// Component `comp` of the velocity averaged to cell centers from its two
/// faces. Uses stored values (solid faces are zero); the unstored far wall
/// under Dirichlet conditions is the wall value zero.
pub fn face_to_cell_avg(u: &VelocityField, comp: usize) -> Vec<f64> {
    let masks = &u.masks;
    let dims = masks.dims;
    let [n0, n1, n2] = dims.shape;
    let mut out = vec![0.0; dims.len()];
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let i = [i0, i1, i2];
                let idx = dims.idx(i);
                let lo = u.comps[comp][idx];
                let mut j = i;
                let hi = if i[comp] + 1 < dims.shape[comp] {
                    j[comp] = i[comp] + 1;
                    u.comps[comp][dims.idx(j)]
                } else {
                    match masks.bc {
                        BcKind::Periodic => {
                            j[comp] = 0;
                            u.comps[comp][dims.idx(j)]
                        }
                        BcKind::Dirichlet => 0.0,
                    }
                };
                out[idx] = 0.5 * (lo + hi);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell, rasterize_cell, BcKind, GridMasks, HoleShape};
    use crate::grid::{dot, vel_dot, GridDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_vel(masks: &Arc<GridMasks>, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = VelocityField::zeros(masks);
        for comp in 0..masks.dims.dim {
            for idx in 0..masks.dims.len() {
                if masks.face_fluid[comp][idx] {
                    u.comps[comp][idx] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        u
    }

    fn random_pressure(masks: &Arc<GridMasks>, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ScalarField::zeros(masks);
        for idx in 0..masks.dims.len() {
            if masks.cell_fluid[idx] {
                p.data[idx] = rng.gen_range(-1.0..1.0);
            }
        }
        p
    }

    fn test_masks() -> Vec<Arc<GridMasks>> {
        let cell = build_cell(2, 0.3, HoleShape::Ball { r: 0.5 }, 0.35).unwrap();
        let cell3 = build_cell(3, 0.4, HoleShape::Ball { r: 0.5 }, 0.4).unwrap();
        vec![
            Arc::new(GridMasks::unmasked(GridDims::new(2, 12), BcKind::Periodic)),
            Arc::new(GridMasks::unmasked(GridDims::new(2, 12), BcKind::Dirichlet)),
            Arc::new(rasterize_cell(&cell, 24, BcKind::Periodic).unwrap()),
            Arc::new(rasterize_cell(&cell, 24, BcKind::Dirichlet).unwrap()),
            Arc::new(GridMasks::unmasked(GridDims::new(3, 6), BcKind::Dirichlet)),
            Arc::new(rasterize_cell(&cell3, 10, BcKind::Periodic).unwrap()),
        ]
    }

    #[test]
    fn divergence_and_gradient_are_adjoint() {
        for (k, masks) in test_masks().into_iter().enumerate() {
            let u = random_vel(&masks, 100 + k as u64);
            let p = random_pressure(&masks, 200 + k as u64);
            let lhs = dot(&divergence(&u).data, &p.data);
            let rhs = -vel_dot(&u, &gradient(&p));
            assert!(
                (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
                "case {k}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn gradient_annihilates_constants() {
        for masks in test_masks() {
            let mut p = ScalarField::zeros(&masks);
            for idx in 0..masks.dims.len() {
                if masks.cell_fluid[idx] {
                    p.data[idx] = 3.25;
                }
            }
            let g = gradient(&p);
            for comp in 0..masks.dims.dim {
                for v in &g.comps[comp] {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn divergence_of_uniform_periodic_flow_vanishes() {
        let masks = Arc::new(GridMasks::unmasked(GridDims::new(2, 8), BcKind::Periodic));
        let u = VelocityField::from_fn(&masks, |c, _| if c == 0 { 1.0 } else { 0.0 });
        let d = divergence(&u);
        for v in &d.data {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn h1_pair_matches_operator_inner_product() {
        for (k, masks) in test_masks().into_iter().enumerate() {
            let u = random_vel(&masks, 300 + k as u64);
            let v = random_vel(&masks, 400 + k as u64);
            let mut lap = VelocityField::zeros(&masks);
            neg_laplacian(&u, &mut lap);
            let vol = masks.dims.cell_volume();
            let op = vel_dot(&lap, &v) * vol;
            let form = h1_pair(&u, &v);
            assert!(
                (op - form).abs() < 1e-9 * (1.0 + op.abs()),
                "case {k}: {op} vs {form}"
            );
        }
    }

    #[test]
    fn h1_pair_is_bitwise_symmetric_and_psd() {
        for (k, masks) in test_masks().into_iter().enumerate() {
            let u = random_vel(&masks, 500 + k as u64);
            let v = random_vel(&masks, 600 + k as u64);
            assert_eq!(
                h1_pair(&u, &v).to_bits(),
                h1_pair(&v, &u).to_bits(),
                "case {k}"
            );
            assert!(h1_pair(&u, &u) >= 0.0);
        }
    }

    #[test]
    fn laplacian_reproduces_periodic_eigenfunction() {
        // u0 = sin(2π x) cos(2π y) sampled at x-faces is a discrete
        // eigenfunction of the periodic five-point Laplacian.
        let n = 16;
        let masks = Arc::new(GridMasks::unmasked(GridDims::new(2, n), BcKind::Periodic));
        let tau = 2.0 * std::f64::consts::PI;
        let u = VelocityField::from_fn(&masks, |c, p| {
            if c == 0 {
                (tau * p[0]).sin() * (tau * p[1]).cos()
            } else {
                0.0
            }
        });
        let mut lap = VelocityField::zeros(&masks);
        neg_laplacian(&u, &mut lap);
        let h = 1.0 / n as f64;
        let lam = 2.0 * (2.0 - 2.0 * (tau * h).cos()) / (h * h);
        for idx in 0..masks.dims.len() {
            let expect = lam * u.comps[0][idx];
            assert!(
                (lap.comps[0][idx] - expect).abs() < 1e-9 * lam,
                "{} vs {}",
                lap.comps[0][idx],
                expect
            );
        }
    }

    #[test]
    fn wall_closure_doubles_shear_energy() {
        // A single interior x-face with unit value in an otherwise solid-free
        // Dirichlet box: its energy is the sum of two longitudinal edges
        // (2·u²) and 2·u² per transverse neighbor pair when fluid, matching
        // the hand count 4u² on a coarse grid with fluid neighbors.
        let masks = Arc::new(GridMasks::unmasked(GridDims::new(2, 4), BcKind::Dirichlet));
        let mut u = VelocityField::zeros(&masks);
        let idx = masks.dims.idx([2, 1, 0]);
        assert!(masks.face_fluid[0][idx]);
        u.comps[0][idx] = 1.0;
        // Edges: along x, (u−0)² twice; along y, fluid neighbors at j=0 and
        // j=2 give (u−0)² twice. Scale h^{d−2} = 1 for d = 2.
        assert_eq!(h1_pair(&u, &u), 4.0);
        // Move next to the y-wall: the transverse wall edge contributes 2u²
        // instead of u².
        let mut u = VelocityField::zeros(&masks);
        let idx = masks.dims.idx([2, 0, 0]);
        u.comps[0][idx] = 1.0;
        assert_eq!(h1_pair(&u, &u), 5.0);
    }

    #[test]
    fn face_to_cell_average_recovers_linear_profile() {
        let masks = Arc::new(GridMasks::unmasked(GridDims::new(2, 8), BcKind::Dirichlet));
        let u = VelocityField::from_fn(&masks, |c, p| if c == 0 { p[0] } else { 0.0 });
        let avg = face_to_cell_avg(&u, 0);
        let dims = masks.dims;
        for i0 in 1..7 {
            for i1 in 0..8 {
                let c = dims.cell_center([i0, i1, 0]);
                let got = avg[dims.idx([i0, i1, 0])];
                assert!((got - c[0]).abs() < 1e-14, "{got} vs {}", c[0]);
            }
        }
    }

    #[test]
    fn norms_scale_with_grid_volume() {
        let masks = Arc::new(GridMasks::unmasked(GridDims::new(2, 8), BcKind::Periodic));
        let u = VelocityField::from_fn(&masks, |c, _| if c == 0 { 2.0 } else { 0.0 });
        // Constant 2 on one component: L² norm is 2.
        assert!((l2_norm_vel(&u) - 2.0).abs() < 1e-14);
        let p = ScalarField::from_fn(&masks, |_| -3.0);
        assert!((l2_norm_scalar(&p) - 3.0).abs() < 1e-14);
    }
}
