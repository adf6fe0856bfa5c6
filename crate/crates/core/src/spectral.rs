//! Fourier-side constructions on the periodic grid: a right inverse of the
//! discrete divergence and the Poisson preconditioner used by the momentum
//! solver.

use crate::error::{Error, Result};
use crate::fft;
use crate::geometry::{BcKind, GridMasks};
use crate::grid::{GridDims, ScalarField, VelocityField};
use rustfft::num_complex::Complex64;
use std::sync::Arc;

/// Solve `div u = f` on the periodic torus by the minimal-norm Fourier
/// construction and report the stability constant `‖u‖_{H¹} / ‖f‖_{L²}`.
///
/// The forward-difference divergence has the per-axis symbol
/// `D_a(k) = (e^{2πi k_a/N} − 1) N`, and the returned field is
/// `û_a = conj(D_a) f̂ / Σ_b |D_b|²`, which satisfies the equation to
/// round-off. Fails with `NonZeroMean` when the data has no solution, i.e.
/// its grid mean is not (numerically) zero.
pub fn inverse_divergence(f: &ScalarField) -> Result<(VelocityField, f64)> {
    let dims = f.dims();
    if f.masks.bc != BcKind::Periodic {
        return Err(Error::Config(
            "inverse divergence is defined on the periodic torus".into(),
        ));
    }
    let linf = f.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = f.data.iter().sum::<f64>() / dims.len() as f64;
    let tol = 1e-10 * (1.0 + linf);
    if mean.abs() > tol {
        return Err(Error::NonZeroMean { mean, tol });
    }

    let mut fhat: Vec<Complex64> = f.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::forward(dims, &mut fhat);

    let n = dims.n as f64;
    let tau = 2.0 * std::f64::consts::PI;
    // Per-axis symbols, tabulated once.
    let symbol: Vec<Complex64> = (0..dims.n)
        .map(|k| {
            let th = tau * k as f64 / n;
            Complex64::new(th.cos() - 1.0, th.sin()) * n
        })
        .collect();

    let torus = Arc::new(GridMasks::unmasked(dims, BcKind::Periodic));
    let mut u = VelocityField::zeros(&torus);
    let mut buf = vec![Complex64::default(); dims.len()];
    for comp in 0..dims.dim {
        for idx in 0..dims.len() {
            let i = dims.decode(idx);
            let mut denom = 0.0;
            for b in 0..dims.dim {
                denom += symbol[i[b]].norm_sqr();
            }
            buf[idx] = if denom == 0.0 {
                Complex64::default()
            } else {
                symbol[i[comp]].conj() * fhat[idx] / denom
            };
        }
        fft::inverse(dims, &mut buf);
        for idx in 0..dims.len() {
            u.comps[comp][idx] = buf[idx].re;
        }
    }

    let fl2 = crate::ops::l2_norm_scalar(f);
    let constant = if fl2 == 0.0 {
        0.0
    } else {
        let l2 = crate::ops::l2_norm_vel(&u);
        let h1 = crate::ops::h1_seminorm(&u);
        (l2 * l2 + h1 * h1).sqrt() / fl2
    };
    Ok((u, constant))
}

/// Spectral inverse of the constant-coefficient operator `−Δ_h + shift` on
/// the periodic torus, applied component-wise behind the fluid mask.
///
/// Used as a preconditioner for the masked momentum operator: the mask
/// sandwich `P r = mask ∘ F⁻¹ Λ⁻¹ F ∘ mask(r)` is symmetric positive
/// definite on the fluid subspace. When `shift = 0` the zero mode divides by
/// the smallest nonzero eigenvalue instead (any positive value keeps the
/// preconditioner definite; constants are controlled by the outer solver).
pub struct PoissonPrecond {
    dims: GridDims,
    inv_symbol: Vec<f64>,
    /// Transform workspace, reused across applications: a fresh multi-megabyte
    /// allocation per apply costs more in page faults than the arithmetic it
    /// carries. Interior mutability keeps `apply` callable through `&self`
    /// inside solver closures; solves are single-threaded.
    scratch: std::cell::RefCell<Vec<Complex64>>,
}

impl PoissonPrecond {
    pub fn new(dims: GridDims, shift: f64) -> Self {
        assert!(shift >= 0.0 && shift.is_finite());
        let tau = 2.0 * std::f64::consts::PI;
        let n2 = (dims.n as f64) * (dims.n as f64);
        let lam_axis: Vec<f64> = (0..dims.n)
            .map(|k| (2.0 - 2.0 * (tau * k as f64 / dims.n as f64).cos()) * n2)
            .collect();
        let fallback = lam_axis[1] + shift;
        let mut inv_symbol = vec![0.0; dims.len()];
        for idx in 0..dims.len() {
            let i = dims.decode(idx);
            let mut lam = shift;
            for b in 0..dims.dim {
                lam += lam_axis[i[b]];
            }
            inv_symbol[idx] = if lam > 0.0 { 1.0 / lam } else { 1.0 / fallback };
        }
        PoissonPrecond {
            dims,
            inv_symbol,
            scratch: std::cell::RefCell::new(vec![Complex64::default(); dims.len()]),
        }
    }

    /// One filtered transform pass: `buf ← F⁻¹ Λ⁻¹ F buf`.
    fn filter(&self, buf: &mut [Complex64]) {
        fft::forward(self.dims, buf);
        for (v, s) in buf.iter_mut().zip(&self.inv_symbol) {
            *v *= *s;
        }
        fft::inverse(self.dims, buf);
    }

    /// Masked application to a single cell- or face-shaped array.
    pub fn apply_scalar(&self, fluid: &[bool], r: &[f64], out: &mut [f64]) {
        let mut buf = self.scratch.borrow_mut();
        for idx in 0..self.dims.len() {
            buf[idx] = Complex64::new(if fluid[idx] { r[idx] } else { 0.0 }, 0.0);
        }
        self.filter(&mut buf);
        for idx in 0..self.dims.len() {
            out[idx] = if fluid[idx] { buf[idx].re } else { 0.0 };
        }
    }

    /// `out = P r` over all components of a face field. The symbol is real and
    /// even in every wavenumber, so the filter is a real operator and two
    /// components can ride one complex transform as its real and imaginary
    /// parts.
    pub fn apply(&self, masks: &GridMasks, r: &VelocityField, out: &mut VelocityField) {
        let dims = self.dims;
        let mut comp = 0;
        while comp < dims.dim {
            if comp + 1 < dims.dim {
                let fa = &masks.face_fluid[comp];
                let fb = &masks.face_fluid[comp + 1];
                {
                    let mut buf = self.scratch.borrow_mut();
                    for idx in 0..dims.len() {
                        buf[idx] = Complex64::new(
                            if fa[idx] { r.comps[comp][idx] } else { 0.0 },
                            if fb[idx] { r.comps[comp + 1][idx] } else { 0.0 },
                        );
                    }
                    self.filter(&mut buf);
                    for idx in 0..dims.len() {
                        out.comps[comp][idx] = if fa[idx] { buf[idx].re } else { 0.0 };
                        out.comps[comp + 1][idx] = if fb[idx] { buf[idx].im } else { 0.0 };
                    }
                }
                comp += 2;
            } else {
                self.apply_scalar(&masks.face_fluid[comp], &r.comps[comp], &mut out.comps[comp]);
                comp += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_mean_field(dims: GridDims, seed: u64) -> ScalarField {
        let masks = Arc::new(GridMasks::unmasked(dims, BcKind::Periodic));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ScalarField::zeros(&masks);
        for v in f.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mean = f.data.iter().sum::<f64>() / dims.len() as f64;
        for v in f.data.iter_mut() {
            *v -= mean;
        }
        f
    }

    #[test]
    fn inverse_divergence_solves_the_equation() {
        for dim in [2usize, 3] {
            let dims = GridDims::new(dim, 12);
            let f = zero_mean_field(dims, 42 + dim as u64);
            let (u, constant) = inverse_divergence(&f).unwrap();
            let div = ops::divergence(&u);
            for idx in 0..dims.len() {
                assert!(
                    (div.data[idx] - f.data[idx]).abs() < 1e-10,
                    "dim {dim} idx {idx}: {} vs {}",
                    div.data[idx],
                    f.data[idx]
                );
            }
            assert!(constant.is_finite() && constant > 0.0);
        }
    }

    #[test]
    fn inverse_divergence_rejects_nonzero_mean() {
        let dims = GridDims::new(2, 8);
        let masks = Arc::new(GridMasks::unmasked(dims, BcKind::Periodic));
        let mut f = ScalarField::zeros(&masks);
        for v in f.data.iter_mut() {
            *v = 0.5;
        }
        match inverse_divergence(&f) {
            Err(Error::NonZeroMean { mean, .. }) => assert!((mean - 0.5).abs() < 1e-15),
            other => panic!("expected NonZeroMean, got {other:?}"),
        }
    }

    #[test]
    fn preconditioner_inverts_the_unmasked_operator() {
        let dims = GridDims::new(2, 16);
        let masks = Arc::new(GridMasks::unmasked(dims, BcKind::Periodic));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut u = VelocityField::zeros(&masks);
        for comp in 0..2 {
            for v in u.comps[comp].iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let mean = u.comps[comp].iter().sum::<f64>() / dims.len() as f64;
            for v in u.comps[comp].iter_mut() {
                *v -= mean;
            }
        }
        let mut au = VelocityField::zeros(&masks);
        ops::neg_laplacian(&u, &mut au);
        let pre = PoissonPrecond::new(dims, 0.0);
        let mut back = VelocityField::zeros(&masks);
        pre.apply(&masks, &au, &mut back);
        for comp in 0..2 {
            for idx in 0..dims.len() {
                assert!(
                    (back.comps[comp][idx] - u.comps[comp][idx]).abs() < 1e-10,
                    "comp {comp} idx {idx}"
                );
            }
        }
    }

    #[test]
    fn shifted_preconditioner_inverts_shifted_operator() {
        let dims = GridDims::new(2, 8);
        let masks = Arc::new(GridMasks::unmasked(dims, BcKind::Periodic));
        let shift = 3.5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut u = VelocityField::zeros(&masks);
        for comp in 0..2 {
            for v in u.comps[comp].iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        // (−Δ + shift) u, including the zero mode since shift > 0.
        let mut au = VelocityField::zeros(&masks);
        ops::neg_laplacian(&u, &mut au);
        for comp in 0..2 {
            for idx in 0..dims.len() {
                au.comps[comp][idx] += shift * u.comps[comp][idx];
            }
        }
        let pre = PoissonPrecond::new(dims, shift);
        let mut back = VelocityField::zeros(&masks);
        pre.apply(&masks, &au, &mut back);
        for comp in 0..2 {
            for idx in 0..dims.len() {
                assert!((back.comps[comp][idx] - u.comps[comp][idx]).abs() < 1e-10);
            }
        }
    }
}
