//! Cached d-dimensional complex FFTs on grid-shaped arrays.
//!
//! Transforms are applied axis by axis with plans cached per length. The
//! inverse includes the `1/N^d` normalization so a forward/inverse round
//! trip is the identity.

use crate::grid::GridDims;
use once_cell::sync::Lazy;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

static PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap();
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

fn transform(dims: GridDims, data: &mut [Complex64], inverse: bool) {
    assert_eq!(data.len(), dims.len());
    for axis in 0..3 {
        let n = dims.shape[axis];
        if n == 1 {
            continue;
        }
        let fft = plan(n, inverse);
        let stride = dims.strides[axis];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let mut bounds = dims.shape;
        bounds[axis] = 1;
        if stride == 1 {
            // Contiguous axis: transform the lines where they live.
            for i0 in 0..bounds[0] {
                for i1 in 0..bounds[1] {
                    for i2 in 0..bounds[2] {
                        let base = dims.idx([i0, i1, i2]);
                        fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
                    }
                }
            }
        } else {
            let mut line = vec![Complex64::default(); n];
            for i0 in 0..bounds[0] {
                for i1 in 0..bounds[1] {
                    for i2 in 0..bounds[2] {
                        let base = dims.idx([i0, i1, i2]);
                        for t in 0..n {
                            line[t] = data[base + t * stride];
                        }
                        fft.process_with_scratch(&mut line, &mut scratch);
                        for t in 0..n {
                            data[base + t * stride] = line[t];
                        }
                    }
                }
            }
        }
    }
    if inverse {
        let scale = 1.0 / dims.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// In-place forward DFT over every grid axis (unnormalized).
pub fn forward(dims: GridDims, data: &mut [Complex64]) {
    transform(dims, data, false);
}

/// In-place inverse DFT over every grid axis (normalized by `1/N^d`).
pub fn inverse(dims: GridDims, data: &mut [Complex64]) {
    transform(dims, data, true);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_identity() {
        for dim in [2usize, 3] {
            let dims = GridDims::new(dim, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let orig: Vec<Complex64> = (0..dims.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut data = orig.clone();
            forward(dims, &mut data);
            inverse(dims, &mut data);
            for (a, b) in data.iter().zip(&orig) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_concentrates_in_one_bin() {
        let dims = GridDims::new(2, 8);
        let tau = 2.0 * std::f64::consts::PI;
        let (k0, k1) = (3usize, 5usize);
        let mut data: Vec<Complex64> = (0..dims.len())
            .map(|idx| {
                let i = dims.decode(idx);
                let phase = tau * (k0 * i[0] + k1 * i[1]) as f64 / 8.0;
                Complex64::new(phase.cos(), phase.sin())
            })
            .collect();
        forward(dims, &mut data);
        for idx in 0..dims.len() {
            let i = dims.decode(idx);
            let expect = if i[0] == k0 && i[1] == k1 {
                dims.len() as f64
            } else {
                0.0
            };
            assert!(
                (data[idx].norm() - expect).abs() < 1e-9,
                "bin {:?}: {}",
                i,
                data[idx].norm()
            );
        }
    }
}
