//! Uniform grid bookkeeping and staggered fields.
//!
//! All solvers operate on a marker-and-cell layout over the unit box
//! `[0,1]^d`, `d in {2,3}`, with `N` cells per side and spacing `h = 1/N`:
//!
//! * scalar quantities (pressure, divergence) live at cell centers
//!   `x_a = (i_a + 1/2) h`;
//! * component `a` of a velocity lives at the face centers `x_a = i_a h`,
//!   `x_b = (i_b + 1/2) h` for `b != a`.
//!
//! Arrays are stored row-major with the last axis fastest. Two-dimensional
//! grids use a trailing singleton axis so every loop is a plain triple loop.

use crate::error::{Error, Result};
use crate::geometry::GridMasks;
use std::fmt::Write as _;
use std::sync::Arc;

/// Shape and stride bookkeeping for one `N^d` lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub dim: usize,
    pub n: usize,
    pub shape: [usize; 3],
    pub strides: [usize; 3],
}

impl GridDims {
    pub fn new(dim: usize, n: usize) -> Self {
        assert!(dim == 2 || dim == 3, "grids support dim 2 or 3");
        let shape = [n, n, if dim == 3 { n } else { 1 }];
        let strides = [shape[1] * shape[2], shape[2], 1];
        GridDims {
            dim,
            n,
            shape,
            strides,
        }
    }

    /// Total number of lattice sites.
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    #[inline]
    pub fn idx(&self, i: [usize; 3]) -> usize {
        i[0] * self.strides[0] + i[1] * self.strides[1] + i[2]
    }

    #[inline]
    pub fn decode(&self, idx: usize) -> [usize; 3] {
        let i2 = idx % self.shape[2];
        let r = idx / self.shape[2];
        let i1 = r % self.shape[1];
        let i0 = r / self.shape[1];
        [i0, i1, i2]
    }

    /// Center position of cell `i` (trailing coordinate unused in 2D).
    pub fn cell_center(&self, i: [usize; 3]) -> [f64; 3] {
        let h = self.h();
        [
            (i[0] as f64 + 0.5) * h,
            (i[1] as f64 + 0.5) * h,
            (i[2] as f64 + 0.5) * h,
        ]
    }

    /// Center position of face `i` of velocity component `comp`.
    pub fn face_center(&self, comp: usize, i: [usize; 3]) -> [f64; 3] {
        let h = self.h();
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = if a == comp {
                i[a] as f64 * h
            } else {
                (i[a] as f64 + 0.5) * h
            };
        }
        p
    }
}

/// Cell-centered scalar field bound to the masks of its grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub masks: Arc<GridMasks>,
    pub data: Vec<f64>,
}

/// Face-centered vector field (one array per component) bound to its masks.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub masks: Arc<GridMasks>,
    pub comps: Vec<Vec<f64>>,
}

impl ScalarField {
    pub fn zeros(masks: &Arc<GridMasks>) -> Self {
        ScalarField {
            masks: masks.clone(),
            data: vec![0.0; masks.dims.len()],
        }
    }

    /// Fill from a function of the cell-center position; solid cells stay zero.
    pub fn from_fn(masks: &Arc<GridMasks>, f: impl Fn(&[f64]) -> f64) -> Self {
        let dims = masks.dims;
        let mut out = Self::zeros(masks);
        for idx in 0..dims.len() {
            if masks.cell_fluid[idx] {
                let p = dims.cell_center(dims.decode(idx));
                out.data[idx] = f(&p[..dims.dim]);
            }
        }
        out
    }

    pub fn dims(&self) -> GridDims {
        self.masks.dims
    }

    /// Mean over fluid cells.
    pub fn fluid_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, &fluid) in self.data.iter().zip(&self.masks.cell_fluid) {
            if fluid {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Subtract the fluid mean in place (solid cells remain zero).
    pub fn project_zero_mean(&mut self) {
        let mean = self.fluid_mean();
        for (v, &fluid) in self.data.iter_mut().zip(&self.masks.cell_fluid) {
            if fluid {
                *v -= mean;
            }
        }
    }
}

impl VelocityField {
    pub fn zeros(masks: &Arc<GridMasks>) -> Self {
        let dim = masks.dims.dim;
        VelocityField {
            masks: masks.clone(),
            comps: (0..dim).map(|_| vec![0.0; masks.dims.len()]).collect(),
        }
    }

    /// Fill component-wise from functions of the face-center position; solid
    /// faces stay zero.
    pub fn from_fn(masks: &Arc<GridMasks>, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let dims = masks.dims;
        let mut out = Self::zeros(masks);
        for comp in 0..dims.dim {
            for idx in 0..dims.len() {
                if masks.face_fluid[comp][idx] {
                    let p = dims.face_center(comp, dims.decode(idx));
                    out.comps[comp][idx] = f(comp, &p[..dims.dim]);
                }
            }
        }
        out
    }

    pub fn dims(&self) -> GridDims {
        self.masks.dims
    }

    /// Zero out every solid entry (used after raw array arithmetic).
    pub fn enforce_mask(&mut self) {
        for comp in 0..self.comps.len() {
            for (v, &fluid) in self.comps[comp].iter_mut().zip(&self.masks.face_fluid[comp]) {
                if !fluid {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Flat dot product over every entry of two equally shaped slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Dot product over all components of two velocity fields (count weighting).
pub fn vel_dot(a: &VelocityField, b: &VelocityField) -> f64 {
    a.comps
        .iter()
        .zip(&b.comps)
        .map(|(x, y)| dot(x, y))
        .sum()
}

/// Serialize fields in the dump format: a header `dim N components` followed
/// by each array in row-major order, one value per line.
pub fn dump_fields(dims: GridDims, arrays: &[&[f64]]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", dims.dim, dims.n, arrays.len());
    for arr in arrays {
        for v in *arr {
            let _ = writeln!(out, "{}", crate::util::fmt_f64(*v));
        }
    }
    out
}

/// Parse the dump format back into arrays. The grid shape is returned so the
/// caller can validate it against the target masks.
pub fn parse_fields(text: &str) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty field dump".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "field dump header must be `dim N components`, got `{header}`"
        )));
    }
    let dim: usize = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad dim `{}`", parts[0])))?;
    let n: usize = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad N `{}`", parts[1])))?;
    let ncomp: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad component count `{}`", parts[2])))?;
    let len = GridDims::new(dim, n).len();
    let mut arrays = Vec::with_capacity(ncomp);
    for _ in 0..ncomp {
        let mut arr = Vec::with_capacity(len);
        for _ in 0..len {
            let line = lines
                .next()
                .ok_or_else(|| Error::Config("field dump truncated".into()))?;
            arr.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad float `{line}`")))?,
            );
        }
        arrays.push(arr);
    }
    Ok((dim, n, arrays))
}
