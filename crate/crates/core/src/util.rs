//! Small numeric helpers shared across modules.

/// Distance between two finite floats in units in the last place, measured on
/// the integer lattice of the IEEE-754 representation. Returns `u64::MAX` for
/// NaNs or mixed-sign pairs that are not both zero.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a.is_nan() || b.is_nan() {
        return u64::MAX;
    }
    if a == b {
        return 0;
    }
    if (a < 0.0) != (b < 0.0) {
        return u64::MAX;
    }
    let (x, y) = (a.abs().to_bits(), b.abs().to_bits());
    x.abs_diff(y)
}

/// Smallest power of two `>= n` (and `>= 1`).
pub fn next_pow2(n: usize) -> usize {
    let mut p = 1usize;
    while p < n {
        p *= 2;
    }
    p
}

/// Least-squares straight line `y = slope * x + intercept` through the points.
/// Returns `(slope, intercept)`. With a single point the slope is zero.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (0.0, ys.first().copied().unwrap_or(0.0));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Format a float with 17 significant digits, enough to round-trip `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Ratio of the largest to the smallest entry of a positive sequence.
/// Returns `f64::INFINITY` when the sequence touches zero or is empty.
pub fn band_ratio(values: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &v in values {
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// LU factorization with partial pivoting, in place. Returns the row
/// permutation. Used for dense reference solves on tiny systems and for
/// inverting small coefficient matrices.
pub fn lu_factor(a: &mut [Vec<f64>]) -> crate::error::Result<Vec<usize>> {
    let n = a.len();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut best = k;
        let mut best_val = a[k][k].abs();
        for r in (k + 1)..n {
            if a[r][k].abs() > best_val {
                best = r;
                best_val = a[r][k].abs();
            }
        }
        if best_val == 0.0 {
            return Err(crate::error::Error::SingularSystem(format!(
                "zero pivot at column {k} of {n}"
            )));
        }
        a.swap(k, best);
        piv.swap(k, best);
        let pivot = a[k][k];
        for r in (k + 1)..n {
            let m = a[r][k] / pivot;
            a[r][k] = m;
            for c in (k + 1)..n {
                a[r][c] -= m * a[k][c];
            }
        }
    }
    Ok(piv)
}

/// Back-substitution against a factorization from `lu_factor`.
pub fn lu_solve(lu: &[Vec<f64>], piv: &[usize], b: &[f64]) -> Vec<f64> {
    let n = lu.len();
    let mut x: Vec<f64> = piv.iter().map(|&p| b[p]).collect();
    for k in 0..n {
        for c in 0..k {
            x[k] -= lu[k][c] * x[c];
        }
    }
    for k in (0..n).rev() {
        for c in (k + 1)..n {
            x[k] -= lu[k][c] * x[c];
        }
        x[k] /= lu[k][k];
    }
    x
}

/// Solve a dense square system by LU with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, b: &[f64]) -> crate::error::Result<Vec<f64>> {
    let piv = lu_factor(&mut a)?;
    Ok(lu_solve(&a, &piv, b))
}

/// Invert the leading `d×d` block of a small matrix.
pub fn invert_small(a: &[[f64; 3]; 3], d: usize) -> crate::error::Result<[[f64; 3]; 3]> {
    let mut m: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|c| a[r][c]).collect()).collect();
    let piv = lu_factor(&mut m)?;
    let mut inv = [[0.0; 3]; 3];
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        let col = lu_solve(&m, &piv, &e);
        for r in 0..d {
            inv[r][c] = col[r];
        }
    }
    Ok(inv)
}

/// Cholesky-based SPD check on the leading `d×d` block: errors with the
/// caller's context when the matrix is not symmetric positive definite.
pub fn check_spd(a: &[[f64; 3]; 3], d: usize, context: &str) -> crate::error::Result<()> {
    for r in 0..d {
        for c in 0..d {
            let denom = 1.0 + a[r][c].abs().max(a[c][r].abs());
            if (a[r][c] - a[c][r]).abs() > 1e-10 * denom {
                return Err(crate::error::Error::NotSpd(format!(
                    "{context}: asymmetric entry ({r},{c}): {} vs {}",
                    a[r][c], a[c][r]
                )));
            }
        }
    }
    let mut l = [[0.0f64; 3]; 3];
    for r in 0..d {
        for c in 0..=r {
            let mut s = a[r][c];
            for k in 0..c {
                s -= l[r][k] * l[c][k];
            }
            if r == c {
                if s <= 0.0 {
                    return Err(crate::error::Error::NotSpd(format!(
                        "{context}: nonpositive pivot {s} at row {r}"
                    )));
                }
                l[r][c] = s.sqrt();
            } else {
                l[r][c] = s / l[c][c];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ulp_distance_counts_representable_steps() {
        assert_eq!(ulp_distance(1.0, 1.0), 0);
        assert_eq!(ulp_distance(1.0, 1.0 + f64::EPSILON), 1);
        assert_eq!(ulp_distance(-1.0, -(1.0 + f64::EPSILON)), 1);
        assert_eq!(ulp_distance(1.0, -1.0), u64::MAX);
    }

    #[test]
    fn next_pow2_rounds_up() {
        assert_eq!(next_pow2(1), 1);
        assert_eq!(next_pow2(17), 32);
        assert_eq!(next_pow2(64), 64);
        assert_eq!(next_pow2(65), 128);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs = [0.1, 0.2, 0.4, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 0.5).collect();
        let (slope, intercept) = linear_fit(&xs, &ys);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((intercept + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fmt_f64_round_trips() {
        for &x in &[std::f64::consts::PI, 1.0 / 3.0, 6.02e23, -0.1] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn band_ratio_spans_positive_sequences() {
        assert!((band_ratio(&[2.0, 4.0, 3.0]) - 2.0).abs() < 1e-15);
        assert_eq!(band_ratio(&[1.0, 0.0]), f64::INFINITY);
        assert_eq!(band_ratio(&[]), f64::INFINITY);
    }

    #[test]
    fn dense_solve_recovers_known_solution() {
        // Random-ish well-conditioned system with a hand-checkable solution.
        let a = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|c| a[r][c] * x_true[c]).sum())
            .collect();
        let x = solve_dense(a, &b).unwrap();
        for (got, want) in x.iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_solve_rejects_singular_matrix() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_dense(a, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn small_inverse_multiplies_to_identity() {
        let a = [[2.0, 0.5, 0.0], [0.5, 3.0, -1.0], [0.0, -1.0, 4.0]];
        let inv = invert_small(&a, 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[r][k] * inv[k][c];
                }
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12, "({r},{c}): {s}");
            }
        }
    }

    #[test]
    fn spd_check_accepts_spd_and_rejects_indefinite() {
        let spd = [[2.0, 0.5, 0.0], [0.5, 3.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(check_spd(&spd, 3, "test").is_ok());
        let indef = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(check_spd(&indef, 2, "test").is_err());
        let asym = [[1.0, 0.3, 0.0], [0.2, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(check_spd(&asym, 2, "test").is_err());
    }
}
