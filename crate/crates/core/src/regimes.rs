//! Scale parameters and regime classification for perforated domains.
//!
//! A perforated configuration is described by the period `epsilon` of the hole
//! lattice and the hole size `a_eps`, with `0 < a_eps < epsilon <= 1`. Two
//! derived quantities control the asymptotics:
//!
//! * the size ratio `sigma`,
//!     `sigma = (epsilon^d / a_eps^(d-2))^(1/2)`        for `d >= 3`,
//!     `sigma = epsilon * |log(a_eps/epsilon)|^(1/2)`   for `d = 2`;
//! * the cell scale `c_eta` with `eta = a_eps / epsilon`,
//!     `c_eta = eta^((d-2)/2)`        for `d >= 3`,
//!     `c_eta = |log eta|^(-1/2)`     for `d = 2`.
//!
//! They satisfy `sigma * c_eta = epsilon` identically; the implementation
//! keeps that identity to a few ulp by deriving both factors from one shared
//! intermediate.
//!
//! As `epsilon -> 0` along a scaling family `a_eps = a(epsilon)`, the behavior
//! of `sigma` sorts the configuration into one of three regimes: vanishing
//! `sigma` (holes dominate, Darcy limit), diverging `sigma` (holes vanish,
//! Stokes limit), or a finite positive limit (Brinkman limit).

use crate::error::{Error, Result};

/// Fully derived scale parameters for one `(dim, epsilon, a_eps)` triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    pub dim: usize,
    pub epsilon: f64,
    pub a_eps: f64,
    /// Hole-to-period ratio `a_eps / epsilon`, in `(0, 1)`.
    pub eta: f64,
    /// Cell scale `c_eta`.
    pub c_eta: f64,
    /// Size ratio `sigma`.
    pub sigma: f64,
}

/// A rule `epsilon -> a_eps` describing how holes shrink with the period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingKind {
    /// `a_eps = coeff * epsilon^gamma` with `gamma >= 1` (and `coeff < 1` when `gamma = 1`).
    PowerLaw { coeff: f64, gamma: f64 },
    /// `a_eps = epsilon * exp(-sigma_star^2 / epsilon^2)`; two dimensions only.
    LogCritical { sigma_star: f64 },
}

/// A scaling family in a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFamily {
    pub dim: usize,
    pub kind: ScalingKind,
}

/// Limit regime of a scaling family as `epsilon -> 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `sigma -> infinity`: the holes are too small to matter; Stokes limit.
    SmallHoles,
    /// `sigma -> sigma_star in (0, infinity)`: Brinkman limit.
    Critical { sigma_star: f64 },
    /// `sigma -> 0`: the holes dominate; Darcy limit.
    LargeHoles,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::SmallHoles => write!(f, "small-holes (Stokes limit)"),
            Regime::Critical { sigma_star } => {
                write!(f, "critical (Brinkman limit, sigma* = {sigma_star})")
            }
            Regime::LargeHoles => write!(f, "large-holes (Darcy limit)"),
        }
    }
}

/// `eta^(d-2)` by repeated multiplication (exact integer exponent).
fn int_pow(x: f64, k: usize) -> f64 {
    let mut r = 1.0;
    for _ in 0..k {
        r *= x;
    }
    r
}

/// Cell scale `c_eta` for a given dimension and ratio `eta in (0, 1)`.
pub fn c_eta(dim: usize, eta: f64) -> f64 {
    if dim == 2 {
        1.0 / (-eta.ln()).sqrt()
    } else {
        int_pow(eta, dim - 2).sqrt()
    }
}

/// Size ratio `sigma` for a given dimension, period, and hole size.
pub fn sigma_eps(dim: usize, epsilon: f64, a_eps: f64) -> f64 {
    let eta = a_eps / epsilon;
    if dim == 2 {
        epsilon * (-eta.ln()).sqrt()
    } else {
        epsilon * (1.0 / int_pow(eta, dim - 2)).sqrt()
    }
}

/// Derive all scale parameters from `(dim, epsilon, a_eps)`.
///
/// Checks `dim >= 2` and the strict ordering `0 < a_eps < epsilon <= 1`
/// (`a_eps == epsilon` is reported as [`Error::DegenerateEta`]). The returned
/// `sigma` and `c_eta` satisfy `sigma * c_eta = epsilon` to a few ulp.
pub fn derive_params(dim: usize, epsilon: f64, a_eps: f64) -> Result<RegimeParams> {
    if dim < 2 {
        return Err(Error::OrderingViolation(format!(
            "dim = {dim}, but the model needs dim >= 2"
        )));
    }
    if !epsilon.is_finite() || !a_eps.is_finite() {
        return Err(Error::OrderingViolation(format!(
            "non-finite scales: epsilon = {epsilon}, a_eps = {a_eps}"
        )));
    }
    if a_eps == epsilon {
        return Err(Error::DegenerateEta(epsilon));
    }
    if !(0.0 < a_eps && a_eps < epsilon && epsilon <= 1.0) {
        return Err(Error::OrderingViolation(format!(
            "need 0 < a_eps < epsilon <= 1, got a_eps = {a_eps}, epsilon = {epsilon}"
        )));
    }

    let eta = a_eps / epsilon;
    // Share one intermediate between sigma and c_eta so the identity
    // sigma * c_eta = epsilon cancels exactly up to rounding.
    let (c, s) = if dim == 2 {
        let log = -eta.ln();
        ((1.0 / log.sqrt()), epsilon * log.sqrt())
    } else {
        let pow = int_pow(eta, dim - 2);
        (pow.sqrt(), epsilon * (1.0 / pow).sqrt())
    };
    Ok(RegimeParams {
        dim,
        epsilon,
        a_eps,
        eta,
        c_eta: c,
        sigma: s,
    })
}

impl ScalingFamily {
    /// Build a family, validating the parameter ranges.
    pub fn new(dim: usize, kind: ScalingKind) -> Result<Self> {
        if dim < 2 {
            return Err(Error::OrderingViolation(format!(
                "dim = {dim}, but the model needs dim >= 2"
            )));
        }
        match kind {
            ScalingKind::PowerLaw { coeff, gamma } => {
                if !(coeff > 0.0) || !coeff.is_finite() {
                    return Err(Error::OrderingViolation(format!(
                        "power-law coeff must be positive and finite, got {coeff}"
                    )));
                }
                if !(gamma >= 1.0) || !gamma.is_finite() {
                    return Err(Error::OrderingViolation(format!(
                        "power-law gamma must satisfy gamma >= 1, got {gamma}"
                    )));
                }
                // Proportional holes larger than the cell are meaningless.
                // The boundary coeff = 1 (holes as large as the cells) is
                // accepted here so the family can still be classified; any
                // attempt to realize its geometry fails as degenerate.
                if gamma == 1.0 && coeff > 1.0 {
                    return Err(Error::OrderingViolation(format!(
                        "power-law with gamma = 1 requires coeff <= 1 so a_eps <= epsilon, got coeff = {coeff}"
                    )));
                }
            }
            ScalingKind::LogCritical { sigma_star } => {
                if dim != 2 {
                    return Err(Error::UnsupportedFamily(format!(
                        "logcritical is defined only in dimension 2, got dim = {dim}"
                    )));
                }
                if !(sigma_star > 0.0) || !sigma_star.is_finite() {
                    return Err(Error::OrderingViolation(format!(
                        "logcritical sigma* must be positive and finite, got {sigma_star}"
                    )));
                }
            }
        }
        Ok(ScalingFamily { dim, kind })
    }

    /// Hole size `a_eps` prescribed by the family at period `epsilon`.
    pub fn a_eps(&self, epsilon: f64) -> f64 {
        match self.kind {
            ScalingKind::PowerLaw { coeff, gamma } => coeff * epsilon.powf(gamma),
            ScalingKind::LogCritical { sigma_star } => {
                epsilon * (-(sigma_star * sigma_star) / (epsilon * epsilon)).exp()
            }
        }
    }
}

/// Classify the limit regime of a scaling family.
///
/// For `d >= 3` power laws the critical exponent is `gamma = d/(d-2)`; at that
/// exponent `sigma -> coeff^(-(d-2)/2)`. In two dimensions every power law has
/// `sigma -> 0`, and `logcritical` families have `sigma = sigma_star`
/// identically. Families outside this table (for example `logcritical` with
/// `d != 2`) are rejected as [`Error::UnsupportedFamily`].
pub fn classify(family: &ScalingFamily) -> Result<Regime> {
    // Re-validate so classification is safe on hand-built values too.
    let family = ScalingFamily::new(family.dim, family.kind)?;
    match family.kind {
        ScalingKind::LogCritical { sigma_star } => Ok(Regime::Critical { sigma_star }),
        ScalingKind::PowerLaw { coeff, gamma } => {
            if family.dim == 2 {
                return Ok(Regime::LargeHoles);
            }
            let d = family.dim as f64;
            let gamma_crit = d / (d - 2.0);
            if gamma < gamma_crit {
                Ok(Regime::LargeHoles)
            } else if gamma > gamma_crit {
                Ok(Regime::SmallHoles)
            } else {
                let exponent = -(d - 2.0) / 2.0;
                Ok(Regime::Critical {
                    sigma_star: coeff.powf(exponent),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::ulp_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example_3d() {
        let p = derive_params(3, 0.5, 0.125).unwrap();
        assert_eq!(p.eta, 0.25);
        assert_eq!(p.c_eta, 0.5);
        assert_eq!(p.sigma, 1.0);
    }

    #[test]
    fn worked_example_2d() {
        let p = derive_params(2, 0.1, 0.01).unwrap();
        assert!((p.eta - 0.1).abs() < 1e-15);
        // c_eta = |log 0.1|^(-1/2), sigma = 0.1 * |log 0.1|^(1/2)
        assert!((p.c_eta - 0.659_010_2).abs() < 1e-6);
        assert!((p.sigma - 0.151_742_7).abs() < 1e-6);
    }

    #[test]
    fn equal_scales_are_degenerate() {
        match derive_params(2, 0.5, 0.5) {
            Err(Error::DegenerateEta(e)) => assert_eq!(e, 0.5),
            other => panic!("expected DegenerateEta, got {other:?}"),
        }
    }

    #[test]
    fn ordering_violations_are_rejected() {
        assert!(matches!(
            derive_params(2, 0.5, 0.6),
            Err(Error::OrderingViolation(_))
        ));
        assert!(matches!(
            derive_params(2, 1.5, 0.5),
            Err(Error::OrderingViolation(_))
        ));
        assert!(matches!(
            derive_params(2, 0.5, 0.0),
            Err(Error::OrderingViolation(_))
        ));
        assert!(matches!(
            derive_params(1, 0.5, 0.25),
            Err(Error::OrderingViolation(_))
        ));
    }

    #[test]
    fn product_identity_holds_to_a_few_ulp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let dim = rng.gen_range(2..=5usize);
            let epsilon: f64 = rng.gen_range(1e-4..=1.0f64);
            // Log-uniform hole size across many decades, including eta near 1.
            let eta = (rng.gen_range(-12.0..-1e-3f64)).exp2();
            let a_eps = eta * epsilon;
            if a_eps <= 0.0 || a_eps >= epsilon {
                continue;
            }
            let p = derive_params(dim, epsilon, a_eps).unwrap();
            let d = ulp_distance(p.sigma * p.c_eta, p.epsilon);
            assert!(
                d <= 4,
                "identity off by {d} ulp at dim={dim} eps={epsilon} a={a_eps}"
            );
        }
    }

    #[test]
    fn c_eta_is_monotone_in_eta() {
        for dim in [2usize, 3, 4] {
            let mut last = 0.0;
            for k in 1..200 {
                let eta = k as f64 / 200.0;
                let c = c_eta(dim, eta);
                assert!(c > last, "c_eta not increasing at dim={dim} eta={eta}");
                last = c;
            }
        }
    }

    #[test]
    fn classify_covers_the_table() {
        // Tartar scaling: fixed eta, sigma -> 0.
        let tartar = ScalingFamily::new(
            3,
            ScalingKind::PowerLaw {
                coeff: 0.9,
                gamma: 1.0,
            },
        )
        .unwrap();
        assert_eq!(classify(&tartar).unwrap(), Regime::LargeHoles);

        // 3D critical exponent gamma = 3 with coeff 1 gives sigma* = 1.
        let crit = ScalingFamily::new(
            3,
            ScalingKind::PowerLaw {
                coeff: 1.0,
                gamma: 3.0,
            },
        )
        .unwrap();
        assert_eq!(
            classify(&crit).unwrap(),
            Regime::Critical { sigma_star: 1.0 }
        );

        // Same exponent, coeff 4: sigma* = 4^(-1/2) = 0.5.
        let crit4 = ScalingFamily::new(
            3,
            ScalingKind::PowerLaw {
                coeff: 4.0,
                gamma: 3.0,
            },
        )
        .unwrap();
        assert_eq!(
            classify(&crit4).unwrap(),
            Regime::Critical { sigma_star: 0.5 }
        );

        // Above the critical exponent the holes vanish.
        let small = ScalingFamily::new(
            3,
            ScalingKind::PowerLaw {
                coeff: 1.0,
                gamma: 4.0,
            },
        )
        .unwrap();
        assert_eq!(classify(&small).unwrap(), Regime::SmallHoles);

        // Every 2D power law is large-holes.
        let pl2 = ScalingFamily::new(
            2,
            ScalingKind::PowerLaw {
                coeff: 0.2,
                gamma: 1.0,
            },
        )
        .unwrap();
        assert_eq!(classify(&pl2).unwrap(), Regime::LargeHoles);
        let pl2b = ScalingFamily::new(
            2,
            ScalingKind::PowerLaw {
                coeff: 1.0,
                gamma: 2.0,
            },
        )
        .unwrap();
        assert_eq!(classify(&pl2b).unwrap(), Regime::LargeHoles);

        // 2D logcritical hits the Brinkman regime with the given sigma*.
        let lc = ScalingFamily::new(2, ScalingKind::LogCritical { sigma_star: 2.0 }).unwrap();
        assert_eq!(
            classify(&lc).unwrap(),
            Regime::Critical { sigma_star: 2.0 }
        );
    }

    #[test]
    fn logcritical_outside_2d_is_unsupported() {
        assert!(matches!(
            ScalingFamily::new(3, ScalingKind::LogCritical { sigma_star: 1.0 }),
            Err(Error::UnsupportedFamily(_))
        ));
        let bogus = ScalingFamily {
            dim: 3,
            kind: ScalingKind::LogCritical { sigma_star: 1.0 },
        };
        assert!(matches!(
            classify(&bogus),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn gamma_one_with_large_coeff_is_rejected() {
        assert!(matches!(
            ScalingFamily::new(
                2,
                ScalingKind::PowerLaw {
                    coeff: 1.2,
                    gamma: 1.0
                }
            ),
            Err(Error::OrderingViolation(_))
        ));
    }

    #[test]
    fn classification_matches_numerical_sigma_trend() {
        // Evaluate sigma along shrinking epsilon and check the trend agrees
        // with the classification, independent of absolute scale. The
        // log-critical family needs moderate epsilon so exp(-sigma*^2/eps^2)
        // stays above the f64 underflow threshold.
        let cases = [
            (
                ScalingFamily::new(
                    3,
                    ScalingKind::PowerLaw {
                        coeff: 0.5,
                        gamma: 2.0,
                    },
                )
                .unwrap(),
                Regime::LargeHoles,
                [1e-2, 1e-3, 1e-4],
            ),
            (
                ScalingFamily::new(
                    3,
                    ScalingKind::PowerLaw {
                        coeff: 2.0,
                        gamma: 4.0,
                    },
                )
                .unwrap(),
                Regime::SmallHoles,
                [1e-2, 1e-3, 1e-4],
            ),
            (
                ScalingFamily::new(2, ScalingKind::LogCritical { sigma_star: 1.5 }).unwrap(),
                Regime::Critical { sigma_star: 1.5 },
                [0.2, 0.1, 0.06],
            ),
        ];
        for (family, expected, eps_list) in cases {
            assert_eq!(classify(&family).unwrap(), expected);
            let sig = |eps: f64| sigma_eps(family.dim, eps, family.a_eps(eps));
            let (s1, s2, s3) = (sig(eps_list[0]), sig(eps_list[1]), sig(eps_list[2]));
            match expected {
                Regime::LargeHoles => assert!(s1 > s2 && s2 > s3),
                Regime::SmallHoles => assert!(s1 < s2 && s2 < s3),
                Regime::Critical { sigma_star } => {
                    for s in [s1, s2, s3] {
                        assert!((s - sigma_star).abs() < 1e-10 * sigma_star);
                    }
                }
            }
        }
    }
}
