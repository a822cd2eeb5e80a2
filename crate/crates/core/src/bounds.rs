//! Closed-form generalization-bound calculators.
//!
//! These evaluate the bound expressions numerically; Rademacher
//! complexities and the domain-gap term are user-supplied scalars, not
//! estimated from data. With `L = ln(4/delta)`:
//!
//! Joint fine-tuning bound (base + novel, mixing weight `lambda_c`):
//!
//! ```text
//! risk + (1-l)*gamma + 2(1-l)*R_b + 3(1-l)*sqrt(L/(2*N_b))
//!      + 2l*R_n + 3l*sqrt(L/(2*N_n))
//!      + sqrt((L/2) * ((1-l)^2/N_b + l^2/N_n))
//! ```
//!
//! Its large-base-set approximation:
//!
//! ```text
//! (1-l)*gamma + 2l*R_n + 4l*sqrt(L/(2*N_n))
//! ```
//!
//! The augmented-training bound follows the same shape over real and
//! augmented samples (`lambda_g`, `R_r`, `R_e`) with the augmented count
//! substituted as `N_e = k_e * N_r`. The comparison report contrasts its
//! assumption-driven sup (risk and gap set to zero by the caller) with
//! the bound of training on real data alone:
//!
//! ```text
//! 2*R_r + 4*sqrt(L/(2*N_r))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar parameter bundle consumed by every formula. Fields omitted
/// from a JSON file fall back to these defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundInputs {
    /// Novel-risk weight in the joint fine-tuning bound, in \[0,1).
    pub lambda_c: f64,
    /// Augmented-risk weight in the augmentation bound, in \[0,1).
    pub lambda_g: f64,
    /// Tail probability, in (0,1).
    pub delta: f64,
    /// Base, novel, and real sample counts.
    pub n_base: u64,
    pub n_novel: u64,
    pub n_real: u64,
    /// Augmented samples per real sample; the comparison needs > 1.
    pub k_e: u64,
    /// User-supplied Rademacher complexity estimates.
    pub rademacher_base: f64,
    pub rademacher_novel: f64,
    pub rademacher_real: f64,
    pub rademacher_aug: f64,
    /// Integral-probability-metric estimate of the domain gap.
    pub gamma_gap: f64,
    /// Empirical training risk.
    pub empirical_risk: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            lambda_c: 0.5,
            lambda_g: 0.5,
            delta: 0.05,
            n_base: 1000,
            n_novel: 50,
            n_real: 100,
            k_e: 3,
            rademacher_base: 0.05,
            rademacher_novel: 0.1,
            rademacher_real: 0.1,
            rademacher_aug: 0.05,
            gamma_gap: 0.0,
            empirical_risk: 0.0,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_c) {
            return Err(Error::invalid(format!("lambda_c {} outside [0,1)", self.lambda_c)));
        }
        if !(0.0..1.0).contains(&self.lambda_g) {
            return Err(Error::invalid(format!("lambda_g {} outside [0,1)", self.lambda_g)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} outside (0,1)", self.delta)));
        }
        if self.n_base == 0 || self.n_novel == 0 || self.n_real == 0 {
            return Err(Error::invalid("sample counts must be positive"));
        }
        for (name, v) in [
            ("rademacher_base", self.rademacher_base),
            ("rademacher_novel", self.rademacher_novel),
            ("rademacher_real", self.rademacher_real),
            ("rademacher_aug", self.rademacher_aug),
            ("gamma_gap", self.gamma_gap),
            ("empirical_risk", self.empirical_risk),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be nonnegative")));
            }
        }
        Ok(())
    }

    fn log_term(&self) -> f64 {
        (4.0 / self.delta).ln()
    }
}

/// Concentration term `sqrt(ln(4/delta) / (2n))`.
fn conc(log_term: f64, n: u64) -> f64 {
    (log_term / (2.0 * n as f64)).sqrt()
}

/// Full joint fine-tuning bound over base and novel samples.
pub fn lemma1_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let l = inputs.lambda_c;
    let log_term = inputs.log_term();
    let mixed = ((log_term / 2.0)
        * ((1.0 - l).powi(2) / inputs.n_base as f64 + l.powi(2) / inputs.n_novel as f64))
        .sqrt();
    Ok(inputs.empirical_risk
        + (1.0 - l) * inputs.gamma_gap
        + 2.0 * (1.0 - l) * inputs.rademacher_base
        + 3.0 * (1.0 - l) * conc(log_term, inputs.n_base)
        + 2.0 * l * inputs.rademacher_novel
        + 3.0 * l * conc(log_term, inputs.n_novel)
        + mixed)
}

/// Large-base-set approximation: risk minimized away, base terms dropped.
/// Affine in `lambda_c` with slope `-gamma + 2 R_n + 4 sqrt(L/(2 N_n))`.
pub fn theorem1_approx(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let l = inputs.lambda_c;
    let log_term = inputs.log_term();
    Ok((1.0 - l) * inputs.gamma_gap
        + 2.0 * l * inputs.rademacher_novel
        + 4.0 * l * conc(log_term, inputs.n_novel))
}

/// Augmented-training bound with `N_e = k_e * N_r` substituted.
pub fn proposition1_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.k_e == 0 {
        return Err(Error::invalid("k_e must be positive"));
    }
    let l = inputs.lambda_g;
    let log_term = inputs.log_term();
    let n_aug = inputs.k_e * inputs.n_real;
    let mixed = ((log_term / 2.0)
        * ((1.0 - l).powi(2) / inputs.n_real as f64 + l.powi(2) / n_aug as f64))
        .sqrt();
    Ok(inputs.empirical_risk
        + (1.0 - l) * inputs.gamma_gap
        + 2.0 * (1.0 - l) * inputs.rademacher_real
        + 3.0 * (1.0 - l) * conc(log_term, inputs.n_real)
        + 2.0 * l * inputs.rademacher_aug
        + 3.0 * l * conc(log_term, n_aug)
        + mixed)
}

/// Outcome of comparing training with and without augmented samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupComparison {
    pub sup_with: f64,
    pub sup_without: f64,
    pub holds: bool,
}

/// Compares the augmented-training sup against the real-data-only sup.
/// The augmented side is the augmentation bound itself; callers encoding
/// the comparison's assumptions pass zero risk and zero gap. Requires
/// `k_e > 1`.
pub fn theorem2_compare(inputs: &BoundInputs) -> Result<SupComparison> {
    inputs.validate()?;
    if inputs.k_e <= 1 {
        return Err(Error::invalid(format!(
            "k_e = {} must exceed 1 for the comparison",
            inputs.k_e
        )));
    }
    let log_term = inputs.log_term();
    let sup_without = 2.0 * inputs.rademacher_real + 4.0 * conc(log_term, inputs.n_real);
    let sup_with = proposition1_bound(inputs)?;
    Ok(SupComparison {
        sup_with,
        sup_without,
        holds: sup_with < sup_without,
    })
}

/// Which monotonicity claim to exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotonicityTarget {
    /// The approximation grows in `lambda_c` exactly when
    /// `2 R_n + 4 sqrt(L/(2 N_n)) > gamma`.
    Theorem1InLambdaC,
    /// The full joint bound shrinks as both sample counts double.
    Lemma1InSampleSizes,
    /// The augmented bound shrinks in `k_e` whenever `lambda_g > 0`.
    Proposition1InKe,
}

/// One grid point that contradicted the claimed direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub inputs: BoundInputs,
    pub detail: String,
}

/// Numeric monotonicity sweep over a parameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub target: MonotonicityTarget,
    pub points_checked: usize,
    /// Points where the derivative-sign condition held.
    pub inside_condition: usize,
    /// Points outside the condition (reported, not violations).
    pub outside_condition: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Checks the chosen claim on every grid point. For the lambda claim, each
/// point is evaluated at increasing lambda values; growth is required
/// exactly where the analytic slope `-gamma + 2 R_n + 4 sqrt(L/(2 N_n))`
/// is positive, decay where it is negative.
pub fn monotonicity_check(
    target: MonotonicityTarget,
    grid: &[BoundInputs],
) -> Result<MonotonicityReport> {
    let mut report = MonotonicityReport {
        target,
        points_checked: 0,
        inside_condition: 0,
        outside_condition: 0,
        counterexamples: Vec::new(),
    };
    for base in grid {
        base.validate()?;
        report.points_checked += 1;
        match target {
            MonotonicityTarget::Theorem1InLambdaC => {
                let log_term = base.log_term();
                let slope =
                    -base.gamma_gap + 2.0 * base.rademacher_novel + 4.0 * conc(log_term, base.n_novel);
                let lambdas = [0.0, 0.25, 0.5, 0.75, 0.999];
                let values: Result<Vec<f64>> = lambdas
                    .iter()
                    .map(|&l| theorem1_approx(&BoundInputs { lambda_c: l, ..*base }))
                    .collect();
                let values = values?;
                let increasing = values.windows(2).all(|w| w[1] >= w[0] - 1e-12);
                let decreasing = values.windows(2).all(|w| w[1] <= w[0] + 1e-12);
                if slope > 0.0 {
                    report.inside_condition += 1;
                    if !increasing {
                        report.counterexamples.push(Counterexample {
                            inputs: *base,
                            detail: format!(
                                "slope {slope} > 0 but values not increasing: {values:?}"
                            ),
                        });
                    }
                } else {
                    report.outside_condition += 1;
                    if !decreasing {
                        report.counterexamples.push(Counterexample {
                            inputs: *base,
                            detail: format!(
                                "slope {slope} <= 0 but values not decreasing: {values:?}"
                            ),
                        });
                    }
                }
            }
            MonotonicityTarget::Lemma1InSampleSizes => {
                report.inside_condition += 1;
                let small = lemma1_bound(base)?;
                let big = lemma1_bound(&BoundInputs {
                    n_base: base.n_base * 2,
                    n_novel: base.n_novel * 2,
                    ..*base
                })?;
                if big >= small {
                    report.counterexamples.push(Counterexample {
                        inputs: *base,
                        detail: format!("doubling samples did not shrink: {small} -> {big}"),
                    });
                }
            }
            MonotonicityTarget::Proposition1InKe => {
                if base.lambda_g > 0.0 {
                    report.inside_condition += 1;
                    let small = proposition1_bound(base)?;
                    let big = proposition1_bound(&BoundInputs {
                        k_e: base.k_e + 1,
                        ..*base
                    })?;
                    if big >= small {
                        report.counterexamples.push(Counterexample {
                            inputs: *base,
                            detail: format!("raising k_e did not shrink: {small} -> {big}"),
                        });
                    }
                } else {
                    report.outside_condition += 1;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent second evaluation path: different factoring, terms
    /// assembled in a vector and summed in reverse order.
    pub fn lemma1_reference(i: &BoundInputs) -> f64 {
        let ln4d = 4.0_f64.ln() - i.delta.ln();
        let one_m = 1.0 - i.lambda_c;
        let terms = vec![
            i.empirical_risk,
            one_m * i.gamma_gap,
            2.0 * one_m * i.rademacher_base,
            3.0 * one_m * (ln4d.sqrt() / (2.0 * i.n_base as f64).sqrt()),
            2.0 * i.lambda_c * i.rademacher_novel,
            3.0 * i.lambda_c * (ln4d.sqrt() / (2.0 * i.n_novel as f64).sqrt()),
            ((ln4d / 2.0)
                * (one_m * one_m / i.n_base as f64
                    + i.lambda_c * i.lambda_c / i.n_novel as f64))
                .sqrt(),
        ];
        terms.into_iter().rev().sum()
    }

    pub fn theorem1_reference(i: &BoundInputs) -> f64 {
        let ln4d = 4.0_f64.ln() - i.delta.ln();
        let terms = vec![
            (1.0 - i.lambda_c) * i.gamma_gap,
            2.0 * i.lambda_c * i.rademacher_novel,
            4.0 * i.lambda_c * (ln4d.sqrt() / (2.0 * i.n_novel as f64).sqrt()),
        ];
        terms.into_iter().rev().sum()
    }

    pub fn proposition1_reference(i: &BoundInputs) -> f64 {
        let ln4d = 4.0_f64.ln() - i.delta.ln();
        let one_m = 1.0 - i.lambda_g;
        let n_aug = (i.k_e * i.n_real) as f64;
        let terms = vec![
            i.empirical_risk,
            one_m * i.gamma_gap,
            2.0 * one_m * i.rademacher_real,
            3.0 * one_m * (ln4d.sqrt() / (2.0 * i.n_real as f64).sqrt()),
            2.0 * i.lambda_g * i.rademacher_aug,
            3.0 * i.lambda_g * (ln4d.sqrt() / (2.0 * n_aug).sqrt()),
            ((ln4d / 2.0) * (one_m * one_m / i.n_real as f64 + i.lambda_g * i.lambda_g / n_aug))
                .sqrt(),
        ];
        terms.into_iter().rev().sum()
    }

    fn grid(with_gamma: bool) -> Vec<BoundInputs> {
        let mut points = Vec::new();
        let lambdas = [0.0, 0.3, 0.7, 0.99];
        let deltas = [0.01, 0.05, 0.5];
        let counts = [10u64, 100, 1000];
        for &lambda in &lambdas {
            for &delta in &deltas {
                for &n in &counts {
                    for &gamma in &[0.0, 0.2, 2.0] {
                        points.push(BoundInputs {
                            lambda_c: lambda,
                            lambda_g: lambda,
                            delta,
                            n_base: n * 10,
                            n_novel: n,
                            n_real: n,
                            k_e: 3,
                            gamma_gap: if with_gamma { gamma } else { 0.0 },
                            ..BoundInputs::default()
                        });
                    }
                }
            }
        }
        points
    }

    #[test]
    fn lemma1_collapses_when_only_base_terms_survive() {
        let inputs = BoundInputs {
            lambda_c: 0.0,
            gamma_gap: 0.0,
            rademacher_base: 0.0,
            rademacher_novel: 0.0,
            empirical_risk: 0.0,
            ..BoundInputs::default()
        };
        let got = lemma1_bound(&inputs).unwrap();
        let want = 4.0 * ((4.0 / inputs.delta).ln() / (2.0 * inputs.n_base as f64)).sqrt();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn lemma1_matches_reference_path() {
        for p in grid(true) {
            let a = lemma1_bound(&p).unwrap();
            let b = lemma1_reference(&p);
            assert!((a - b).abs() < 1e-12, "{a} vs {b} at {p:?}");
        }
    }

    #[test]
    fn lemma1_shrinks_with_more_samples() {
        let base = BoundInputs::default();
        let doubled = BoundInputs {
            n_base: base.n_base * 2,
            n_novel: base.n_novel * 2,
            ..base
        };
        assert!(lemma1_bound(&doubled).unwrap() < lemma1_bound(&base).unwrap());
    }

    #[test]
    fn theorem1_endpoints() {
        let at_zero = BoundInputs {
            lambda_c: 0.0,
            gamma_gap: 0.35,
            ..BoundInputs::default()
        };
        assert!((theorem1_approx(&at_zero).unwrap() - 0.35).abs() < 1e-15);

        let near_one = BoundInputs {
            lambda_c: 1.0 - f64::EPSILON,
            gamma_gap: 0.0,
            ..BoundInputs::default()
        };
        let got = theorem1_approx(&near_one).unwrap();
        let ln4d = (4.0 / near_one.delta).ln();
        let want = 2.0 * near_one.rademacher_novel
            + 4.0 * (ln4d / (2.0 * near_one.n_novel as f64)).sqrt();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn theorem1_matches_reference_path() {
        for p in grid(true) {
            let a = theorem1_approx(&p).unwrap();
            let b = theorem1_reference(&p);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn theorem1_is_affine_in_lambda() {
        let p = BoundInputs {
            gamma_gap: 0.4,
            ..BoundInputs::default()
        };
        let f = |l: f64| theorem1_approx(&BoundInputs { lambda_c: l, ..p }).unwrap();
        let slope_fit = (f(0.75) - f(0.25)) / 0.5;
        let ln4d = (4.0 / p.delta).ln();
        let slope_analytic =
            -p.gamma_gap + 2.0 * p.rademacher_novel + 4.0 * (ln4d / (2.0 * p.n_novel as f64)).sqrt();
        assert!((slope_fit - slope_analytic).abs() < 1e-12);
        // Midpoint test: affine means exact interpolation.
        assert!((f(0.5) - 0.5 * (f(0.25) + f(0.75))).abs() < 1e-12);
    }

    #[test]
    fn proposition1_lambda_zero_is_the_unaugmented_form() {
        let p = BoundInputs {
            lambda_g: 0.0,
            gamma_gap: 0.0,
            empirical_risk: 0.0,
            ..BoundInputs::default()
        };
        let got = proposition1_bound(&p).unwrap();
        let ln4d = (4.0 / p.delta).ln();
        let want =
            2.0 * p.rademacher_real + 4.0 * (ln4d / (2.0 * p.n_real as f64)).sqrt();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn proposition1_matches_reference_path() {
        for p in grid(true) {
            let a = proposition1_bound(&p).unwrap();
            let b = proposition1_reference(&p);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn proposition1_decreases_in_ke_when_augmenting() {
        let p = BoundInputs {
            lambda_g: 0.6,
            ..BoundInputs::default()
        };
        let mut prev = f64::INFINITY;
        for k_e in 2..10 {
            let v = proposition1_bound(&BoundInputs { k_e, ..p }).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn theorem2_example_holds() {
        let p = BoundInputs {
            k_e: 2,
            delta: 0.05,
            n_real: 100,
            rademacher_real: 0.1,
            rademacher_aug: 0.05,
            gamma_gap: 0.0,
            empirical_risk: 0.0,
            ..BoundInputs::default()
        };
        let cmp = theorem2_compare(&p).unwrap();
        assert!(cmp.holds, "{cmp:?}");
        assert!(cmp.sup_with < cmp.sup_without);
        // Reference recomputation of the no-augmentation sup.
        let ln4d = (4.0 / p.delta).ln();
        let want = 2.0 * 0.1 + 4.0 * (ln4d / 200.0).sqrt();
        assert!((cmp.sup_without - want).abs() < 1e-12);
    }

    #[test]
    fn theorem2_rejects_small_ke() {
        let p = BoundInputs {
            k_e: 1,
            ..BoundInputs::default()
        };
        assert!(theorem2_compare(&p).is_err());
    }

    #[test]
    fn theorem2_augmented_terms_vanish_as_ke_grows() {
        let p = BoundInputs {
            lambda_g: 0.9,
            rademacher_aug: 0.0,
            rademacher_real: 0.0,
            gamma_gap: 0.0,
            empirical_risk: 0.0,
            ..BoundInputs::default()
        };
        let small = proposition1_bound(&BoundInputs { k_e: 2, ..p }).unwrap();
        let huge = proposition1_bound(&BoundInputs { k_e: 1_000_000, ..p }).unwrap();
        // With k_e huge the augmented concentration terms are ~0 and the
        // bound approaches its real-sample remainder.
        let ln4d = (4.0 / p.delta).ln();
        let remainder = 3.0 * (1.0 - p.lambda_g) * (ln4d / (2.0 * p.n_real as f64)).sqrt()
            + ((ln4d / 2.0) * ((1.0 - p.lambda_g).powi(2) / p.n_real as f64)).sqrt();
        assert!(huge < small);
        assert!((huge - remainder) < 1e-3);
    }

    #[test]
    fn monotonicity_zero_gamma_is_always_increasing() {
        let grid: Vec<BoundInputs> = (1..20)
            .map(|i| BoundInputs {
                gamma_gap: 0.0,
                n_novel: 10 * i,
                ..BoundInputs::default()
            })
            .collect();
        let report = monotonicity_check(MonotonicityTarget::Theorem1InLambdaC, &grid).unwrap();
        assert!(report.passed());
        assert_eq!(report.inside_condition, grid.len());
        assert_eq!(report.outside_condition, 0);
    }

    #[test]
    fn monotonicity_flipped_sign_is_reported_outside_condition() {
        // gamma large enough to flip the slope: bound decreases in lambda.
        let point = BoundInputs {
            gamma_gap: 50.0,
            ..BoundInputs::default()
        };
        let report =
            monotonicity_check(MonotonicityTarget::Theorem1InLambdaC, &[point]).unwrap();
        assert!(report.passed());
        assert_eq!(report.outside_condition, 1);
    }

    #[test]
    fn monotonicity_matches_analytic_derivative_sign_on_fine_grid() {
        let mut grid = Vec::new();
        for gi in 0..40 {
            let gamma = gi as f64 * 0.05;
            grid.push(BoundInputs {
                gamma_gap: gamma,
                ..BoundInputs::default()
            });
        }
        let report = monotonicity_check(MonotonicityTarget::Theorem1InLambdaC, &grid).unwrap();
        assert!(report.passed(), "{:?}", report.counterexamples);
        // Every point landed on one side; together they cover both.
        assert_eq!(report.inside_condition + report.outside_condition, grid.len());
        assert!(report.inside_condition > 0);
        assert!(report.outside_condition > 0);
    }

    #[test]
    fn other_monotonicity_targets_pass_on_defaults() {
        let grid = grid(false);
        let r1 = monotonicity_check(MonotonicityTarget::Lemma1InSampleSizes, &grid).unwrap();
        assert!(r1.passed(), "{:?}", r1.counterexamples);
        let r2 = monotonicity_check(MonotonicityTarget::Proposition1InKe, &grid).unwrap();
        assert!(r2.passed(), "{:?}", r2.counterexamples);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let bad_delta = BoundInputs {
            delta: 0.0,
            ..BoundInputs::default()
        };
        assert!(lemma1_bound(&bad_delta).is_err());
        let bad_lambda = BoundInputs {
            lambda_c: 1.0,
            ..BoundInputs::default()
        };
        assert!(theorem1_approx(&bad_lambda).is_err());
    }
}
