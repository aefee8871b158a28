//! Retraining-cost, cluster-cardinality and convergence-bound expressions.
//!
//! All closed forms are evaluated as stated. Where the simplified form and
//! its defining expression disagree both are exposed, see
//! [`avg_cardinality`] and [`avg_cardinality_defining`].

use thiserror::Error;

use crate::unlearning::UnlearnMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("invalid convergence parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),
    #[error("average cluster cardinality {0} is not positive")]
    DegenerateCardinality(f64),
}

/// Expected number of retrained users under sequential unlearning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqRetrained {
    /// `(2N+1−τ²)k/(2N) − τ`, with `τ = 0` mapped to 0.
    pub value: f64,
    /// The accompanying upper bound `kτ`.
    pub upper_bound: f64,
}

pub fn expected_retrained_seq(n: u64, k: u64, tau: u64) -> SeqRetrained {
    let (nf, kf, tf) = (n as f64, k as f64, tau as f64);
    let value = if tau == 0 { 0.0 } else { (2.0 * nf + 1.0 - tf * tf) * kf / (2.0 * nf) - tf };
    SeqRetrained { value, upper_bound: kf * tf }
}

/// `N − N(1−k/N)^τ − τ`.
pub fn expected_retrained_bat(n: u64, k: u64, tau: u64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    nf - nf * (1.0 - kf / nf).powi(tau as i32) - tau as f64
}

pub fn expected_retrained(mode: UnlearnMode, n: u64, k: u64, tau: u64) -> f64 {
    match mode {
        UnlearnMode::Sequential => expected_retrained_seq(n, k, tau).value,
        UnlearnMode::Batch => expected_retrained_bat(n, k, tau),
    }
}

/// Average cluster cardinality in its simplified closed form:
///
/// * sequential: `(1−τ/N)k − (2N+1−τ²)/(2N²)`
/// * batch: `k + N(N+τ)/k − 2N`
pub fn avg_cardinality(mode: UnlearnMode, n: u64, k: u64, tau: u64) -> f64 {
    let (nf, kf, tf) = (n as f64, k as f64, tau as f64);
    match mode {
        UnlearnMode::Sequential => (1.0 - tf / nf) * kf - (2.0 * nf + 1.0 - tf * tf) / (2.0 * nf * nf),
        UnlearnMode::Batch => kf + nf * (nf + tf) / kf - 2.0 * nf,
    }
}

/// The defining form `N(N − 𝔼)/k` of the average cluster cardinality.
pub fn avg_cardinality_defining(mode: UnlearnMode, n: u64, k: u64, tau: u64) -> f64 {
    let nf = n as f64;
    nf * (nf - expected_retrained(mode, n, k, tau)) / k as f64
}

/// Inputs of the convergence bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceParams {
    /// `ρ`.
    pub smoothness: f64,
    /// `μ`.
    pub strong_convexity: f64,
    /// Per-user gradient variances `λ_i²`.
    pub grad_variances: Vec<f64>,
    /// `G²`.
    pub grad_sq_bound: f64,
    /// `E`.
    pub local_iterations: u32,
    /// Aggregation weights `w_i`, summing to one.
    pub weights: Vec<f64>,
    /// `Γ`.
    pub heterogeneity_gap: f64,
    /// `ε`.
    pub precision: f64,
    /// `j`.
    pub round_index: u64,
    /// `E‖x⁽⁰⁾ − x*‖²`.
    pub init_distance_sq: f64,
    /// `𝒦`, used only by the generic bound.
    pub participants: f64,
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::InvalidParams(m));
        if self.weights.len() != self.grad_variances.len() {
            return bad(format!("{} weights for {} variances", self.weights.len(), self.grad_variances.len()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, expected 1"));
        }
        if self.grad_variances.iter().any(|v| *v < 0.0) {
            return bad("gradient variances must be nonnegative".into());
        }
        if !(self.smoothness > 0.0 && self.strong_convexity > 0.0 && self.grad_sq_bound > 0.0) {
            return bad("smoothness, strong convexity and G² must be positive".into());
        }
        if self.local_iterations == 0 {
            return bad("local iterations must be positive".into());
        }
        if self.heterogeneity_gap < 0.0 || self.init_distance_sq < 0.0 {
            return bad("heterogeneity gap and initial distance must be nonnegative".into());
        }
        if self.precision <= 0.0 {
            return bad("precision must be positive".into());
        }
        Ok(())
    }

    /// `Σ w_i² λ_i²`.
    pub fn weighted_variance(&self) -> f64 {
        self.weights.iter().zip(&self.grad_variances).map(|(w, l)| w * w * l).sum()
    }

    /// `α = Σ w_i²λ_i² + 6ρΓ + 8(E−1)²G²`.
    pub fn alpha(&self) -> f64 {
        let e1 = self.local_iterations as f64 - 1.0;
        self.weighted_variance() + 6.0 * self.smoothness * self.heterogeneity_gap + 8.0 * e1 * e1 * self.grad_sq_bound
    }

    /// `θ = max{8ρ/μ, E}`.
    pub fn theta(&self) -> f64 {
        (8.0 * self.smoothness / self.strong_convexity).max(self.local_iterations as f64)
    }

    fn e2g2(&self) -> f64 {
        let e = self.local_iterations as f64;
        e * e * self.grad_sq_bound
    }
}

/// Sampling term of the generic bound: `4(k−𝒦)E²G² / (𝒦(k−1))`.
pub fn beta_generic(cp: &ConvergenceParams, k: u64) -> Result<f64, AnalysisError> {
    let kf = k as f64;
    let den = cp.participants * (kf - 1.0);
    if den <= 0.0 {
        return Err(AnalysisError::DegenerateCluster(format!("beta denominator {den} for k = {k}")));
    }
    Ok(4.0 * (kf - cp.participants) * cp.e2g2() / den)
}

/// Sampling term under sequential unlearning:
/// `4E²G²(2N²k − 2Nk(N−τ) + 2N − τ² + 1) / ((k−1)(2Nk(N−τ) − 2N + τ² − 1))`.
pub fn beta_seq(cp: &ConvergenceParams, n: u64, k: u64, tau: u64) -> Result<f64, AnalysisError> {
    let (nf, kf, tf) = (n as f64, k as f64, tau as f64);
    let num = 2.0 * nf * nf * kf - 2.0 * nf * kf * (nf - tf) + 2.0 * nf - tf * tf + 1.0;
    let den = (kf - 1.0) * (2.0 * nf * kf * (nf - tf) - 2.0 * nf + tf * tf - 1.0);
    if den <= 0.0 {
        return Err(AnalysisError::DegenerateCluster(format!(
            "sequential beta denominator {den} (N={n}, k={k}, tau={tau})"
        )));
    }
    Ok(4.0 * cp.e2g2() * num / den)
}

/// Sampling term under batch unlearning:
/// `4E²G²N(−N + 2k − τ) / ((k−1)(N(N+τ) + k(−2N + k)))`.
pub fn beta_bat(cp: &ConvergenceParams, n: u64, k: u64, tau: u64) -> Result<f64, AnalysisError> {
    let (nf, kf, tf) = (n as f64, k as f64, tau as f64);
    let num = nf * (-nf + 2.0 * kf - tf);
    let den = (kf - 1.0) * (nf * (nf + tf) + kf * (-2.0 * nf + kf));
    if den <= 0.0 {
        return Err(AnalysisError::DegenerateCluster(format!(
            "batch beta denominator {den} (N={n}, k={k}, tau={tau})"
        )));
    }
    Ok(4.0 * cp.e2g2() * num / den)
}

fn error_bound_with_beta(cp: &ConvergenceParams, beta: f64) -> f64 {
    let theta = cp.theta();
    let mu = cp.strong_convexity;
    let denom = theta + cp.local_iterations as f64 * cp.round_index as f64 - 1.0;
    cp.smoothness / denom * (2.0 * (cp.alpha() + beta) / (mu * mu) + theta / 2.0 * cp.init_distance_sq)
}

/// Optimality-gap bound after `j` rounds for a cluster under the given
/// unlearning mode:
/// `ρ/(θ+Ej−1) · (2(α+β)/μ² + (θ/2)·E‖x⁽⁰⁾−x*‖²)`.
///
/// The value is returned as computed; with a negative batch `β` it can drop
/// below zero.
pub fn conv_error_bound(
    mode: UnlearnMode,
    cp: &ConvergenceParams,
    n: u64,
    k: u64,
    tau: u64,
) -> Result<f64, AnalysisError> {
    cp.validate()?;
    let beta = match mode {
        UnlearnMode::Sequential => beta_seq(cp, n, k, tau)?,
        UnlearnMode::Batch => beta_bat(cp, n, k, tau)?,
    };
    Ok(error_bound_with_beta(cp, beta))
}

/// Same bound with the plain participant count `𝒦` in place of the
/// unlearning-aware cardinality.
pub fn conv_error_bound_generic(cp: &ConvergenceParams, k: u64) -> Result<f64, AnalysisError> {
    cp.validate()?;
    Ok(error_bound_with_beta(cp, beta_generic(cp, k)?))
}

/// Rounds needed for precision `ε` given an average cardinality `ℋ`, with the
/// big-O constant fixed to one:
/// `(1/ε)((1+1/ℋ)EG² + (Σw_i²λ_i² + Γ + G²)/E + G²)`.
pub fn rounds_bound_for_cardinality(cp: &ConvergenceParams, h: f64) -> Result<f64, AnalysisError> {
    if h <= 0.0 || h.is_nan() {
        return Err(AnalysisError::DegenerateCardinality(h));
    }
    let e = cp.local_iterations as f64;
    let g2 = cp.grad_sq_bound;
    Ok(((1.0 + 1.0 / h) * e * g2 + (cp.weighted_variance() + cp.heterogeneity_gap + g2) / e + g2) / cp.precision)
}

pub fn conv_rounds_bound(
    mode: UnlearnMode,
    cp: &ConvergenceParams,
    n: u64,
    k: u64,
    tau: u64,
) -> Result<f64, AnalysisError> {
    cp.validate()?;
    rounds_bound_for_cardinality(cp, avg_cardinality(mode, n, k, tau))
}

/// All analysis quantities for one `(mode, N, k, τ)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisReport {
    pub mode: UnlearnMode,
    pub expected_retrained: f64,
    pub avg_cardinality: f64,
    /// `N(N − 𝔼)/k`, reported next to the simplified form.
    pub avg_cardinality_defining: f64,
    /// Error bound floored at zero.
    pub error_bound: f64,
    /// Error bound as computed.
    pub error_bound_raw: f64,
    pub rounds_bound: f64,
}

pub fn analyze(
    mode: UnlearnMode,
    cp: &ConvergenceParams,
    n: u64,
    k: u64,
    tau: u64,
) -> Result<AnalysisReport, AnalysisError> {
    let raw = conv_error_bound(mode, cp, n, k, tau)?;
    Ok(AnalysisReport {
        mode,
        expected_retrained: expected_retrained(mode, n, k, tau),
        avg_cardinality: avg_cardinality(mode, n, k, tau),
        avg_cardinality_defining: avg_cardinality_defining(mode, n, k, tau),
        error_bound: raw.max(0.0),
        error_bound_raw: raw,
        rounds_bound: conv_rounds_bound(mode, cp, n, k, tau)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(k: usize, lambda_sq: f64, e: u32, gamma: f64) -> ConvergenceParams {
        ConvergenceParams {
            smoothness: 1.0,
            strong_convexity: 1.0,
            grad_variances: vec![lambda_sq; k],
            grad_sq_bound: 1.0,
            local_iterations: e,
            weights: vec![1.0 / k as f64; k],
            heterogeneity_gap: gamma,
            precision: 0.01,
            round_index: 50,
            init_distance_sq: 1.0,
            participants: k as f64,
        }
    }

    #[test]
    fn seq_retrained_examples() {
        assert_eq!(expected_retrained_seq(100, 10, 1).value, 9.0);
        assert_eq!(expected_retrained_seq(100, 10, 0).value, 0.0);
        let r = expected_retrained_seq(100, 10, 5);
        assert!((r.value - 3.8).abs() < 1e-12);
        assert_eq!(r.upper_bound, 50.0);
    }

    #[test]
    fn bat_retrained_examples() {
        assert_eq!(expected_retrained_bat(100, 10, 0), 0.0);
        assert!((expected_retrained_bat(100, 10, 1) - 9.0).abs() < 1e-12);
        assert!((expected_retrained_bat(100, 10, 5) - 35.951).abs() < 1e-9);
    }

    #[test]
    fn bat_retrained_approaches_n_minus_tau() {
        let (n, k) = (100u64, 10u64);
        let tau = 10 * (n / k);
        let e = expected_retrained_bat(n, k, tau);
        assert!((e - (n - tau) as f64).abs() < 0.01 * n as f64, "{e}");
    }

    #[test]
    fn cardinality_examples() {
        let seq = avg_cardinality(UnlearnMode::Sequential, 100, 10, 0);
        assert!((seq - 9.98995).abs() < 1e-12);
        assert_eq!(avg_cardinality(UnlearnMode::Batch, 100, 10, 0), 810.0);
        let n = 40u64;
        let at_n = avg_cardinality(UnlearnMode::Sequential, n, 8, n);
        let nf = n as f64;
        assert!((at_n - (nf * nf - 2.0 * nf - 1.0) / (2.0 * nf * nf)).abs() < 1e-12);
    }

    #[test]
    fn batch_cardinality_simplification_differs_from_definition() {
        let simplified = avg_cardinality(UnlearnMode::Batch, 100, 10, 5);
        let defining = avg_cardinality_defining(UnlearnMode::Batch, 100, 10, 5);
        assert!((simplified - defining).abs() > 1.0, "{simplified} vs {defining}");
    }

    #[test]
    fn rounds_bound_example() {
        let cp = ConvergenceParams {
            grad_variances: vec![0.0; 10],
            local_iterations: 2,
            heterogeneity_gap: 0.1,
            ..uniform(10, 0.0, 2, 0.1)
        };
        let m = rounds_bound_for_cardinality(&cp, 50.0).unwrap();
        assert!((m - 359.0).abs() < 1e-9, "{m}");
        let half = ConvergenceParams { precision: 0.005, ..cp.clone() };
        let m2 = rounds_bound_for_cardinality(&half, 50.0).unwrap();
        assert!((m2 - 2.0 * m).abs() < 1e-9);
        assert!(rounds_bound_for_cardinality(&cp, 100.0).unwrap() < m);
        assert!(matches!(rounds_bound_for_cardinality(&cp, 0.0), Err(AnalysisError::DegenerateCardinality(_))));
    }

    #[test]
    fn error_bound_term_cancellation() {
        // E=1, Γ=0, λ=0 leaves α = 0.
        let cp = uniform(10, 0.0, 1, 0.0);
        assert_eq!(cp.alpha(), 0.0);
        let beta = beta_bat(&cp, 100, 10, 0).unwrap();
        let theta = cp.theta();
        let expected = 1.0 / (theta - 1.0 + 50.0) * (2.0 * beta + theta / 2.0);
        let got = conv_error_bound(UnlearnMode::Batch, &cp, 100, 10, 0).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn error_bound_vanishes_with_rounds() {
        let mut cp = uniform(10, 0.01, 2, 0.1);
        cp.round_index = 1_000_000_000;
        let b = conv_error_bound(UnlearnMode::Sequential, &cp, 100, 10, 5).unwrap();
        assert!(b.abs() < 1e-6, "{b}");
    }

    #[test]
    fn degenerate_single_user_cluster() {
        let cp = uniform(1, 0.0, 2, 0.0);
        assert!(matches!(
            conv_error_bound(UnlearnMode::Sequential, &cp, 100, 1, 5),
            Err(AnalysisError::DegenerateCluster(_))
        ));
        assert!(matches!(beta_generic(&cp, 1), Err(AnalysisError::DegenerateCluster(_))));
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut cp = uniform(4, 0.0, 2, 0.0);
        cp.weights[0] += 0.1;
        assert!(cp.validate().is_err());
    }

    #[test]
    fn report_carries_both_cardinality_forms() {
        let cp = uniform(10, 0.01, 2, 0.1);
        let r = analyze(UnlearnMode::Sequential, &cp, 100, 10, 5).unwrap();
        assert!((r.expected_retrained - 3.8).abs() < 1e-12);
        assert!(r.error_bound >= 0.0);
        assert!(r.rounds_bound > 0.0);
    }

    proptest! {
        #[test]
        fn error_bound_nonincreasing_in_rounds(j in 0u64..10_000, dj in 1u64..100, tau in 0u64..50) {
            let mut cp = uniform(10, 0.01, 2, 0.1);
            cp.round_index = j;
            let a = conv_error_bound(UnlearnMode::Sequential, &cp, 100, 10, tau).unwrap();
            cp.round_index = j + dj;
            let b = conv_error_bound(UnlearnMode::Sequential, &cp, 100, 10, tau).unwrap();
            prop_assert!(b <= a);
        }
    }
}
