//! Executable verifiers for the protocol's convergence, martingale,
//! fixed-point, and random-matrix-product properties, runnable as a
//! standalone battery.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::beliefs::{
    local_bayes_update, step, step_with_inputs, BeliefVector, NetworkState, ProtocolKind,
};
use crate::config::ExperimentConfig;
use crate::engine::{asymptotic_rate, network_loss, presets, run_experiment};
use crate::error::Result;
use crate::models::{
    HypothesisSet, Likelihood, LikelihoodModel, Observation, TrendDistribution,
};
use crate::network::{build_metropolis, CombinationMatrix, Topology};
use crate::numeric::{adaptive_simpson, fit_slope};
use crate::rng::{stream, StreamKind};

/// Outcome of one verification check; reproducible from (name, seed).
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// The measured quantity the verdict is based on.
    pub statistic: f64,
    pub tolerance: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub details: Vec<String>,
}

impl CheckReport {
    fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            pass: true,
            statistic: 0.0,
            tolerance: 0.0,
            sample_size: 0,
            seed,
            details: Vec::new(),
        }
    }

    pub fn one_line(&self) -> String {
        format!(
            "[{}] {} (statistic {:.6e}, tolerance {:.3e}, seed {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.tolerance,
            self.seed
        )
    }
}

// ---------------------------------------------------------------------------
// Asymptotic rate convergence

/// Runs the configured protocol and asserts that every agent's empirical
/// rate `r_{k,T}(theta)/T` is within `tolerance` (relative) of the
/// Perron-weighted KL rate, for each wrong hypothesis with positive
/// transmission probability.
pub fn check_rate_convergence(config: &ExperimentConfig, tolerance: f64) -> Result<CheckReport> {
    let mut report = CheckReport::new("rate_convergence", config.seed);
    report.tolerance = tolerance;
    let truth = config.hypotheses.true_index();
    let trace = run_experiment(config)?;
    let horizon = config.horizon as f64;
    for theta in config.hypotheses.wrong() {
        if let Some(pi) = &config.trend {
            if pi.prob(theta) == 0.0 && theta != truth {
                // Theorem hypotheses need pi_theta > 0; with the truth never
                // shared the effective matrix for theta still mixes, so only
                // skip hypotheses that are themselves never shared.
                report.details.push(format!("hypothesis {theta}: pi = 0, skipped"));
                continue;
            }
        }
        let d = asymptotic_rate(&config.models, config.matrix.perron(), theta, truth)?;
        if d == 0.0 {
            report.details.push(format!("hypothesis {theta}: unidentifiable, rate 0, skipped"));
            continue;
        }
        for k in 0..config.num_agents() {
            let r = trace.final_log_ratio(k, theta) / horizon;
            let rel = ((r - d) / d).abs();
            report.statistic = report.statistic.max(rel);
            if rel >= tolerance {
                report.pass = false;
                report.details.push(format!(
                    "agent {k}, hypothesis {theta}: empirical {r:.6} vs d_ave {d:.6} \
                     (relative error {rel:.4})"
                ));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Supermartingale property of the network loss

/// From `num_frozen` states along a trending run, estimates
/// `E[Q(mu_i) | F_{i-1}]` over `num_branches` one-step replicas and asserts
/// the estimate does not exceed `Q(mu_{i-1})` by more than three standard
/// errors. Set `flip` in tests to verify the harness can fail.
pub fn check_supermartingale(
    config: &ExperimentConfig,
    num_frozen: usize,
    num_branches: usize,
) -> Result<CheckReport> {
    check_supermartingale_inner(config, num_frozen, num_branches, false)
}

pub(crate) fn check_supermartingale_inner(
    config: &ExperimentConfig,
    num_frozen: usize,
    num_branches: usize,
    flip: bool,
) -> Result<CheckReport> {
    assert!(matches!(config.protocol, ProtocolKind::TrendingBootstrap));
    let mut report = CheckReport::new("supermartingale", config.seed);
    report.sample_size = num_branches;
    let truth = config.hypotheses.true_index();
    let pi = config.trend.as_ref().expect("trending config carries pi");
    let perron = config.matrix.perron().clone();

    let freeze_every = (config.horizon / num_frozen as u64).max(1);
    let mut state = NetworkState::initial(config.initial_beliefs.clone());
    let mut worst_margin = f64::NEG_INFINITY;
    for _ in 0..config.horizon {
        if state.time % freeze_every == 0 {
            let q_prev = network_loss(&state.beliefs, &perron, truth);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for branch in 0..num_branches {
                let mut rng =
                    stream(config.seed, StreamKind::Check, branch as u64, state.time);
                let observations: Vec<Observation> = (0..state.num_agents())
                    .map(|k| config.models.sample_observation(k, truth, &mut rng))
                    .collect();
                let tau = pi.sample(&mut rng);
                let next = step_with_inputs(
                    &state,
                    config.protocol,
                    &config.matrix,
                    &config.models,
                    &observations,
                    Some(tau),
                )?;
                let q = network_loss(&next.beliefs, &perron, truth);
                sum += q;
                sumsq += q * q;
            }
            let n = num_branches as f64;
            let mean = sum / n;
            let var = (sumsq / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            // margin in SE units; the supermartingale property requires
            // mean <= q_prev within statistical error
            let margin = if se > 0.0 { (mean - q_prev) / se } else { mean - q_prev };
            let effective = if flip { -margin } else { margin };
            worst_margin = worst_margin.max(effective);
            if effective > 3.0 {
                report.pass = false;
                report.details.push(format!(
                    "frozen state at i={}: E[Q] = {mean:.6} vs Q_prev = {q_prev:.6} \
                     ({margin:.2} SE)",
                    state.time
                ));
            }
        }
        let (next, _) = step(
            &state,
            config.protocol,
            &config.matrix,
            &config.models,
            truth,
            Some(pi),
            config.seed,
        )?;
        state = next;
    }
    report.statistic = worst_margin;
    report.tolerance = 3.0;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Truth-sharing fixed point (the 3-agent counter-example)

/// Builds the 3-agent counter-example: fully connected network, four
/// hypotheses with truth 3 (0-based), agent k unable to distinguish
/// hypothesis k from the truth, beliefs `alpha` on the truth and `1-alpha`
/// on the confusable hypothesis, zeros elsewhere. With the trend fixed at
/// the truth, 100 steps must leave every belief unchanged within 1e-10.
pub fn check_fixed_point(alpha: f64, seed: u64) -> Result<CheckReport> {
    assert!(alpha > 0.0 && alpha < 1.0);
    let mut report = CheckReport::new("fixed_point", seed);
    report.tolerance = 1e-10;
    let (matrix, models, hypotheses) = counterexample_setup();
    let truth = hypotheses.true_index();
    let pi = TrendDistribution::delta(truth, 4);

    let initial: Vec<BeliefVector> = (0..3)
        .map(|k| {
            let mut probs = vec![0.0; 4];
            probs[truth] = alpha;
            probs[k] = 1.0 - alpha;
            BeliefVector::from_probs(&probs).unwrap()
        })
        .collect();
    let mut state = NetworkState::initial(initial.clone());
    for _ in 0..100 {
        let (next, _) = step(&state, ProtocolKind::TrendingBootstrap, &matrix, &models, truth,
            Some(&pi), seed)?;
        state = next;
        for (k, b) in state.beliefs.iter().enumerate() {
            for theta in 0..4 {
                let drift = (b.prob(theta) - initial[k].prob(theta)).abs();
                report.statistic = report.statistic.max(drift);
                if drift > report.tolerance {
                    report.pass = false;
                    report.details.push(format!(
                        "agent {k}, hypothesis {theta}, time {}: drift {drift:.3e}",
                        state.time
                    ));
                }
            }
        }
    }
    Ok(report)
}

/// Counter-example model: Gaussian means 0.3*(theta+1), except agent k's
/// mean at hypothesis k equals its mean at the truth.
pub fn counterexample_setup() -> (CombinationMatrix, LikelihoodModel, HypothesisSet) {
    let topology = Topology::complete(3);
    let matrix = build_metropolis(&topology).unwrap();
    let hypotheses = HypothesisSet::new(4, 3).unwrap();
    let agents = (0..3)
        .map(|k| Likelihood::Gaussian {
            means: (0..4)
                .map(|t| if t == k { 0.3 * 4.0 } else { 0.3 * (t + 1) as f64 })
                .collect(),
        })
        .collect();
    let models = LikelihoodModel::new(agents, &hypotheses).unwrap();
    (matrix, models, hypotheses)
}

/// Contrast to the fixed point: give wrong hypotheses positive transmission
/// probability and the equilibrium breaks — beliefs on distinguishable
/// wrong hypotheses decay.
pub fn check_fixed_point_breaks_with_wrong_sharing(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("fixed_point_contrast", seed);
    let (matrix, models, hypotheses) = counterexample_setup();
    let truth = hypotheses.true_index();
    let pi = TrendDistribution::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
    // strictly positive initial beliefs this time
    let mut state = NetworkState::initial(vec![BeliefVector::uniform(4); 3]);
    for _ in 0..2000 {
        let (next, _) = step(&state, ProtocolKind::TrendingBootstrap, &matrix, &models, truth,
            Some(&pi), seed)?;
        state = next;
    }
    // every agent must learn the truth (all wrong hypotheses identifiable
    // by two agents each)
    report.statistic = state
        .beliefs
        .iter()
        .map(|b| b.prob(truth))
        .fold(f64::INFINITY, f64::min);
    report.tolerance = 0.99;
    report.pass = report.statistic > report.tolerance;
    if !report.pass {
        report.details.push(format!("min final truth belief {:.6}", report.statistic));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// No-mislearning battery

/// Across a battery of trending configs, asserts the truth belief stays
/// bounded away from zero over the horizon and shows no downward trend in
/// the final quartile (per-step slope of log mu(truth) >= -1e-3), and that
/// the intermediate-belief norm guard stays finite with no late maxima.
pub fn check_no_mislearning(configs: &[(&str, ExperimentConfig)]) -> Result<CheckReport> {
    let seed = configs.first().map(|(_, c)| c.seed).unwrap_or(0);
    let mut report = CheckReport::new("no_mislearning", seed);
    let slope_floor = -1e-3f64;
    report.tolerance = slope_floor.abs();
    let mut worst_slope = f64::INFINITY;
    for (label, config) in configs {
        assert!(matches!(config.protocol, ProtocolKind::TrendingBootstrap));
        let truth = config.hypotheses.true_index();
        let pi = config.trend.as_ref().unwrap();
        let mut state = NetworkState::initial(config.initial_beliefs.clone());
        let mut log_truth: Vec<Vec<f64>> = vec![Vec::new(); config.num_agents()];
        let mut psi_norms: Vec<f64> = Vec::new();
        for _ in 0..config.horizon {
            let (next, _) = step(&state, config.protocol, &config.matrix, &config.models, truth,
                Some(pi), config.seed)?;
            state = next;
            for (k, b) in state.beliefs.iter().enumerate() {
                log_truth[k].push(b.log_prob(truth));
            }
            // Euclidean norm of the vector of -log psi_k(truth)
            let norm: f64 = state
                .intermediates
                .iter()
                .map(|p| p.log_prob(truth).powi(2))
                .sum::<f64>()
                .sqrt();
            psi_norms.push(norm);
        }
        let t = config.horizon as usize;
        let quartile = t - t / 4;
        for (k, series) in log_truth.iter().enumerate() {
            if series.iter().any(|l| !l.is_finite()) {
                report.pass = false;
                report.details.push(format!("{label}: agent {k} hit zero truth belief"));
                continue;
            }
            let xs: Vec<f64> = (quartile..t).map(|i| i as f64).collect();
            let ys: Vec<f64> = series[quartile..].to_vec();
            let slope = fit_slope(&xs, &ys);
            worst_slope = worst_slope.min(slope);
            if slope < slope_floor {
                report.pass = false;
                report.details.push(format!(
                    "{label}: agent {k} final-quartile slope {slope:.3e} below {slope_floor:.0e}"
                ));
            }
        }
        // uniform-boundedness guard: finite everywhere and the running
        // maximum is achieved before the final quartile
        let sup = psi_norms.iter().cloned().fold(0.0f64, f64::max);
        let late_max = psi_norms[quartile..].iter().cloned().fold(0.0f64, f64::max);
        if !sup.is_finite() || late_max > sup.max(1e-9) * (1.0 + 1e-9) {
            report.pass = false;
            report.details.push(format!(
                "{label}: intermediate-belief norm guard sup {sup:.3e}, late max {late_max:.3e}"
            ));
        }
    }
    report.statistic = worst_slope;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Random matrix-product lemmas

#[derive(Debug, Clone, Serialize)]
pub struct MatrixLemmaStats {
    pub chi_square: f64,
    pub chi_square_critical: f64,
    pub expectation_z_score: f64,
    pub fitted_slope: f64,
    pub lambda_tilde_log: f64,
    pub limit_distance: f64,
}

/// Verifies the random-product structure of the effective combination
/// matrix: (a) the number of A-factors in a window is Binomial(n, pi_theta),
/// checked by chi-square and by comparing the Monte-Carlo mean of
/// `||(A~)^T (I - A^T)||` with the exact binomial-weighted expectation;
/// (b) the expectation decays at least as fast as `lambda_tilde =
/// 1 - (1 - lambda) pi_theta`; (c) long products converge to `v 1^T`.
pub fn check_matrix_product_lemmas(
    matrix: &CombinationMatrix,
    pi_theta: f64,
    windows: &[usize],
    samples: usize,
    seed: u64,
) -> Result<(CheckReport, MatrixLemmaStats)> {
    assert!(pi_theta > 0.0 && pi_theta <= 1.0);
    let mut report = CheckReport::new("matrix_product_lemmas", seed);
    report.sample_size = samples;
    let a = matrix.entries();
    let n_agents = a.ncols();
    let lambda = matrix.mixing_lambda();
    let lambda_tilde = 1.0 - (1.0 - lambda) * pi_theta;

    // ||(A^m - A^{m+1})^T|| in the induced infinity norm, i.e. the induced
    // 1-norm (max column abs sum) of A^m - A^{m+1}
    let powers_needed = windows.iter().max().copied().unwrap_or(0).max(40) + 1;
    let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(powers_needed + 1);
    powers.push(DMatrix::identity(n_agents, n_agents));
    for m in 0..powers_needed {
        powers.push(a * &powers[m]);
    }
    let diff_norm = |m: usize| -> f64 {
        let d = &powers[m] - &powers[m + 1];
        (0..n_agents)
            .map(|c| d.column(c).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let ln_binom = |n: u64, m: u64| -> f64 {
        // log binomial coefficient via lgamma-free product form; n is small
        let mut acc = 0.0;
        for i in 0..m {
            acc += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        acc
    };
    let binom_pmf = |n: usize, m: usize, p: f64| -> f64 {
        (ln_binom(n as u64, m as u64)
            + m as f64 * p.ln()
            + (n - m) as f64 * (1.0 - p).ln_1p_zero())
        .exp()
    };

    // (a) chi-square of factor counts against Binomial(n, pi_theta)
    let n_window = 40usize;
    let mut counts = vec![0usize; n_window + 1];
    let mut mc_sum = 0.0;
    let mut mc_sumsq = 0.0;
    let mut rng = stream(seed, StreamKind::Check, 0, 0);
    for _ in 0..samples {
        let m = (0..n_window).filter(|_| rng.gen_bool(pi_theta)).count();
        counts[m] += 1;
        let v = diff_norm(m);
        mc_sum += v;
        mc_sumsq += v * v;
    }
    // pool bins with expected count below 5
    let mut chi2 = 0.0;
    let mut dof: i64 = -1;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    for m in 0..=n_window {
        let expected = samples as f64 * binom_pmf(n_window, m, pi_theta);
        pooled_obs += counts[m] as f64;
        pooled_exp += expected;
        if pooled_exp >= 5.0 {
            chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            dof += 1;
            pooled_obs = 0.0;
            pooled_exp = 0.0;
        }
    }
    if pooled_exp > 0.0 {
        chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        dof += 1;
    }
    let critical = ChiSquared::new(dof.max(1) as f64).unwrap().inverse_cdf(0.999);
    if chi2 >= critical {
        report.pass = false;
        report.details.push(format!("chi-square {chi2:.2} >= critical {critical:.2}"));
    }

    // exact binomial-weighted expectation vs the Monte-Carlo mean
    let exact: f64 =
        (0..=n_window).map(|m| binom_pmf(n_window, m, pi_theta) * diff_norm(m)).sum();
    let mc_mean = mc_sum / samples as f64;
    let mc_se =
        ((mc_sumsq / samples as f64 - mc_mean * mc_mean).max(0.0) / samples as f64).sqrt();
    let z = if mc_se > 0.0 { (mc_mean - exact) / mc_se } else { 0.0 };
    if z.abs() > 3.0 {
        report.pass = false;
        report.details.push(format!(
            "Monte-Carlo mean {mc_mean:.6e} vs exact {exact:.6e} ({z:.2} SE)"
        ));
    }

    // (b) decay slope of the exact expectation across window lengths
    let xs: Vec<f64> = windows.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = windows
        .iter()
        .map(|&n| {
            (0..=n)
                .map(|m| binom_pmf(n, m, pi_theta) * diff_norm(m))
                .sum::<f64>()
                .ln()
        })
        .collect();
    let slope = fit_slope(&xs, &ys);
    let slope_bound = lambda_tilde.ln() + 0.05;
    if slope > slope_bound {
        report.pass = false;
        report.details.push(format!(
            "decay slope {slope:.4} exceeds log lambda_tilde + 0.05 = {slope_bound:.4}"
        ));
    }

    // (c) sampled 500-step products against the Perron projector
    let limit = matrix.perron() * DVector::from_element(n_agents, 1.0).transpose();
    let mut max_dist: f64 = 0.0;
    let mut rng_c = stream(seed, StreamKind::Check, 1, 0);
    for _ in 0..20 {
        let m = (0..500).filter(|_| rng_c.gen_bool(pi_theta)).count();
        let mut p = powers[powers_needed.min(m)].clone();
        for _ in powers_needed.min(m)..m {
            p = a * p;
        }
        max_dist = max_dist.max((&p - &limit).amax());
    }
    if max_dist >= 1e-6 {
        report.pass = false;
        report.details.push(format!("500-step product distance {max_dist:.3e} >= 1e-6"));
    }

    report.statistic = chi2;
    report.tolerance = critical;
    let stats = MatrixLemmaStats {
        chi_square: chi2,
        chi_square_critical: critical,
        expectation_z_score: z,
        fitted_slope: slope,
        lambda_tilde_log: lambda_tilde.ln(),
        limit_distance: max_dist,
    };
    Ok((report, stats))
}

trait Ln1pZero {
    fn ln_1p_zero(self) -> f64;
}

impl Ln1pZero for f64 {
    // ln of (1 - p) written so that p = 1 contributes 0 when weighted by
    // (n - m) = 0 terms upstream
    fn ln_1p_zero(self) -> f64 {
        if self <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.ln()
        }
    }
}

// ---------------------------------------------------------------------------
// Uniform-fill mislearning condition (the contrast the bootstrap avoids)

#[derive(Debug, Clone, Serialize)]
pub struct MislearningCondition {
    /// Perron-weighted KL from the true likelihood to L(.|tau).
    pub lhs: f64,
    /// Perron-weighted KL from the true likelihood to the averaged
    /// likelihood over non-transmitted hypotheses.
    pub rhs: f64,
    pub holds: bool,
    /// Achieved quadrature error bound for the rhs.
    pub quadrature_error: f64,
}

/// Evaluates both sides of the total-mislearning condition for the fixed
/// partial-sharing protocol with uniform fill: mislearning of `tau` occurs
/// when the truth looks closer to `tau` than to the averaged remainder.
pub fn check_mislearning_condition(
    models: &LikelihoodModel,
    perron: &DVector<f64>,
    hypotheses: &HypothesisSet,
    tau: usize,
) -> Result<MislearningCondition> {
    assert_ne!(tau, hypotheses.true_index());
    let truth = hypotheses.true_index();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut quadrature_error = 0.0;
    for k in 0..models.num_agents() {
        lhs += perron[k] * models.kl_divergence(k, truth, tau)?;
        let (kl, err) = kl_truth_to_average(models, k, tau, truth);
        rhs += perron[k] * kl;
        quadrature_error += perron[k] * err;
    }
    Ok(MislearningCondition { lhs, rhs, holds: lhs < rhs, quadrature_error })
}

/// `KL(L_k(.|truth) || mean of L_k(.|theta) over theta != tau)`. Closed
/// summation for finite alphabets; adaptive quadrature over a 10-sigma
/// window for Gaussian mixtures (target absolute error 1e-6).
pub fn kl_truth_to_average(
    models: &LikelihoodModel,
    agent: usize,
    tau: usize,
    truth: usize,
) -> (f64, f64) {
    match models.agent(agent) {
        Likelihood::Finite { rows } => {
            let h = rows.len();
            let alphabet = rows[0].len();
            let mut kl = 0.0;
            for s in 0..alphabet {
                let p = rows[truth][s];
                if p > 0.0 {
                    let q: f64 = (0..h).filter(|&t| t != tau).map(|t| rows[t][s]).sum::<f64>()
                        / (h - 1) as f64;
                    kl += p * (p / q).ln();
                }
            }
            (kl.max(0.0), 0.0)
        }
        Likelihood::Gaussian { means } => {
            let h = means.len();
            let m0 = means[truth];
            let lo = means.iter().cloned().fold(m0, f64::min) - 10.0;
            let hi = means.iter().cloned().fold(m0, f64::max) + 10.0;
            let integrand = |x: f64| {
                let log_p = -0.5 * (x - m0) * (x - m0);
                let q_terms: Vec<f64> = (0..h)
                    .filter(|&t| t != tau)
                    .map(|t| -0.5 * (x - means[t]) * (x - means[t]))
                    .collect();
                let log_q = crate::numeric::logsumexp(&q_terms) - ((h - 1) as f64).ln();
                let p = log_p.exp() / (2.0 * std::f64::consts::PI).sqrt();
                p * (log_p - log_q)
            };
            let (kl, err) = adaptive_simpson(&integrand, lo, hi, 1e-6);
            (kl.max(0.0), err)
        }
    }
}

/// A 2-agent Gaussian instance engineered so the uniform-fill mislearning
/// condition holds: `tau` sits next to the truth while the remaining
/// hypothesis is far away.
pub fn mislearning_instance() -> (CombinationMatrix, LikelihoodModel, HypothesisSet) {
    let topology = Topology::complete(2);
    let matrix = build_metropolis(&topology).unwrap();
    let hypotheses = HypothesisSet::new(3, 0).unwrap();
    let means = vec![0.0, 0.1, 5.0];
    let models = LikelihoodModel::new(
        vec![
            Likelihood::Gaussian { means: means.clone() },
            Likelihood::Gaussian { means },
        ],
        &hypotheses,
    )
    .unwrap();
    (matrix, models, hypotheses)
}

/// Confirms the engineered instance satisfies the condition and that a
/// uniform-fill simulation indeed mislearns `tau` with full confidence.
pub fn check_mislearning_contrast(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("mislearning_contrast", seed);
    let (matrix, models, hypotheses) = mislearning_instance();
    let tau = 1usize;
    let condition = check_mislearning_condition(&models, matrix.perron(), &hypotheses, tau)?;
    report.details.push(format!(
        "condition lhs {:.6} < rhs {:.6} (quadrature error {:.1e})",
        condition.lhs, condition.rhs, condition.quadrature_error
    ));
    if !condition.holds {
        report.pass = false;
        report.statistic = condition.lhs - condition.rhs;
        return Ok(report);
    }
    let truth = hypotheses.true_index();
    let mut state = NetworkState::initial(vec![BeliefVector::uniform(3); 2]);
    for _ in 0..400 {
        let (next, _) = step(&state, ProtocolKind::FixedPartial(tau), &matrix, &models, truth,
            None, seed)?;
        state = next;
    }
    report.statistic = state.beliefs.iter().map(|b| b.prob(tau)).fold(f64::INFINITY, f64::min);
    report.tolerance = 0.99;
    if report.statistic <= report.tolerance {
        report.pass = false;
        report.details.push(format!("min mu(tau) after 400 steps: {:.6}", report.statistic));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Truth sharing suffices under the uniform fill

/// With the shared hypothesis fixed at the truth and the uniform fill, every
/// agent must become fully confident in the truth. Contrast: the same setup
/// under bootstrapping stalls.
pub fn check_truth_sharing_uniform_fill(horizon: u64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("truth_sharing_uniform_fill", seed);
    report.tolerance = 0.99;
    let mut config = presets::full_sharing_benchmark(horizon, seed);
    let truth = config.hypotheses.true_index();
    config.protocol = ProtocolKind::FixedPartial(truth);

    // modified identifiability precondition: some agent separates the truth
    // from the averaged remainder
    let witness = (0..config.num_agents()).find(|&k| {
        kl_truth_to_average(&config.models, k, truth, truth).0 > 1e-12
    });
    if witness.is_none() {
        report.pass = false;
        report.details.push("no agent satisfies the modified identifiability condition".into());
        return Ok(report);
    }

    let trace = run_experiment(&config)?;
    let rec = trace.final_record();
    report.statistic =
        (0..config.num_agents()).map(|k| rec.log_beliefs[k][truth].exp()).fold(f64::INFINITY, f64::min);
    if report.statistic <= report.tolerance {
        report.pass = false;
        for k in 0..config.num_agents() {
            let b = rec.log_beliefs[k][truth].exp();
            if b <= report.tolerance {
                report.details.push(format!("agent {k}: final truth belief {b:.6}"));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Log-ratio recursion identities

/// Under full sharing the log-belief ratios obey the linear recursion
/// `r_{k,i} = sum_l a_{lk} (log L_l(x|theta)/L_l(x|truth) + r_{l,i-1})`.
/// Verifies 50 random steps at 1e-10.
pub fn check_full_sharing_recursion(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("full_sharing_recursion", seed);
    report.tolerance = 1e-10;
    let config = presets::full_sharing_benchmark(0, seed);
    let truth = config.hypotheses.true_index();
    let k_agents = config.num_agents();
    let h = config.num_hypotheses();
    let mut state = NetworkState::initial(config.initial_beliefs.clone());
    for step_idx in 0..50u64 {
        let time = state.time + 1;
        let observations: Vec<Observation> = (0..k_agents)
            .map(|k| {
                let mut rng = stream(seed, StreamKind::Observation, k as u64, time);
                config.models.sample_observation(k, truth, &mut rng)
            })
            .collect();
        let next = step_with_inputs(
            &state,
            ProtocolKind::FullSharing,
            &config.matrix,
            &config.models,
            &observations,
            None,
        )?;
        for theta in 0..h {
            for k in 0..k_agents {
                let lhs = next.beliefs[k].log_ratio(theta, truth);
                let rhs: f64 = (0..k_agents)
                    .map(|l| {
                        let loglik = config.models.log_likelihood(l, theta, &observations[l])
                            - config.models.log_likelihood(l, truth, &observations[l]);
                        config.matrix.weight(l, k)
                            * (loglik + state.beliefs[l].log_ratio(theta, truth))
                    })
                    .sum();
                let err = (lhs - rhs).abs();
                report.statistic = report.statistic.max(err);
                if err > report.tolerance {
                    report.pass = false;
                    report.details.push(format!(
                        "step {step_idx}, agent {k}, hypothesis {theta}: residual {err:.3e}"
                    ));
                }
            }
        }
        state = next;
    }
    Ok(report)
}

/// One trending step equals the effective-matrix form: for a wrong
/// hypothesis `theta`, `r_{k,i} = sum_l [A~_i]_{lk} (loglik_l + r_{l,i-1})
/// + (1{tau=truth} - 1{tau=theta}) sum_l a_{lk} log(psi_k(truth)/psi_l(truth))`
/// where `A~_i` is A when `tau = theta` and the identity otherwise.
/// Verified at 1e-10 on random 4-agent instances.
pub fn check_trending_step_identity(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("trending_step_identity", seed);
    report.tolerance = 1e-10;
    let topology = Topology::complete(4);
    let matrix = build_metropolis(&topology).unwrap();
    let h = 3usize;
    let truth = 0usize;
    let hypotheses = HypothesisSet::new(h, truth).unwrap();
    let mut rng = stream(seed, StreamKind::Check, 7, 0);
    for instance in 0..25u64 {
        let models = LikelihoodModel::new(
            (0..4)
                .map(|_| Likelihood::Gaussian {
                    means: (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                })
                .collect(),
            &hypotheses,
        )?;
        let beliefs: Vec<BeliefVector> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..h).map(|_| rng.gen_range(0.05..1.0)).collect();
                let z: f64 = raw.iter().sum();
                BeliefVector::from_probs(&raw.iter().map(|p| p / z).collect::<Vec<_>>()).unwrap()
            })
            .collect();
        let state = NetworkState::initial(beliefs);
        let observations: Vec<Observation> = (0..4)
            .map(|k| models.sample_observation(k, truth, &mut rng))
            .collect();
        for tau in 0..h {
            let next = step_with_inputs(
                &state,
                ProtocolKind::TrendingBootstrap,
                &matrix,
                &models,
                &observations,
                Some(tau),
            )?;
            // intermediate beliefs from the adapt half-step
            let psis: Vec<BeliefVector> = (0..4)
                .map(|k| {
                    local_bayes_update(
                        &state.beliefs[k],
                        &models.log_likelihood_row(k, &observations[k]),
                    )
                    .unwrap()
                })
                .collect();
            for theta in 0..h {
                if theta == truth {
                    continue;
                }
                for k in 0..4 {
                    let lhs = next.beliefs[k].log_ratio(theta, truth);
                    let effective = |l: usize| -> f64 {
                        if tau == theta {
                            matrix.weight(l, k)
                        } else if l == k {
                            1.0
                        } else {
                            0.0
                        }
                    };
                    let mut rhs: f64 = (0..4)
                        .map(|l| {
                            let loglik = models.log_likelihood(l, theta, &observations[l])
                                - models.log_likelihood(l, truth, &observations[l]);
                            effective(l) * (loglik + state.beliefs[l].log_ratio(theta, truth))
                        })
                        .sum();
                    let indicator = (tau == truth) as i32 - (tau == theta) as i32;
                    if indicator != 0 {
                        rhs += indicator as f64
                            * (0..4)
                                .map(|l| {
                                    matrix.weight(l, k)
                                        * (psis[k].log_prob(truth) - psis[l].log_prob(truth))
                                })
                                .sum::<f64>();
                    }
                    let err = (lhs - rhs).abs();
                    report.statistic = report.statistic.max(err);
                    if err > report.tolerance {
                        report.pass = false;
                        report.details.push(format!(
                            "instance {instance}, tau {tau}, agent {k}, hypothesis {theta}: \
                             residual {err:.3e}"
                        ));
                    }
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Residual-mean vanishing

/// Tracks the disagreement residuals of the trending recursion over a run
/// and asserts their running mean at the horizon is below 10% of the
/// asymptotic rate magnitude. A desk-scale surrogate for the almost-sure
/// asymptotic statement.
pub fn check_residual_mean(config: &ExperimentConfig, theta: usize) -> Result<CheckReport> {
    assert!(matches!(config.protocol, ProtocolKind::TrendingBootstrap));
    let mut report = CheckReport::new("residual_mean", config.seed);
    let truth = config.hypotheses.true_index();
    assert_ne!(theta, truth);
    let pi = config.trend.as_ref().unwrap();
    let k_agents = config.num_agents();
    let a_t = config.matrix.entries().transpose();
    let d = asymptotic_rate(&config.models, config.matrix.perron(), theta, truth)?;
    report.tolerance = 0.1 * d.abs();

    // accumulated residual vector: each past term is propagated by the
    // transpose of the step's effective matrix before the new one is added
    let mut residual_sum = DVector::zeros(k_agents);
    let mut state = NetworkState::initial(config.initial_beliefs.clone());
    for _ in 0..config.horizon {
        let (next, tau) = step(&state, config.protocol, &config.matrix, &config.models, truth,
            Some(pi), config.seed)?;
        let tau = tau.unwrap();
        // propagate by the effective matrix of this step (A if tau = theta)
        if tau == theta {
            residual_sum = &a_t * residual_sum;
        }
        let indicator = (tau == truth) as i32 - (tau == theta) as i32;
        if indicator != 0 {
            let psi_truth =
                DVector::from_iterator(k_agents, next.intermediates.iter().map(|p| p.log_prob(truth)));
            let term = (&psi_truth - &a_t * &psi_truth) * indicator as f64;
            residual_sum += term;
        }
        state = next;
    }
    report.statistic =
        residual_sum.iter().map(|r| r.abs()).fold(0.0, f64::max) / config.horizon as f64;
    report.pass = report.statistic < report.tolerance;
    if !report.pass {
        report.details.push(format!(
            "mean residual {:.4e} vs 10% of |d_ave| = {:.4e}",
            report.statistic, report.tolerance
        ));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Battery driver

pub const CHECK_NAMES: &[&str] = &[
    "rate_convergence",
    "supermartingale",
    "fixed_point",
    "fixed_point_contrast",
    "no_mislearning",
    "matrix_product_lemmas",
    "mislearning_contrast",
    "truth_sharing_uniform_fill",
    "full_sharing_recursion",
    "trending_step_identity",
    "residual_mean",
];

/// Runs the named checks (or all of them for "all") with battery-scale
/// defaults, deterministic from `seed`.
pub fn run_battery(selectors: &[String], seed: u64) -> Result<Vec<CheckReport>> {
    let wanted: Vec<&str> = if selectors.iter().any(|s| s == "all") {
        CHECK_NAMES.to_vec()
    } else {
        selectors.iter().map(|s| s.as_str()).collect()
    };
    for name in &wanted {
        if !CHECK_NAMES.contains(name) {
            return Err(crate::error::Error::InvalidConfig(vec![format!(
                "unknown check \"{name}\"; available: {}",
                CHECK_NAMES.join(", ")
            )]));
        }
    }
    let mut reports = Vec::new();
    for name in wanted {
        let report = match name {
            "rate_convergence" => {
                check_rate_convergence(&presets::trending_benchmark(3000, seed), 0.05)?
            }
            "supermartingale" => {
                check_supermartingale(&presets::trending_benchmark(200, seed), 20, 1000)?
            }
            "fixed_point" => check_fixed_point(0.3, seed)?,
            "fixed_point_contrast" => check_fixed_point_breaks_with_wrong_sharing(seed)?,
            "no_mislearning" => {
                let skewed = {
                    let mut c = presets::trending_benchmark(2000, seed);
                    c.trend =
                        Some(TrendDistribution::new(vec![0.6, 0.1, 0.1, 0.1, 0.1]).unwrap());
                    c
                };
                check_no_mislearning(&[
                    ("truth_only", presets::truth_sharing_benchmark(5000, seed)),
                    ("skewed", skewed),
                    ("uniform", {
                        let mut c = presets::trending_benchmark(2000, seed);
                        c.trend = Some(TrendDistribution::new(vec![0.2; 5]).unwrap());
                        c
                    }),
                ])?
            }
            "matrix_product_lemmas" => {
                let matrix = build_metropolis(&presets::bench_topology()).unwrap();
                let windows: Vec<usize> = (5..=60).step_by(5).collect();
                check_matrix_product_lemmas(&matrix, 0.25, &windows, 10_000, seed)?.0
            }
            "mislearning_contrast" => check_mislearning_contrast(seed)?,
            "truth_sharing_uniform_fill" => check_truth_sharing_uniform_fill(2000, seed)?,
            "full_sharing_recursion" => check_full_sharing_recursion(seed)?,
            "trending_step_identity" => check_trending_step_identity(seed)?,
            "residual_mean" => {
                check_residual_mean(&presets::trending_benchmark(3000, seed), 1)?
            }
            _ => unreachable!(),
        };
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_holds_for_any_alpha() {
        for alpha in [0.1, 0.3, 0.5] {
            let report = check_fixed_point(alpha, 3).unwrap();
            assert!(report.pass, "alpha {alpha}: {:?}", report.details);
        }
    }

    #[test]
    fn fixed_point_breaks_with_wrong_hypothesis_sharing() {
        let report = check_fixed_point_breaks_with_wrong_sharing(3).unwrap();
        assert!(report.pass, "{:?}", report.details);
    }

    #[test]
    fn supermartingale_negative_control_fails() {
        // flipped inequality must fail somewhere along the run
        let config = presets::trending_benchmark(200, 5);
        let flipped = check_supermartingale_inner(&config, 20, 300, true).unwrap();
        assert!(!flipped.pass, "flipped check unexpectedly passed");
    }

    #[test]
    fn supermartingale_equality_case_is_tight() {
        // deterministic trend and uninformative likelihoods: Q is constant,
        // so branched estimates equal Q_prev exactly
        let mut config = presets::trending_benchmark(40, 5);
        let hyp = HypothesisSet::new(5, 0).unwrap();
        config.models = LikelihoodModel::new(
            (0..10)
                .map(|_| Likelihood::Gaussian { means: vec![0.3; 5] })
                .collect(),
            &hyp,
        )
        .unwrap();
        config.trend = Some(TrendDistribution::delta(2, 5));
        let report = check_supermartingale(&config, 10, 50).unwrap();
        assert!(report.pass, "{:?}", report.details);
        assert!(report.statistic.abs() < 1e-6, "statistic {}", report.statistic);
    }

    #[test]
    fn mislearning_condition_degenerate_cases() {
        // identical rows everywhere: both sides zero, no strict inequality
        let hyp = HypothesisSet::new(3, 0).unwrap();
        let flat = LikelihoodModel::new(
            vec![Likelihood::Gaussian { means: vec![0.4; 3] }],
            &hyp,
        )
        .unwrap();
        let v = DVector::from_vec(vec![1.0]);
        let c = check_mislearning_condition(&flat, &v, &hyp, 1).unwrap();
        assert!(c.lhs.abs() < 1e-9 && c.rhs.abs() < 1e-9 && !c.holds);

        // H = 2: the averaged remainder reduces to the truth itself, so the
        // rhs vanishes and the condition can never hold
        let hyp2 = HypothesisSet::new(2, 0).unwrap();
        let m2 = LikelihoodModel::new(
            vec![Likelihood::Gaussian { means: vec![0.0, 0.7] }],
            &hyp2,
        )
        .unwrap();
        let c2 = check_mislearning_condition(&m2, &v, &hyp2, 1).unwrap();
        assert!(c2.rhs.abs() < 1e-6, "rhs {}", c2.rhs);
        assert!((c2.lhs - 0.245).abs() < 1e-9);
        assert!(!c2.holds);
    }

    #[test]
    fn matrix_lemma_degenerate_probabilities() {
        let matrix = build_metropolis(&Topology::complete(4)).unwrap();
        // pi = 1: the product is A^n exactly and the decay slope is log
        // lambda itself
        let windows: Vec<usize> = (5..=40).step_by(5).collect();
        let (report, stats) =
            check_matrix_product_lemmas(&matrix, 1.0, &windows, 2000, 11).unwrap();
        assert!(report.pass, "{:?}", report.details);
        // complete-graph Metropolis is the rank-one averaging matrix:
        // lambda = 0 and products collapse immediately
        assert!(stats.limit_distance < 1e-12);
    }

    #[test]
    fn residual_mean_vanishes_on_benchmark() {
        let report = check_residual_mean(&presets::trending_benchmark(3000, 9), 1).unwrap();
        assert!(report.pass, "{:?}", report.details);
    }

    #[test]
    fn battery_rejects_unknown_selector() {
        assert!(run_battery(&["nonsense".into()], 1).is_err());
    }
}
