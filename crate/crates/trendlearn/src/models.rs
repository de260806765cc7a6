//! Hypothesis set, per-agent likelihood families, observation sampling, KL
//! divergences, identifiability checks, and the trending-hypothesis
//! distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PMF_TOL: f64 = 1e-12;
const IDENTIFIABILITY_TOL: f64 = 1e-12;
const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Finite hypothesis set with the (unknown to the agents) true index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypothesisSet {
    count: usize,
    true_index: usize,
}

impl HypothesisSet {
    pub fn new(count: usize, true_index: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidConfig(vec![format!("need H >= 2, got {count}")]));
        }
        if true_index >= count {
            return Err(Error::InvalidConfig(vec![format!(
                "true_index {true_index} out of range for {count} hypotheses"
            )]));
        }
        Ok(Self { count, true_index })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn true_index(&self) -> usize {
        self.true_index
    }

    pub fn wrong(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).filter(move |&t| t != self.true_index)
    }
}

/// One agent's likelihood family over the hypothesis set.
#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood {
    /// Unit-variance Gaussian with one mean per hypothesis.
    Gaussian { means: Vec<f64> },
    /// Finite alphabet; one pmf row per hypothesis.
    Finite { rows: Vec<Vec<f64>> },
}

/// A private observation drawn from one agent's likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Real(f64),
    Symbol(usize),
}

/// Validated per-agent likelihood models for the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    agents: Vec<Likelihood>,
    num_hypotheses: usize,
}

impl LikelihoodModel {
    /// Validates dimensions, pmf rows, and finite informativeness (the
    /// support of the true row must lie inside every other row's support).
    pub fn new(agents: Vec<Likelihood>, hypotheses: &HypothesisSet) -> Result<Self> {
        let h = hypotheses.count();
        for (agent, lik) in agents.iter().enumerate() {
            match lik {
                Likelihood::Gaussian { means } => {
                    if means.len() != h {
                        return Err(Error::InvalidConfig(vec![format!(
                            "agent {agent}: {} means for {h} hypotheses",
                            means.len()
                        )]));
                    }
                    if means.iter().any(|m| !m.is_finite()) {
                        return Err(Error::InvalidConfig(vec![format!(
                            "agent {agent}: non-finite Gaussian mean"
                        )]));
                    }
                }
                Likelihood::Finite { rows } => {
                    if rows.len() != h {
                        return Err(Error::InvalidConfig(vec![format!(
                            "agent {agent}: {} rows for {h} hypotheses",
                            rows.len()
                        )]));
                    }
                    let alphabet = rows[0].len();
                    for (theta, row) in rows.iter().enumerate() {
                        if row.len() != alphabet {
                            return Err(Error::InvalidConfig(vec![format!(
                                "agent {agent}: ragged likelihood rows"
                            )]));
                        }
                        let sum: f64 = row.iter().sum();
                        if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PMF_TOL {
                            return Err(Error::NotPmf { agent, hypothesis: theta, sum });
                        }
                    }
                    // reject infinite KL up front rather than propagating it
                    let truth = hypotheses.true_index();
                    for theta in 0..h {
                        for s in 0..alphabet {
                            if rows[truth][s] > 0.0 && rows[theta][s] == 0.0 {
                                return Err(Error::InfiniteKl { agent, truth, other: theta });
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { agents, num_hypotheses: h })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    pub fn agent(&self, k: usize) -> &Likelihood {
        &self.agents[k]
    }

    /// Natural log of `L_k(x | theta)`; `-inf` for zero finite-alphabet mass.
    pub fn log_likelihood(&self, agent: usize, theta: usize, x: &Observation) -> f64 {
        match (&self.agents[agent], x) {
            (Likelihood::Gaussian { means }, Observation::Real(v)) => {
                let d = v - means[theta];
                -0.5 * d * d - 0.5 * LN_2PI
            }
            (Likelihood::Finite { rows }, Observation::Symbol(s)) => {
                let p = rows[theta][*s];
                if p > 0.0 {
                    p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ => panic!("observation kind does not match likelihood kind"),
        }
    }

    /// Full log-likelihood row over hypotheses for one observation.
    pub fn log_likelihood_row(&self, agent: usize, x: &Observation) -> Vec<f64> {
        (0..self.num_hypotheses).map(|t| self.log_likelihood(agent, t, x)).collect()
    }

    /// `D_KL(L_k(.|a) || L_k(.|b))`. Gaussian closed form `(m_a - m_b)^2/2`;
    /// finite alphabets sum `p log(p/q)` with `0 log 0 = 0`.
    pub fn kl_divergence(&self, agent: usize, a: usize, b: usize) -> Result<f64> {
        match &self.agents[agent] {
            Likelihood::Gaussian { means } => {
                let d = means[a] - means[b];
                Ok(0.5 * d * d)
            }
            Likelihood::Finite { rows } => {
                let mut kl = 0.0;
                for (p, q) in rows[a].iter().zip(&rows[b]) {
                    if *p > 0.0 {
                        if *q == 0.0 {
                            return Err(Error::InfiniteKl { agent, truth: a, other: b });
                        }
                        kl += p * (p / q).ln();
                    }
                }
                Ok(kl.max(0.0))
            }
        }
    }

    /// `(1/(H-1)) sum_{theta != tau} L_k(x|theta)`: the likelihood averaged
    /// over the non-transmitted hypotheses.
    pub fn average_likelihood(&self, agent: usize, tau: usize, x: &Observation) -> f64 {
        let h = self.num_hypotheses;
        let sum: f64 = (0..h)
            .filter(|&t| t != tau)
            .map(|t| self.log_likelihood(agent, t, x).exp())
            .sum();
        sum / (h - 1) as f64
    }

    /// Draws one observation from `L_agent(.|theta)`.
    pub fn sample_observation(
        &self,
        agent: usize,
        theta: usize,
        rng: &mut ChaCha8Rng,
    ) -> Observation {
        match &self.agents[agent] {
            Likelihood::Gaussian { means } => {
                let z: f64 = rng.sample(StandardNormal);
                Observation::Real(means[theta] + z)
            }
            Likelihood::Finite { rows } => {
                Observation::Symbol(inverse_cdf(&rows[theta], rng.gen()))
            }
        }
    }
}

/// Per-hypothesis identifiability verdict: which agent (if any) separates
/// `theta` from the true hypothesis with strictly positive KL divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityReport {
    /// One entry per wrong hypothesis: `(theta, witnessing agent)`.
    pub witnesses: Vec<(usize, Option<usize>)>,
}

impl IdentifiabilityReport {
    pub fn all_identifiable(&self) -> bool {
        self.witnesses.iter().all(|(_, w)| w.is_some())
    }
}

pub fn check_global_identifiability(
    models: &LikelihoodModel,
    hypotheses: &HypothesisSet,
) -> Result<IdentifiabilityReport> {
    let truth = hypotheses.true_index();
    let mut witnesses = Vec::new();
    for theta in hypotheses.wrong() {
        let mut witness = None;
        for k in 0..models.num_agents() {
            if models.kl_divergence(k, truth, theta)? > IDENTIFIABILITY_TOL {
                witness = Some(k);
                break;
            }
        }
        witnesses.push((theta, witness));
    }
    Ok(IdentifiabilityReport { witnesses })
}

/// pmf over hypotheses governing the shared trending hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendDistribution {
    probs: Vec<f64>,
}

impl TrendDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PMF_TOL {
            return Err(Error::TrendNotPmf(sum));
        }
        Ok(Self { probs })
    }

    pub fn delta(at: usize, count: usize) -> Self {
        let mut probs = vec![0.0; count];
        probs[at] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, theta: usize) -> f64 {
        self.probs[theta]
    }

    /// Inverse-CDF draw over hypotheses in index order.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        inverse_cdf(&self.probs, rng.gen())
    }
}

fn inverse_cdf(pmf: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // numerical slack: fall back to the last positive entry
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(pmf.len() - 1)
}
