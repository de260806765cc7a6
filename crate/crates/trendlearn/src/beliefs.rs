//! Belief representation and the three fusion protocols: full sharing,
//! fixed-hypothesis uniform fill, and trending-hypothesis bootstrapping.
//!
//! All arithmetic is in the log domain. Wrong-hypothesis beliefs decay
//! exponentially and would underflow linear doubles within a few hundred
//! steps; log storage keeps the ratios exact. A log-belief may reach -inf
//! only through genuine support intersection, never by flooring.

use crate::error::{Error, Result};
use crate::models::{LikelihoodModel, Observation, TrendDistribution};
use crate::network::CombinationMatrix;
use crate::numeric::logsumexp;
use crate::rng::{stream, StreamKind};

pub const NORMALIZATION_TOL: f64 = 1e-10;

/// pmf over hypotheses stored as natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    log_probs: Vec<f64>,
}

impl BeliefVector {
    /// Normalizes a vector of unnormalized log masses.
    pub fn from_log_unnormalized(mut log_probs: Vec<f64>) -> Result<Self> {
        let z = logsumexp(&log_probs);
        if z == f64::NEG_INFINITY || z.is_nan() {
            return Err(Error::BeliefOutOfRange(z));
        }
        for l in &mut log_probs {
            *l -= z;
        }
        Ok(Self { log_probs })
    }

    /// From linear-domain probabilities; zeros become -inf log entries.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| p < 0.0 || p > 1.0) {
            return Err(Error::BeliefOutOfRange(
                probs.iter().cloned().find(|&p| !(0.0..=1.0).contains(&p)).unwrap(),
            ));
        }
        Self::from_log_unnormalized(probs.iter().map(|&p| p.ln()).collect())
    }

    pub fn uniform(h: usize) -> Self {
        Self { log_probs: vec![-(h as f64).ln(); h] }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_prob(&self, theta: usize) -> f64 {
        self.log_probs[theta]
    }

    pub fn prob(&self, theta: usize) -> f64 {
        self.log_probs[theta].exp()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// log mu(theta) - log mu(theta_0), the quantity whose decay slope is the
    /// learning rate.
    pub fn log_ratio(&self, theta: usize, truth: usize) -> f64 {
        self.log_probs[theta] - self.log_probs[truth]
    }

    /// Deviation of log-sum-exp from zero.
    pub fn normalization_defect(&self) -> f64 {
        logsumexp(&self.log_probs).abs()
    }
}

/// Which exchange rule the network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Entire intermediate beliefs exchanged and fused geometrically.
    FullSharing,
    /// One fixed hypothesis exchanged; missing components filled uniformly.
    FixedPartial(usize),
    /// Random trending hypothesis exchanged; missing components filled with
    /// the receiver's own intermediate belief (bootstrapping).
    TrendingBootstrap,
}

/// Exact Bayes on the hypothesis simplex:
/// `log psi(theta) = log L(x|theta) + log mu(theta) - lse`.
pub fn local_bayes_update(prior: &BeliefVector, log_likelihood_row: &[f64]) -> Result<BeliefVector> {
    let joint: Vec<f64> = prior
        .log_probs()
        .iter()
        .zip(log_likelihood_row)
        .map(|(&lp, &ll)| lp + ll)
        .collect();
    BeliefVector::from_log_unnormalized(joint)
}

/// Weighted geometric fusion: `log mu(theta) = sum_l a_l log psi_l(theta)`,
/// normalized. Zero-weight inputs are skipped, so the output support is the
/// intersection of the supports of the positively weighted inputs.
pub fn combine_full(intermediates: &[BeliefVector], weights: &[f64]) -> Result<BeliefVector> {
    assert_eq!(intermediates.len(), weights.len());
    let h = intermediates[0].len();
    let mut log_out = vec![0.0; h];
    for (psi, &w) in intermediates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (out, &lp) in log_out.iter_mut().zip(psi.log_probs()) {
            *out += w * lp;
        }
    }
    BeliefVector::from_log_unnormalized(log_out)
}

/// Uniform completion of a partially received belief: entry `tau` is the
/// received value, every other entry gets `(1 - psi(tau))/(H-1)`.
/// `received_log` is `log psi_l(tau)` and must correspond to a value in
/// (0, 1]; a saturated value of exactly 1 yields the point mass on `tau`.
pub fn fill_uniform(received_log: f64, tau: usize, h: usize) -> Result<BeliefVector> {
    assert!(h >= 2);
    if received_log > 0.0 || received_log.is_nan() || received_log == f64::NEG_INFINITY {
        return Err(Error::BeliefOutOfRange(received_log.exp()));
    }
    // log((1 - psi)/(H-1)) computed stably from the log of psi
    let rest = (-received_log.exp()).ln_1p() - ((h - 1) as f64).ln();
    let mut log_probs = vec![rest; h];
    log_probs[tau] = received_log;
    Ok(BeliefVector { log_probs })
}

/// Bootstrap completion: the receiver keeps its own intermediate belief on
/// every hypothesis except `tau`, where it substitutes the received value,
/// then renormalizes by `Z = 1 - psi_k(tau) + psi_l(tau)`.
pub fn bootstrap_fill(own: &BeliefVector, received_log: f64, tau: usize) -> Result<BeliefVector> {
    if received_log > 0.0 || received_log.is_nan() {
        return Err(Error::BeliefOutOfRange(received_log.exp()));
    }
    let delta = received_log.exp() - own.prob(tau);
    let log_z = delta.ln_1p();
    assert!(log_z.is_finite(), "bootstrap denominator must stay positive");
    let mut log_probs: Vec<f64> = own.log_probs().iter().map(|&l| l - log_z).collect();
    log_probs[tau] = received_log - log_z;
    Ok(BeliefVector { log_probs })
}

/// Network-wide loop state: beliefs after combination at `time`, plus the
/// intermediate beliefs produced during the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub beliefs: Vec<BeliefVector>,
    pub intermediates: Vec<BeliefVector>,
    pub time: u64,
}

impl NetworkState {
    pub fn initial(beliefs: Vec<BeliefVector>) -> Self {
        let intermediates = beliefs.clone();
        Self { beliefs, intermediates, time: 0 }
    }

    pub fn num_agents(&self) -> usize {
        self.beliefs.len()
    }
}

/// One synchronous round with the randomness supplied by the caller:
/// all agents adapt, then exchange, then combine.
pub fn step_with_inputs(
    state: &NetworkState,
    protocol: ProtocolKind,
    matrix: &CombinationMatrix,
    models: &LikelihoodModel,
    observations: &[Observation],
    tau: Option<usize>,
) -> Result<NetworkState> {
    let k_agents = state.num_agents();
    let time = state.time + 1;
    let wrap = |agent: usize, e: Error| Error::Step { agent, time, source: Box::new(e) };

    // adapt
    let mut psis = Vec::with_capacity(k_agents);
    for k in 0..k_agents {
        let row = models.log_likelihood_row(k, &observations[k]);
        let psi = local_bayes_update(&state.beliefs[k], &row)
            .map_err(|_| Error::ImpossibleObservation { agent: k, time })?;
        psis.push(psi);
    }

    // exchange + combine
    let mut beliefs = Vec::with_capacity(k_agents);
    for k in 0..k_agents {
        let weights = matrix.column(k);
        let combined = match protocol {
            ProtocolKind::FullSharing => combine_full(&psis, &weights),
            ProtocolKind::FixedPartial(tau_fixed) => {
                let mut filled = Vec::with_capacity(k_agents);
                for (l, psi) in psis.iter().enumerate() {
                    if weights[l] > 0.0 {
                        filled.push(
                            fill_uniform(psi.log_prob(tau_fixed), tau_fixed, psi.len())
                                .map_err(|e| wrap(k, e))?,
                        );
                    } else {
                        filled.push(psi.clone());
                    }
                }
                combine_full(&filled, &weights)
            }
            ProtocolKind::TrendingBootstrap => {
                let tau_i = tau.expect("trending protocol needs a sampled trend");
                let mut filled = Vec::with_capacity(k_agents);
                for (l, psi) in psis.iter().enumerate() {
                    if weights[l] > 0.0 && l != k {
                        filled.push(
                            bootstrap_fill(&psis[k], psi.log_prob(tau_i), tau_i)
                                .map_err(|e| wrap(k, e))?,
                        );
                    } else {
                        // the self edge uses the agent's own intermediate as is
                        filled.push(psi.clone());
                    }
                }
                combine_full(&filled, &weights)
            }
        }
        .map_err(|e| wrap(k, e))?;
        debug_assert!(combined.normalization_defect() < NORMALIZATION_TOL);
        beliefs.push(combined);
    }

    Ok(NetworkState { beliefs, intermediates: psis, time })
}

/// Samples this round's observations (and trend, when applicable) from the
/// seeded streams, then executes one synchronous round.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &NetworkState,
    protocol: ProtocolKind,
    matrix: &CombinationMatrix,
    models: &LikelihoodModel,
    truth: usize,
    trend: Option<&TrendDistribution>,
    master_seed: u64,
) -> Result<(NetworkState, Option<usize>)> {
    let time = state.time + 1;
    let observations: Vec<Observation> = (0..state.num_agents())
        .map(|k| {
            let mut rng = stream(master_seed, StreamKind::Observation, k as u64, time);
            models.sample_observation(k, truth, &mut rng)
        })
        .collect();
    let tau = match protocol {
        ProtocolKind::TrendingBootstrap => {
            let pi = trend.expect("trending protocol needs a trend distribution");
            Some(pi.sample(&mut stream(master_seed, StreamKind::Trend, 0, time)))
        }
        _ => None,
    };
    let next = step_with_inputs(state, protocol, matrix, models, &observations, tau)?;
    Ok((next, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HypothesisSet, Likelihood};
    use crate::network::{build_metropolis, Topology};
    use approx::assert_abs_diff_eq;

    fn belief(probs: &[f64]) -> BeliefVector {
        BeliefVector::from_probs(probs).unwrap()
    }

    #[test]
    fn bayes_update_uniform_prior_passes_likelihood_through() {
        let prior = BeliefVector::uniform(3);
        let row: Vec<f64> = [0.5f64, 0.25, 0.25].iter().map(|p| p.ln()).collect();
        let post = local_bayes_update(&prior, &row).unwrap();
        assert_abs_diff_eq!(post.prob(0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(post.prob(1), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn bayes_update_uninformative_observation_keeps_prior() {
        let prior = belief(&[0.7, 0.2, 0.1]);
        let row = [(-1.3f64), -1.3, -1.3];
        let post = local_bayes_update(&prior, &row).unwrap();
        for t in 0..3 {
            assert_abs_diff_eq!(post.prob(t), prior.prob(t), epsilon = 1e-14);
        }
    }

    #[test]
    fn bayes_update_direct_evaluation() {
        let prior = belief(&[0.8, 0.2]);
        let row = [0.1f64.ln(), 0.4f64.ln()];
        let post = local_bayes_update(&prior, &row).unwrap();
        assert_abs_diff_eq!(post.prob(0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(post.prob(1), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn bayes_update_rejects_all_impossible_row() {
        let prior = BeliefVector::uniform(2);
        let row = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!(local_bayes_update(&prior, &row).is_err());
    }

    #[test]
    fn combine_identity_column_is_identity() {
        let psis = vec![belief(&[0.9, 0.1]), belief(&[0.3, 0.7])];
        let out = combine_full(&psis, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(out.prob(0), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn combine_symmetric_geometric_mean() {
        let psis = vec![belief(&[0.9, 0.1]), belief(&[0.1, 0.9])];
        let out = combine_full(&psis, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(out.prob(0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.prob(1), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn combine_matches_linear_domain_oracle() {
        let psis = vec![belief(&[0.6, 0.3, 0.1]), belief(&[0.2, 0.5, 0.3]), belief(&[0.1, 0.1, 0.8])];
        let w = [0.2, 0.3, 0.5];
        let out = combine_full(&psis, &w).unwrap();
        // brute-force linear-domain geometric pooling
        let mut lin = [0.0f64; 3];
        for t in 0..3 {
            lin[t] = psis.iter().zip(&w).map(|(p, &a)| p.prob(t).powf(a)).product();
        }
        let z: f64 = lin.iter().sum();
        for t in 0..3 {
            assert_abs_diff_eq!(out.prob(t), lin[t] / z, epsilon = 1e-12);
        }
    }

    #[test]
    fn combine_support_is_intersection_of_supports() {
        let psis = vec![belief(&[0.5, 0.5, 0.0]), belief(&[0.0, 0.5, 0.5])];
        let out = combine_full(&psis, &[0.5, 0.5]).unwrap();
        assert_eq!(out.log_prob(0), f64::NEG_INFINITY);
        assert_eq!(out.log_prob(2), f64::NEG_INFINITY);
        assert_abs_diff_eq!(out.prob(1), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fill_uniform_examples() {
        let f = fill_uniform(0.4f64.ln(), 0, 4).unwrap();
        assert_abs_diff_eq!(f.prob(0), 0.4, epsilon = 1e-14);
        for t in 1..4 {
            assert_abs_diff_eq!(f.prob(t), 0.2, epsilon = 1e-14);
        }
        let g = fill_uniform(0.7f64.ln(), 0, 2).unwrap();
        assert_abs_diff_eq!(g.prob(1), 0.3, epsilon = 1e-14);
        // psi = 1/H is a fixed point of the fill
        let u = fill_uniform((1.0f64 / 3.0).ln(), 1, 3).unwrap();
        for t in 0..3 {
            assert_abs_diff_eq!(u.prob(t), 1.0 / 3.0, epsilon = 1e-14);
        }
        // saturated share: all mass on tau
        let s = fill_uniform(0.0, 0, 3).unwrap();
        assert_abs_diff_eq!(s.prob(0), 1.0, epsilon = 1e-14);
        assert_eq!(s.log_prob(1), f64::NEG_INFINITY);
        assert!(fill_uniform(f64::NEG_INFINITY, 0, 3).is_err());
        assert!(fill_uniform(0.1, 0, 3).is_err());
    }

    #[test]
    fn bootstrap_fill_examples() {
        // matching tau entries: Z = 1, own belief returned unchanged
        let own = belief(&[0.5, 0.3, 0.2]);
        let same = bootstrap_fill(&own, own.log_prob(0), 0).unwrap();
        for t in 0..3 {
            assert_abs_diff_eq!(same.prob(t), own.prob(t), epsilon = 1e-14);
        }
        // direct arithmetic: Z = 1 - 0.5 + 0.7 = 1.2
        let out = bootstrap_fill(&own, 0.7f64.ln(), 0).unwrap();
        assert_abs_diff_eq!(out.prob(0), 0.7 / 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(out.prob(1), 0.3 / 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(out.prob(2), 0.2 / 1.2, epsilon = 1e-14);
    }

    #[test]
    fn single_agent_step_is_bayesian_filtering() {
        let topology = Topology::complete(1);
        let matrix = build_metropolis(&topology).unwrap();
        let hyp = HypothesisSet::new(2, 0).unwrap();
        let models = LikelihoodModel::new(
            vec![Likelihood::Gaussian { means: vec![0.0, 1.0] }],
            &hyp,
        )
        .unwrap();
        let mut state = NetworkState::initial(vec![BeliefVector::uniform(2)]);
        for _ in 0..400 {
            let (next, _) =
                step(&state, ProtocolKind::FullSharing, &matrix, &models, 0, None, 21).unwrap();
            state = next;
        }
        assert!(state.beliefs[0].prob(0) > 0.999, "belief {}", state.beliefs[0].prob(0));
    }

    #[test]
    fn trending_matches_full_sharing_for_two_hypotheses() {
        // With H=2, sharing one component determines the whole pmf; verify a
        // trending step against a brute-force evaluation of the bootstrap and
        // combination formulas in linear arithmetic.
        let topology = Topology::complete(3);
        let matrix = build_metropolis(&topology).unwrap();
        let hyp = HypothesisSet::new(2, 0).unwrap();
        let models = LikelihoodModel::new(
            (0..3).map(|k| Likelihood::Gaussian { means: vec![0.0, 0.4 + 0.1 * k as f64] }).collect(),
            &hyp,
        )
        .unwrap();
        let state = NetworkState::initial(vec![
            belief(&[0.3, 0.7]),
            belief(&[0.6, 0.4]),
            belief(&[0.5, 0.5]),
        ]);
        let observations = vec![
            Observation::Real(0.2),
            Observation::Real(-0.1),
            Observation::Real(0.5),
        ];
        let tau = 1usize;
        let next = step_with_inputs(
            &state,
            ProtocolKind::TrendingBootstrap,
            &matrix,
            &models,
            &observations,
            Some(tau),
        )
        .unwrap();
        // brute-force oracle in linear domain
        let psi: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let row = models.log_likelihood_row(k, &observations[k]);
                let un: Vec<f64> =
                    (0..2).map(|t| row[t].exp() * state.beliefs[k].prob(t)).collect();
                let z: f64 = un.iter().sum();
                un.iter().map(|u| u / z).collect()
            })
            .collect();
        for k in 0..3 {
            let mut log_un = vec![0.0f64; 2];
            for l in 0..3 {
                let a = matrix.weight(l, k);
                let hat: Vec<f64> = if l == k {
                    psi[k].clone()
                } else {
                    let z = 1.0 - psi[k][tau] + psi[l][tau];
                    (0..2)
                        .map(|t| if t == tau { psi[l][tau] / z } else { psi[k][t] / z })
                        .collect()
                };
                for t in 0..2 {
                    log_un[t] += a * hat[t].ln();
                }
            }
            let z: f64 = log_un.iter().map(|l| l.exp()).sum();
            for t in 0..2 {
                assert_abs_diff_eq!(next.beliefs[k].prob(t), log_un[t].exp() / z, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn steps_preserve_normalization() {
        let topology = Topology::new(4, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)]).unwrap();
        let matrix = build_metropolis(&topology).unwrap();
        let hyp = HypothesisSet::new(3, 0).unwrap();
        let models = LikelihoodModel::new(
            (0..4)
                .map(|k| Likelihood::Gaussian {
                    means: vec![0.0, 0.3 + 0.1 * k as f64, 0.8],
                })
                .collect(),
            &hyp,
        )
        .unwrap();
        let pi = TrendDistribution::new(vec![0.2, 0.4, 0.4]).unwrap();
        for protocol in [
            ProtocolKind::FullSharing,
            ProtocolKind::FixedPartial(1),
            ProtocolKind::TrendingBootstrap,
        ] {
            let mut state = NetworkState::initial(vec![BeliefVector::uniform(3); 4]);
            for _ in 0..50 {
                let (next, _) = step(&state, protocol, &matrix, &models, 0, Some(&pi), 5).unwrap();
                for b in &next.beliefs {
                    assert!(b.normalization_defect() < NORMALIZATION_TOL);
                }
                state = next;
            }
        }
    }
}
