//! Seeded experiment execution, trace recording, metric computation, and
//! trace/summary emission.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::beliefs::{step, BeliefVector, NetworkState, ProtocolKind};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::models::{check_global_identifiability, LikelihoodModel};

/// One recorded snapshot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: u64,
    /// K x H log beliefs.
    pub log_beliefs: Vec<Vec<f64>>,
    /// Trending hypothesis drawn at this step, when applicable.
    pub tau: Option<usize>,
    /// Perron-weighted network loss Q(mu_i).
    pub network_loss: f64,
}

/// Time-indexed record of one seeded simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    /// Minimum over all (not only recorded) times and agents of mu_k(truth).
    pub guard_min: f64,
    pub truth: usize,
}

impl RunTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("trace holds at least the initial state")
    }

    /// log mu_k(theta) - log mu_k(truth) at the final recorded time.
    pub fn final_log_ratio(&self, agent: usize, theta: usize) -> f64 {
        let rec = self.final_record();
        rec.log_beliefs[agent][theta] - rec.log_beliefs[agent][self.truth]
    }
}

/// `Q(mu_i) = -sum_k v_k log mu_k(truth)`.
pub fn network_loss(beliefs: &[BeliefVector], perron: &DVector<f64>, truth: usize) -> f64 {
    beliefs
        .iter()
        .zip(perron.iter())
        .map(|(b, &v)| -v * b.log_prob(truth))
        .sum()
}

/// `d_ave(theta) = -sum_k v_k KL(L_k(.|truth) || L_k(.|theta))`: the
/// Perron-weighted asymptotic decay rate of the wrong-hypothesis belief.
pub fn asymptotic_rate(
    models: &LikelihoodModel,
    perron: &DVector<f64>,
    theta: usize,
    truth: usize,
) -> Result<f64> {
    let mut rate = 0.0;
    for k in 0..models.num_agents() {
        rate -= perron[k] * models.kl_divergence(k, truth, theta)?;
    }
    Ok(rate)
}

/// Record stride: every step up to i = 100, then every `stride` (default 10),
/// always including the final step.
fn should_record(time: u64, horizon: u64, stride: Option<u64>) -> bool {
    let stride = stride.unwrap_or(10).max(1);
    time <= 100 || time % stride == 0 || time == horizon
}

/// Runs one seeded simulation and records per-stride snapshots.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunTrace> {
    run_with_seed(config, config.seed)
}

/// As `run_experiment`, with an explicit master seed (used for multi-run
/// aggregation, where run r uses seed + r).
pub fn run_with_seed(config: &ExperimentConfig, seed: u64) -> Result<RunTrace> {
    let truth = config.hypotheses.true_index();
    let perron = config.matrix.perron().clone();
    let mut state = NetworkState::initial(config.initial_beliefs.clone());
    let mut guard_min = state.beliefs.iter().map(|b| b.prob(truth)).fold(f64::INFINITY, f64::min);
    let mut records = vec![snapshot(&state, None, &perron, truth)];

    for _ in 0..config.horizon {
        let (next, tau) = step(
            &state,
            config.protocol,
            &config.matrix,
            &config.models,
            truth,
            config.trend.as_ref(),
            seed,
        )?;
        state = next;
        for b in &state.beliefs {
            guard_min = guard_min.min(b.prob(truth));
        }
        if should_record(state.time, config.horizon, config.stride) {
            records.push(snapshot(&state, tau, &perron, truth));
        }
    }

    Ok(RunTrace { seed, records, guard_min, truth })
}

/// Runs `config.num_runs` independent replicas (run r uses seed + r).
pub fn run_many(config: &ExperimentConfig) -> Result<Vec<RunTrace>> {
    (0..config.num_runs as u64)
        .map(|r| run_with_seed(config, config.seed.wrapping_add(r)))
        .collect()
}

fn snapshot(
    state: &NetworkState,
    tau: Option<usize>,
    perron: &DVector<f64>,
    truth: usize,
) -> TraceRecord {
    TraceRecord {
        time: state.time,
        log_beliefs: state.beliefs.iter().map(|b| b.log_probs().to_vec()).collect(),
        tau,
        network_loss: network_loss(&state.beliefs, perron, truth),
    }
}

/// Infimum over the trace of the truth belief; exact zeros are flagged by
/// the caller as Theorem-2-style violations.
pub fn mislearning_guard(trace: &RunTrace) -> f64 {
    trace.guard_min
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the trace CSV: `time,agent,hypothesis,log_belief,tau,Q` with
/// floats at 17 significant digits. `tau` is empty for non-trending rows.
pub fn write_trace_csv<W: Write>(trace: &RunTrace, mut out: W) -> Result<()> {
    writeln!(out, "time,agent,hypothesis,log_belief,tau,Q")?;
    for rec in &trace.records {
        let tau = rec.tau.map(|t| t.to_string()).unwrap_or_default();
        let q = fmt17(rec.network_loss);
        for (agent, row) in rec.log_beliefs.iter().enumerate() {
            for (hypothesis, &lb) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    rec.time,
                    agent,
                    hypothesis,
                    fmt17(lb),
                    tau,
                    q
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RateEntry {
    pub hypothesis: usize,
    pub d_ave: f64,
    pub per_agent_kl: Vec<f64>,
    pub identifiable: bool,
    pub witness: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub horizon: u64,
    pub truth: usize,
    pub rates: Vec<RateEntry>,
    /// Final linear-domain beliefs, K x H.
    pub final_beliefs: Vec<Vec<f64>>,
    pub guard_min: f64,
    pub final_network_loss: f64,
}

pub fn summarize(config: &ExperimentConfig, trace: &RunTrace) -> Result<RunSummary> {
    let truth = config.hypotheses.true_index();
    let perron = config.matrix.perron();
    let ident = check_global_identifiability(&config.models, &config.hypotheses)?;
    let mut rates = Vec::new();
    for theta in config.hypotheses.wrong() {
        let per_agent_kl: Vec<f64> = (0..config.num_agents())
            .map(|k| config.models.kl_divergence(k, truth, theta))
            .collect::<Result<_>>()?;
        let witness = ident
            .witnesses
            .iter()
            .find(|(t, _)| *t == theta)
            .and_then(|(_, w)| *w);
        rates.push(RateEntry {
            hypothesis: theta,
            d_ave: asymptotic_rate(&config.models, perron, theta, truth)?,
            per_agent_kl,
            identifiable: witness.is_some(),
            witness,
        });
    }
    let final_rec = trace.final_record();
    Ok(RunSummary {
        seed: trace.seed,
        horizon: config.horizon,
        truth,
        rates,
        final_beliefs: final_rec
            .log_beliefs
            .iter()
            .map(|row| row.iter().map(|l| l.exp()).collect())
            .collect(),
        guard_min: trace.guard_min,
        final_network_loss: final_rec.network_loss,
    })
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, json)?;
    Ok(())
}

/// Canonical experiment setups used by the verification battery and shipped
/// as bundled config files.
pub mod presets {
    use super::*;
    use crate::models::{HypothesisSet, Likelihood, LikelihoodModel, TrendDistribution};
    use crate::network::{build_metropolis, Topology};

    /// Undirected edges of the 10-agent benchmark network.
    pub const BENCH_EDGES: &[(usize, usize)] = &[
        (0, 1),
        (0, 2),
        (0, 5),
        (0, 9),
        (1, 2),
        (1, 3),
        (1, 6),
        (2, 4),
        (2, 7),
        (3, 4),
        (3, 5),
        (3, 8),
        (4, 6),
        (4, 9),
        (5, 6),
        (5, 7),
        (6, 8),
        (7, 8),
        (7, 9),
        (8, 9),
    ];

    pub fn bench_topology() -> Topology {
        let edges: Vec<(usize, usize)> =
            BENCH_EDGES.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        Topology::new(10, edges).unwrap()
    }

    /// Per-agent Gaussian means for the 10-agent identifiability setup:
    /// density n has mean 0.3*(n+1); agents 0-1 confuse hypotheses {0,1},
    /// agents 2-4 confuse {0,2}, agents 5-6 confuse {0,3}, agents 7-9
    /// confuse {0,4}.
    pub fn bench_means() -> Vec<Vec<f64>> {
        // literals, not 0.3*(n+1): keeps the preset bit-identical to the
        // bundled config files
        let table = [0.3, 0.6, 0.9, 1.2, 1.5];
        let f = |n: usize| table[n];
        let mut rows = Vec::new();
        for agent in 0..10 {
            let confused = match agent {
                0 | 1 => 1,
                2..=4 => 2,
                5 | 6 => 3,
                _ => 4,
            };
            rows.push(
                (0..5)
                    .map(|theta| if theta == confused { f(0) } else { f(theta) })
                    .collect(),
            );
        }
        rows
    }

    fn bench_config(protocol: ProtocolKind, pi: Option<Vec<f64>>, horizon: u64, seed: u64)
        -> ExperimentConfig {
        let topology = bench_topology();
        let matrix = build_metropolis(&topology).unwrap();
        let hypotheses = HypothesisSet::new(5, 0).unwrap();
        let models = LikelihoodModel::new(
            bench_means()
                .into_iter()
                .map(|means| Likelihood::Gaussian { means })
                .collect(),
            &hypotheses,
        )
        .unwrap();
        ExperimentConfig {
            topology,
            matrix,
            protocol,
            trend: pi.map(|p| TrendDistribution::new(p).unwrap()),
            hypotheses,
            models,
            initial_beliefs: vec![BeliefVector::uniform(5); 10],
            horizon,
            seed,
            num_runs: 1,
            stride: None,
        }
    }

    /// Trending protocol on the benchmark network with the true hypothesis
    /// never shared: pi = (0, .25, .25, .25, .25).
    pub fn trending_benchmark(horizon: u64, seed: u64) -> ExperimentConfig {
        bench_config(
            ProtocolKind::TrendingBootstrap,
            Some(vec![0.0, 0.25, 0.25, 0.25, 0.25]),
            horizon,
            seed,
        )
    }

    /// Same network/models under full belief sharing.
    pub fn full_sharing_benchmark(horizon: u64, seed: u64) -> ExperimentConfig {
        bench_config(ProtocolKind::FullSharing, None, horizon, seed)
    }

    /// Bootstrapping with the shared hypothesis fixed at the truth:
    /// pi = delta at the true hypothesis.
    pub fn truth_sharing_benchmark(horizon: u64, seed: u64) -> ExperimentConfig {
        bench_config(
            ProtocolKind::TrendingBootstrap,
            Some(vec![1.0, 0.0, 0.0, 0.0, 0.0]),
            horizon,
            seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::ProtocolKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn network_loss_examples() {
        let v = DVector::from_vec(vec![0.5, 0.5]);
        let confident = vec![
            BeliefVector::from_probs(&[1.0, 0.0]).unwrap(),
            BeliefVector::from_probs(&[1.0, 0.0]).unwrap(),
        ];
        assert_eq!(network_loss(&confident, &v, 0), 0.0);
        let e1 = (-1.0f64).exp();
        let b = vec![
            BeliefVector::from_probs(&[e1, 1.0 - e1]).unwrap(),
            BeliefVector::from_probs(&[e1, 1.0 - e1]).unwrap(),
        ];
        assert_abs_diff_eq!(network_loss(&b, &v, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn network_loss_matches_kl_definition() {
        // Q(mu_k) = KL(delta_truth || mu_k); check the Perron-weighted sum
        // against per-agent definitional evaluation.
        let v = DVector::from_vec(vec![0.3, 0.7]);
        let beliefs = vec![
            BeliefVector::from_probs(&[0.2, 0.5, 0.3]).unwrap(),
            BeliefVector::from_probs(&[0.6, 0.1, 0.3]).unwrap(),
        ];
        let truth = 0;
        let direct: f64 = beliefs
            .iter()
            .zip(v.iter())
            .map(|(b, &vk)| {
                // KL(delta || mu) = sum_theta delta(theta) log(delta/mu)
                vk * (1.0f64 * (1.0 / b.prob(truth)).ln())
            })
            .sum();
        assert_abs_diff_eq!(network_loss(&beliefs, &v, truth), direct, epsilon = 1e-12);
    }

    #[test]
    fn benchmark_rates_match_closed_form() {
        let cfg = presets::trending_benchmark(10, 0);
        let v = cfg.matrix.perron();
        // doubly stochastic Metropolis matrix: uniform Perron vector
        for k in 0..10 {
            assert_abs_diff_eq!(v[k], 0.1, epsilon = 1e-10);
        }
        // 8 agents distinguish hypothesis 1 at KL (0.3)^2/2 each
        let d2 = asymptotic_rate(&cfg.models, v, 1, 0).unwrap();
        assert_abs_diff_eq!(d2, -0.036, epsilon = 1e-12);
        // 7 agents distinguish hypothesis 4 at KL (1.2)^2/2 each
        let d5 = asymptotic_rate(&cfg.models, v, 4, 0).unwrap();
        assert_abs_diff_eq!(d5, -0.504, epsilon = 1e-12);
        // the true hypothesis has zero self-rate
        assert_eq!(asymptotic_rate(&cfg.models, v, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn horizon_zero_trace_holds_initial_beliefs_only() {
        let mut cfg = presets::trending_benchmark(0, 3);
        cfg.horizon = 0;
        let trace = run_experiment(&cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].time, 0);
        assert_abs_diff_eq!(trace.records[0].log_beliefs[0][0], (0.2f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let cfg = presets::trending_benchmark(50, 99);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_trace_csv(&a, &mut csv_a).unwrap();
        write_trace_csv(&b, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn full_sharing_concentrates_on_truth() {
        let cfg = presets::full_sharing_benchmark(800, 4);
        let trace = run_experiment(&cfg).unwrap();
        let rec = trace.final_record();
        for k in 0..10 {
            assert!(rec.log_beliefs[k][0].exp() > 0.99, "agent {k}");
        }
        assert!(mislearning_guard(&trace) > 0.0);
    }

    #[test]
    fn fixed_partial_protocol_runs() {
        let mut cfg = presets::full_sharing_benchmark(50, 8);
        cfg.protocol = ProtocolKind::FixedPartial(0);
        let trace = run_experiment(&cfg).unwrap();
        assert!(trace.final_record().network_loss.is_finite());
    }

    #[test]
    fn trace_csv_shape() {
        let cfg = presets::trending_benchmark(5, 1);
        let trace = run_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,agent,hypothesis,log_belief,tau,Q");
        // 6 recorded times (0..=5) x 10 agents x 5 hypotheses
        assert_eq!(text.lines().count(), 1 + 6 * 10 * 5);
        // time-0 rows have an empty tau column
        let first = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields[4], "");
    }
}
