//! Experiment configuration: TOML schema, strict parsing, and cross
//! validation into the runtime `ExperimentConfig`.
//!
//! Unknown keys are fatal, and semantic validation reports every problem it
//! finds rather than stopping at the first.

use std::path::Path;

use serde::Deserialize;

use crate::beliefs::{BeliefVector, ProtocolKind};
use crate::error::{Error, Result};
use crate::models::{HypothesisSet, Likelihood, LikelihoodModel, TrendDistribution};
use crate::network::{build_metropolis, CombinationMatrix, Topology};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: RawNetwork,
    protocol: RawProtocol,
    hypotheses: RawHypotheses,
    agents: Vec<RawAgent>,
    run: RawRun,
    initial_beliefs: Option<RawInitialBeliefs>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    num_agents: usize,
    /// Undirected edges between 0-based agent ids; self loops are implied.
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    /// "full" | "fixed" | "trending"
    kind: String,
    tau: Option<usize>,
    pi: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHypotheses {
    count: usize,
    true_index: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    /// "gaussian" | "finite"
    kind: String,
    means: Option<Vec<f64>>,
    rows: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: u64,
    seed: u64,
    num_runs: Option<usize>,
    stride: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitialBeliefs {
    rows: Vec<Vec<f64>>,
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub matrix: CombinationMatrix,
    pub protocol: ProtocolKind,
    pub trend: Option<TrendDistribution>,
    pub hypotheses: HypothesisSet,
    pub models: LikelihoodModel,
    pub initial_beliefs: Vec<BeliefVector>,
    pub horizon: u64,
    pub seed: u64,
    pub num_runs: usize,
    pub stride: Option<u64>,
}

impl ExperimentConfig {
    pub fn num_agents(&self) -> usize {
        self.topology.num_agents()
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses.count()
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    validate(raw)
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig> {
    let mut errors: Vec<String> = Vec::new();
    let k = raw.network.num_agents;
    let h = raw.hypotheses.count;

    if k == 0 {
        errors.push("network.num_agents must be at least 1".into());
    }
    for &(a, b) in &raw.network.edges {
        if a >= k || b >= k {
            errors.push(format!("network.edges: edge ({a},{b}) out of range for {k} agents"));
        }
    }

    let protocol = match raw.protocol.kind.as_str() {
        "full" => Some(ProtocolKind::FullSharing),
        "fixed" => match raw.protocol.tau {
            Some(tau) if tau < h => Some(ProtocolKind::FixedPartial(tau)),
            Some(tau) => {
                errors.push(format!("protocol.tau = {tau} out of range for {h} hypotheses"));
                None
            }
            None => {
                errors.push("protocol.kind = \"fixed\" requires protocol.tau".into());
                None
            }
        },
        "trending" => Some(ProtocolKind::TrendingBootstrap),
        other => {
            errors.push(format!(
                "protocol.kind must be \"full\", \"fixed\", or \"trending\", got \"{other}\""
            ));
            None
        }
    };

    let trend = match (raw.protocol.kind.as_str(), &raw.protocol.pi) {
        ("trending", Some(pi)) => {
            if pi.len() != h {
                errors.push(format!("protocol.pi has {} entries, expected {h}", pi.len()));
                None
            } else {
                match TrendDistribution::new(pi.clone()) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        errors.push(format!("protocol.pi: {e}"));
                        None
                    }
                }
            }
        }
        ("trending", None) => {
            errors.push("protocol.kind = \"trending\" requires protocol.pi".into());
            None
        }
        (_, Some(_)) => {
            errors.push("protocol.pi is only meaningful for the trending protocol".into());
            None
        }
        _ => None,
    };

    let hypotheses = match HypothesisSet::new(h, raw.hypotheses.true_index) {
        Ok(hs) => Some(hs),
        Err(e) => {
            errors.push(format!("hypotheses: {e}"));
            None
        }
    };

    if raw.agents.len() != k {
        errors.push(format!("{} agent model entries for {k} agents", raw.agents.len()));
    }
    let mut likelihoods = Vec::new();
    for (idx, agent) in raw.agents.iter().enumerate() {
        match agent.kind.as_str() {
            "gaussian" => match &agent.means {
                Some(means) => likelihoods.push(Likelihood::Gaussian { means: means.clone() }),
                None => errors.push(format!("agents[{idx}]: gaussian kind requires means")),
            },
            "finite" => match &agent.rows {
                Some(rows) => likelihoods.push(Likelihood::Finite { rows: rows.clone() }),
                None => errors.push(format!("agents[{idx}]: finite kind requires rows")),
            },
            other => errors.push(format!(
                "agents[{idx}]: kind must be \"gaussian\" or \"finite\", got \"{other}\""
            )),
        }
    }

    let initial_beliefs = match &raw.initial_beliefs {
        Some(init) => {
            if init.rows.len() != k {
                errors.push(format!(
                    "initial_beliefs has {} rows, expected {k}",
                    init.rows.len()
                ));
            }
            let mut beliefs = Vec::new();
            for (idx, row) in init.rows.iter().enumerate() {
                if row.len() != h {
                    errors.push(format!(
                        "initial_beliefs row {idx} has {} entries, expected {h}",
                        row.len()
                    ));
                    continue;
                }
                if row.iter().any(|&p| p <= 0.0) {
                    errors.push(format!(
                        "initial_beliefs row {idx} must be strictly positive at all hypotheses"
                    ));
                    continue;
                }
                match BeliefVector::from_probs(row) {
                    Ok(b) => beliefs.push(b),
                    Err(e) => errors.push(format!("initial_beliefs row {idx}: {e}")),
                }
            }
            beliefs
        }
        None => vec![BeliefVector::uniform(h.max(2)); k],
    };

    if !errors.is_empty() {
        return Err(Error::InvalidConfig(errors));
    }

    let hypotheses = hypotheses.unwrap();
    let topology = {
        let edges = raw
            .network
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect::<Vec<_>>();
        Topology::new(k, edges)?
    };
    let matrix = build_metropolis(&topology)?;
    let models = LikelihoodModel::new(likelihoods, &hypotheses)?;

    Ok(ExperimentConfig {
        topology,
        matrix,
        protocol: protocol.unwrap(),
        trend,
        hypotheses,
        models,
        initial_beliefs,
        horizon: raw.run.horizon,
        seed: raw.run.seed,
        num_runs: raw.run.num_runs.unwrap_or(1),
        stride: raw.run.stride,
    })
}
