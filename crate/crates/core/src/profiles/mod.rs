//! Multi-exit DNN profiles.
//!
//! A profile describes the main branch of a multi-exit network layer by layer
//! (output size in bits, compute in FLOP), the exit branches attached to it,
//! and a table of exit probabilities keyed by confidence criterion. From these
//! the module derives the forward-propagation probability of each layer and the
//! expected device/edge workload for every partition point.

mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{default_catalog_params, synth_profile, ProbabilityShape, SynthParams};

/// Tolerance for the per-row normalization of exit probabilities.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Output feature-map size, bits.
    pub output_size: f64,
    /// Main-branch compute of the layer, FLOP.
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitBranchSpec {
    /// 1-based layer index the branch is attached after.
    pub position: usize,
    /// Classifier-head compute, FLOP.
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub sigma: f64,
    /// One probability per exit branch, in branch order.
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Vec<f64>>,
}

/// Exit probabilities per confidence criterion. Lookup is exact-match on sigma.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExitProbabilityTable {
    pub rows: Vec<ProbabilityRow>,
}

impl ExitProbabilityTable {
    pub fn row(&self, sigma: f64) -> Option<&ProbabilityRow> {
        self.rows.iter().find(|r| r.sigma == sigma)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeDnnProfile {
    pub id: String,
    /// Raw input size in bits, transmitted when the whole model runs at the edge.
    pub input_size: f64,
    pub layers: Vec<LayerSpec>,
    pub branches: Vec<ExitBranchSpec>,
    pub probs: ExitProbabilityTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    NoLayers,
    LayerCompute,
    LayerOutput,
    InputSize,
    BranchPosition,
    BranchOrder,
    FinalExit,
    BranchCompute,
    EmptyTable,
    DuplicateSigma,
    ProbWidth,
    ProbNegative,
    ProbSum,
    AccuracyWidth,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::NoLayers => "no-layers",
            ViolationCode::LayerCompute => "layer-compute",
            ViolationCode::LayerOutput => "layer-output",
            ViolationCode::InputSize => "input-size",
            ViolationCode::BranchPosition => "branch-position",
            ViolationCode::BranchOrder => "branch-order",
            ViolationCode::FinalExit => "final-exit",
            ViolationCode::BranchCompute => "branch-compute",
            ViolationCode::EmptyTable => "empty-table",
            ViolationCode::DuplicateSigma => "duplicate-sigma",
            ViolationCode::ProbWidth => "prob-width",
            ViolationCode::ProbNegative => "prob-negative",
            ViolationCode::ProbSum => "prob-sum",
            ViolationCode::AccuracyWidth => "accuracy-width",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Violation {
            code,
            message: message.into(),
        }
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl MeDnnProfile {
    /// Number of main-branch layers, `g`.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.probs.sigmas()
    }

    /// Returns every violated structural invariant. An empty list means the
    /// profile is usable.
    pub fn validate(&self) -> Vec<Violation> {
        use ViolationCode::*;
        let mut out = Vec::new();
        let g = self.layers.len();
        if g == 0 {
            out.push(Violation::new(NoLayers, "profile has no layers"));
        }
        if !finite_nonneg(self.input_size) {
            out.push(Violation::new(
                InputSize,
                format!("input size {} is invalid", self.input_size),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !(layer.compute.is_finite() && layer.compute > 0.0) {
                out.push(Violation::new(
                    LayerCompute,
                    format!("layer {} compute {} must be positive", i + 1, layer.compute),
                ));
            }
            if !finite_nonneg(layer.output_size) {
                out.push(Violation::new(
                    LayerOutput,
                    format!(
                        "layer {} output size {} must be non-negative",
                        i + 1,
                        layer.output_size
                    ),
                ));
            }
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.position == 0 || b.position > g {
                out.push(Violation::new(
                    BranchPosition,
                    format!("branch {} at position {} outside 1..={}", i, b.position, g),
                ));
            }
            if !finite_nonneg(b.compute) {
                out.push(Violation::new(
                    BranchCompute,
                    format!("branch {} compute {} must be non-negative", i, b.compute),
                ));
            }
        }
        if self
            .branches
            .windows(2)
            .any(|w| w[0].position >= w[1].position)
        {
            out.push(Violation::new(
                BranchOrder,
                "branch positions must be strictly increasing",
            ));
        }
        if g > 0 && self.branches.last().map(|b| b.position) != Some(g) {
            out.push(Violation::new(
                FinalExit,
                format!("no exit branch at final layer {}", g),
            ));
        }

        let width = self.branches.len();
        if self.probs.rows.is_empty() {
            out.push(Violation::new(EmptyTable, "probability table has no rows"));
        }
        for (i, row) in self.probs.rows.iter().enumerate() {
            if self.probs.rows[..i].iter().any(|r| r.sigma == row.sigma) {
                out.push(Violation::new(
                    DuplicateSigma,
                    format!("sigma {} appears twice", row.sigma),
                ));
            }
            if row.probs.len() != width {
                out.push(Violation::new(
                    ProbWidth,
                    format!(
                        "sigma {}: {} probabilities for {} branches",
                        row.sigma,
                        row.probs.len(),
                        width
                    ),
                ));
            }
            if row.probs.iter().any(|p| !finite_nonneg(*p)) {
                out.push(Violation::new(
                    ProbNegative,
                    format!("sigma {}: negative probability", row.sigma),
                ));
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                out.push(Violation::new(
                    ProbSum,
                    format!("sigma {}: probabilities sum to {}", row.sigma, sum),
                ));
            }
            if let Some(acc) = &row.accuracy {
                if acc.len() != width {
                    out.push(Violation::new(
                        AccuracyWidth,
                        format!(
                            "sigma {}: {} accuracies for {} branches",
                            row.sigma,
                            acc.len(),
                            width
                        ),
                    ));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidProfile {
                id: self.id.clone(),
                violations,
            })
        }
    }

    /// Exit probabilities for `sigma`, one per branch.
    pub fn exit_probs(&self, sigma: f64) -> Result<&[f64]> {
        self.probs
            .row(sigma)
            .map(|r| r.probs.as_slice())
            .ok_or_else(|| Error::MissingSigma {
                sigma,
                available: self.sigmas(),
            })
    }

    /// Exit probability attached after each layer (0 where no branch), indexed by `k - 1`.
    fn exit_prob_by_layer(&self, sigma: f64) -> Result<Vec<f64>> {
        let probs = self.exit_probs(sigma)?;
        let mut by_layer = vec![0.0; self.layers.len()];
        for (b, p) in self.branches.iter().zip(probs) {
            by_layer[b.position - 1] = *p;
        }
        Ok(by_layer)
    }

    fn branch_compute_by_layer(&self) -> Vec<f64> {
        let mut by_layer = vec![0.0; self.layers.len()];
        for b in &self.branches {
            by_layer[b.position - 1] = b.compute;
        }
        by_layer
    }

    /// Probability that a task propagates into layer `k` (1-based).
    pub fn forward_prob(&self, sigma: f64, k: usize) -> Result<f64> {
        let g = self.layers.len();
        if k == 0 || k > g {
            return Err(Error::LayerOutOfRange {
                index: k,
                layers: g,
            });
        }
        let nu = self.exit_prob_by_layer(sigma)?;
        let exited: f64 = nu[..k - 1].iter().sum();
        Ok((1.0 - exited).clamp(0.0, 1.0))
    }

    /// Expected FLOP spent on the device for partition point `s`.
    pub fn device_flops(&self, sigma: f64, s: usize) -> Result<f64> {
        self.check_partition(s)?;
        Ok(self.workload(sigma)?.device[s])
    }

    /// Expected FLOP left for the edge for partition point `s`.
    pub fn edge_flops(&self, sigma: f64, s: usize) -> Result<f64> {
        self.check_partition(s)?;
        Ok(self.workload(sigma)?.edge[s])
    }

    pub(crate) fn check_partition(&self, s: usize) -> Result<()> {
        if s > self.layers.len() {
            return Err(Error::PartitionOutOfRange {
                point: s,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }

    /// Evaluates every per-partition quantity at once for a confidence criterion.
    pub fn workload(&self, sigma: f64) -> Result<Workload> {
        let g = self.layers.len();
        let nu = self.exit_prob_by_layer(sigma)?;
        let branch = self.branch_compute_by_layer();

        let mut forward = Vec::with_capacity(g);
        let mut exited: f64 = 0.0;
        for &p in nu.iter().take(g) {
            forward.push((1.0 - exited).clamp(0.0, 1.0));
            exited += p;
        }

        let term = |k: usize| forward[k] * self.layers[k].compute + nu[k] * branch[k];

        let mut device = vec![0.0; g + 1];
        for s in 1..=g {
            device[s] = device[s - 1] + term(s - 1);
        }
        let mut edge = vec![0.0; g + 1];
        for s in (0..g).rev() {
            edge[s] = edge[s + 1] + term(s);
        }

        let mut output = Vec::with_capacity(g + 1);
        output.push(self.input_size);
        output.extend(self.layers.iter().map(|l| l.output_size));

        Ok(Workload {
            layers: g,
            forward,
            device,
            edge,
            output,
        })
    }

    /// The model cut down to a single deterministic exit at `position`: layers
    /// after the branch are dropped and every task leaves through that branch.
    pub fn truncated_at_exit(&self, position: usize) -> Result<MeDnnProfile> {
        let branch = self
            .branches
            .iter()
            .find(|b| b.position == position)
            .ok_or_else(|| {
                Error::Domain(format!(
                    "profile `{}` has no exit at layer {}",
                    self.id, position
                ))
            })?;
        let rows = self
            .probs
            .rows
            .iter()
            .map(|r| ProbabilityRow {
                sigma: r.sigma,
                probs: vec![1.0],
                accuracy: None,
            })
            .collect();
        Ok(MeDnnProfile {
            id: format!("{}@{}", self.id, position),
            input_size: self.input_size,
            layers: self.layers[..position].to_vec(),
            branches: vec![branch.clone()],
            probs: ExitProbabilityTable { rows },
        })
    }

    /// The single-exit network: every task runs to the final exit.
    pub fn vanilla(&self) -> Result<MeDnnProfile> {
        self.truncated_at_exit(self.layers.len())
    }
}

/// Per-partition workload of a profile evaluated at one confidence criterion.
///
/// `device[s] + edge[s]` is the same sum for every `s`; both vectors have
/// `layers + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub layers: usize,
    /// `forward[k - 1]` is the probability of reaching layer `k`.
    pub forward: Vec<f64>,
    pub device: Vec<f64>,
    pub edge: Vec<f64>,
    /// `output[s]` is the data offloaded at partition `s`; `output[0]` is the raw input.
    pub output: Vec<f64>,
}

impl Workload {
    /// Probability a task is still alive after the device runs layers `1..=s`
    /// and their exits.
    pub fn survival(&self, s: usize) -> f64 {
        if s >= self.layers {
            0.0
        } else {
            self.forward[s]
        }
    }

    /// Forward probability of the partition layer itself, `1` for `s = 0`.
    pub fn forward_at_partition(&self, s: usize) -> f64 {
        if s == 0 {
            1.0
        } else {
            self.forward[s - 1]
        }
    }

    pub fn total(&self) -> f64 {
        self.device[self.layers]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCatalog {
    pub profiles: Vec<MeDnnProfile>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileDocument {
    Catalog(ProfileCatalog),
    Single(MeDnnProfile),
}

const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.json");

impl ProfileCatalog {
    pub fn new(profiles: Vec<MeDnnProfile>) -> Result<Self> {
        for p in &profiles {
            p.ensure_valid()?;
        }
        Ok(ProfileCatalog { profiles })
    }

    /// The four shipped illustrative profiles (giant, large, medium, small).
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_CATALOG, Path::new("<builtin catalog>"))
            .expect("builtin catalog is valid")
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let doc: ProfileDocument = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_path_buf(),
            source,
        })?;
        match doc {
            ProfileDocument::Catalog(c) => Self::new(c.profiles),
            ProfileDocument::Single(p) => Self::new(vec![p]),
        }
    }

    /// Loads either a `{"profiles": [...]}` catalog or a single profile document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn get(&self, id: &str) -> Result<&MeDnnProfile> {
        self.profiles
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const MFLOP: f64 = 1e6;
    pub const MBIT: f64 = 1e6;

    /// g = 3, exits after layers 1 and 3, nu(0.5) = (0.4, 0.6).
    pub fn toy() -> MeDnnProfile {
        MeDnnProfile {
            id: "toy".into(),
            input_size: 8.0 * MBIT,
            layers: vec![
                LayerSpec {
                    output_size: 4.0 * MBIT,
                    compute: 10.0 * MFLOP,
                },
                LayerSpec {
                    output_size: 2.0 * MBIT,
                    compute: 20.0 * MFLOP,
                },
                LayerSpec {
                    output_size: 0.01 * MBIT,
                    compute: 30.0 * MFLOP,
                },
            ],
            branches: vec![
                ExitBranchSpec {
                    position: 1,
                    compute: 2.0 * MFLOP,
                },
                ExitBranchSpec {
                    position: 3,
                    compute: 1.0 * MFLOP,
                },
            ],
            probs: ExitProbabilityTable {
                rows: vec![
                    ProbabilityRow {
                        sigma: 0.2,
                        probs: vec![0.1, 0.9],
                        accuracy: None,
                    },
                    ProbabilityRow {
                        sigma: 0.5,
                        probs: vec![0.4, 0.6],
                        accuracy: Some(vec![0.7, 0.9]),
                    },
                ],
            },
        }
    }
}
