//! Deterministic synthetic profile generator.
//!
//! Main-branch compute is split equally across the segments between
//! consecutive exits, and equally across the layers inside a segment. The
//! default catalog parameters are illustrative configuration, not measurements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExitBranchSpec, ExitProbabilityTable, LayerSpec, MeDnnProfile, ProbabilityRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProbabilityShape {
    /// Every branch gets `1 / |branches|`.
    Uniform,
    /// The shallowest exit takes `shallow_min` at the strictest sigma and
    /// `shallow_max` at the loosest; each later early exit takes `decay` times
    /// the previous one; the final exit takes the remainder.
    Confidence {
        shallow_min: f64,
        shallow_max: f64,
        decay: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub id: String,
    pub layer_count: usize,
    /// Total main-branch compute, FLOP.
    pub main_compute: f64,
    /// 1-based exit positions; the last one must equal `layer_count`.
    pub exit_positions: Vec<usize>,
    /// Exit-head compute as a fraction of its segment's main-branch compute.
    pub branch_fraction: f64,
    pub sigma_grid: Vec<f64>,
    pub shape: ProbabilityShape,
    pub input_size: f64,
    /// Output size of the first layer, bits. Later layers interpolate
    /// geometrically to `last_output`.
    pub first_output: f64,
    pub last_output: f64,
    /// Relative jitter applied to output sizes and early-exit probabilities.
    #[serde(default)]
    pub jitter: f64,
    pub seed: u64,
}

pub fn synth_profile(params: &SynthParams) -> Result<MeDnnProfile> {
    let g = params.layer_count;
    let exits = &params.exit_positions;
    if g == 0 {
        return Err(Error::Domain("layer count must be positive".into()));
    }
    if exits.is_empty() || exits.windows(2).any(|w| w[0] >= w[1]) || exits[0] == 0 {
        return Err(Error::Domain(
            "exit positions must be strictly increasing and positive".into(),
        ));
    }
    if *exits.last().unwrap() != g {
        return Err(Error::Domain(format!("last exit must sit at layer {g}")));
    }
    if params.sigma_grid.is_empty() {
        return Err(Error::Domain("sigma grid is empty".into()));
    }
    if !(params.main_compute > 0.0)
        || !(0.0..=1.0).contains(&params.jitter)
        || params.branch_fraction < 0.0
    {
        return Err(Error::Domain(
            "compute must be positive, jitter and branch fraction in range".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let jitter = |rng: &mut ChaCha8Rng| {
        if params.jitter > 0.0 {
            1.0 + rng.random_range(-params.jitter..=params.jitter)
        } else {
            1.0
        }
    };

    let segment_compute = params.main_compute / exits.len() as f64;
    let mut layers = Vec::with_capacity(g);
    let mut start = 0;
    for &end in exits {
        let per_layer = segment_compute / (end - start) as f64;
        for k in start..end {
            let frac = if g == 1 {
                0.0
            } else {
                k as f64 / (g - 1) as f64
            };
            let base = params.first_output * (params.last_output / params.first_output).powf(frac);
            layers.push(LayerSpec {
                output_size: base * jitter(&mut rng),
                compute: per_layer,
            });
        }
        start = end;
    }
    let branches = exits
        .iter()
        .map(|&position| ExitBranchSpec {
            position,
            compute: segment_compute * params.branch_fraction,
        })
        .collect();

    let mut grid = params.sigma_grid.clone();
    grid.sort_by(f64::total_cmp);
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let m = exits.len();
    let rows = grid
        .iter()
        .map(|&sigma| {
            let probs = match &params.shape {
                ProbabilityShape::Uniform => vec![1.0 / m as f64; m],
                ProbabilityShape::Confidence {
                    shallow_min,
                    shallow_max,
                    decay,
                } => {
                    let t = if hi > lo {
                        (sigma - lo) / (hi - lo)
                    } else {
                        0.0
                    };
                    let mut p = shallow_min + t * (shallow_max - shallow_min);
                    let mut early = Vec::with_capacity(m);
                    for _ in 0..m - 1 {
                        early.push(p * jitter(&mut rng));
                        p *= decay;
                    }
                    let mass: f64 = early.iter().sum();
                    if mass > 1.0 {
                        early.iter_mut().for_each(|e| *e /= mass);
                    }
                    let rest = 1.0 - early.iter().sum::<f64>();
                    early.push(rest.max(0.0));
                    early
                }
            };
            ProbabilityRow {
                sigma,
                probs,
                accuracy: None,
            }
        })
        .collect();

    let profile = MeDnnProfile {
        id: params.id.clone(),
        input_size: params.input_size,
        layers,
        branches,
        probs: ExitProbabilityTable { rows },
    };
    profile.ensure_valid()?;
    Ok(profile)
}

/// Parameters for the four shipped profiles. FLOP totals and sizes are
/// plausible orders of magnitude for each scale and carry no other authority.
pub fn default_catalog_params() -> Vec<SynthParams> {
    let sigma_grid = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    let spec =
        |id: &str, g, compute, exits: &[usize], input, first, last, shallow: (f64, f64), seed| {
            SynthParams {
                id: id.to_string(),
                layer_count: g,
                main_compute: compute,
                exit_positions: exits.to_vec(),
                branch_fraction: 0.05,
                sigma_grid: sigma_grid.clone(),
                shape: ProbabilityShape::Confidence {
                    shallow_min: shallow.0,
                    shallow_max: shallow.1,
                    decay: 0.5,
                },
                input_size: input,
                first_output: first,
                last_output: last,
                jitter: 0.1,
                seed,
            }
        };
    vec![
        // transformer encoder/decoder stack on short sentences
        spec(
            "giant",
            12,
            60e9,
            &[3, 6, 9, 12],
            2.0e3,
            2.1e6,
            2.1e6,
            (0.18, 0.48),
            1,
        ),
        // residual network on 224x224 RGB images
        spec(
            "large",
            16,
            7.3e9,
            &[4, 8, 12, 16],
            1.2e6,
            6.4e6,
            3.2e4,
            (0.10, 0.40),
            2,
        ),
        // VGG-style network on 32x32 images
        spec(
            "medium",
            16,
            0.63e9,
            &[4, 8, 12, 16],
            2.46e4,
            2.1e6,
            3.2e3,
            (0.20, 0.55),
            3,
        ),
        // AlexNet-style network on 32x32 images
        spec(
            "small",
            8,
            0.13e9,
            &[2, 4, 6, 8],
            2.46e4,
            1.0e6,
            3.2e2,
            (0.30, 0.60),
            4,
        ),
    ]
}
