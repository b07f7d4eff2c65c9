//! Independent verifiers for the auction's claims.
//!
//! Everything here recomputes a quantity by a different route than the
//! mechanism (exhaustive enumeration, recomputation on reduced markets,
//! Monte Carlo against closed forms) and reports disagreements as data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{
    consensus_estimate, delta, optimal_y, roso, run_auction, AuctionOutcome, AuctionParams, Delta,
    Demand, LATENCY_TOLERANCE,
};
use crate::demand::{Bid, DemandOutcome, DemandRequest, UserId};
use crate::error::{Error, Result};
use crate::latency::{DeviceLink, TransmissionMode};
use crate::profiles::{synth_profile, MeDnnProfile, ProbabilityShape, SynthParams};

/// Largest market the exhaustive price search accepts by default.
pub const DEFAULT_ORACLE_CAP: usize = 12;

/// Best flat price by trying every density at or above the reserve. At each
/// candidate price the affordable users are served in density order under
/// the same strict capacity rule as the auction.
pub fn brute_force_single_price(
    demands: &[Demand],
    edge_capacity: f64,
    reserve: f64,
    cap: usize,
) -> Result<(Option<f64>, f64)> {
    if demands.len() > cap {
        return Err(Error::OracleCapExceeded {
            cap,
            got: demands.len(),
        });
    }
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| crate::auction::density_order(demands, a, b));
    let mut best = (None, 0.0);
    for &j in &order {
        let price = demands[j].density();
        if price < reserve {
            continue;
        }
        let mut remaining = edge_capacity;
        let mut volume = 0.0;
        for &i in &order {
            if demands[i].density() < price {
                break;
            }
            if remaining - demands[i].request > 0.0 {
                remaining -= demands[i].request;
                volume += demands[i].request;
            }
        }
        let revenue = price * volume;
        if revenue > best.1 {
            best = (Some(price), revenue);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    pub user_id: UserId,
    /// Omniscient revenue without this user.
    pub reduced_revenue: f64,
    pub estimate: Option<f64>,
    pub matches: bool,
    /// Revenue without the user is at least `(volume - largest) / volume` of the full revenue.
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    /// False when the stopping criterion fails and nothing was checked.
    pub applicable: bool,
    pub target: Option<f64>,
    pub entries: Vec<ConsensusEntry>,
}

impl ConsensusReport {
    pub fn estimate_violations(&self) -> usize {
        self.entries.iter().filter(|e| !e.matches).count()
    }

    pub fn bound_violations(&self) -> usize {
        self.entries.iter().filter(|e| !e.bound_holds).count()
    }
}

/// Recomputes the omniscient revenue with each user removed and checks that
/// the estimate does not move, given the same `(y, eps)`.
pub fn check_consensus(
    demands: &[Demand],
    edge_capacity: f64,
    reserve: f64,
    y: f64,
    eps: f64,
) -> Result<ConsensusReport> {
    let full = roso(demands, edge_capacity, reserve);
    let not_applicable = ConsensusReport {
        applicable: false,
        target: None,
        entries: Vec::new(),
    };
    let d = match full.admitted.is_empty() {
        true => return Ok(not_applicable),
        false => match delta(&full)? {
            Delta::Finite(d) => d,
            Delta::Unbounded => return Ok(not_applicable),
        },
    };
    let target = consensus_estimate(full.upper_revenue, y, eps)?;
    if target > full.upper_revenue / d {
        return Ok(ConsensusReport {
            applicable: false,
            target: Some(target),
            entries: Vec::new(),
        });
    }
    let floor =
        full.upper_revenue * (full.admitted_volume - full.max_request) / full.admitted_volume;
    let slack = 1e-9 * full.upper_revenue.max(1.0);
    let mut entries = Vec::with_capacity(demands.len());
    for i in 0..demands.len() {
        let rest: Vec<Demand> = demands
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, d)| *d)
            .collect();
        let reduced = roso(&rest, edge_capacity, reserve).upper_revenue;
        let estimate = (reduced > 0.0)
            .then(|| consensus_estimate(reduced, y, eps))
            .transpose()?;
        entries.push(ConsensusEntry {
            user_id: demands[i].user_id,
            reduced_revenue: reduced,
            estimate,
            matches: estimate.is_some_and(|e| (e - target).abs() <= 1e-9 * target),
            bound_holds: reduced >= floor - slack,
        });
    }
    Ok(ConsensusReport {
        applicable: true,
        target: Some(target),
        entries,
    })
}

/// CDF of `value * y^(u - 1)` with `u` uniform on `[0, 1]`.
pub fn estimate_cdf(v: f64, value: f64, y: f64) -> f64 {
    if v <= value / y {
        0.0
    } else if v >= value {
        1.0
    } else {
        (v / value).ln() / y.ln() + 1.0
    }
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Rounds the exponent up instead of down; kept as a negative control.
pub fn ceiling_estimate(value: f64, y: f64, eps: f64) -> f64 {
    y.powf((value.ln() / y.ln() - eps).ceil() + eps)
}

pub fn check_distribution_with<R: Rng + ?Sized>(
    value: f64,
    y: f64,
    draws: usize,
    rng: &mut R,
    estimator: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut samples: Vec<f64> = (0..draws)
        .map(|_| estimator(value, y, rng.random()))
        .collect();
    ks_statistic(&mut samples, |v| estimate_cdf(v, value, y))
}

/// KS distance of the estimate's empirical law from its closed form.
pub fn check_distribution<R: Rng + ?Sized>(
    value: f64,
    y: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    consensus_estimate(value, y, 0.0)?;
    Ok(check_distribution_with(value, y, draws, rng, |v, y, e| {
        consensus_estimate(v, y, e).expect("validated inputs")
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub y: f64,
    /// Monte Carlo mean of the estimate over the revenue.
    pub mean_ratio: f64,
    pub std_error: f64,
    pub bound: f64,
}

impl ExpectationReport {
    pub fn meets(&self, factor: f64) -> bool {
        self.mean_ratio >= self.bound * factor
    }
}

/// Unconditioned mean of the estimate against `(1/ln y)(1/delta - 1/y)`.
pub fn check_expectation<R: Rng + ?Sized>(
    value: f64,
    delta: f64,
    draws: usize,
    rng: &mut R,
) -> Result<ExpectationReport> {
    let y = optimal_y(delta)?;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let r = consensus_estimate(value, y, rng.random())? / value;
        sum += r;
        sq += r * r;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    Ok(ExpectationReport {
        y,
        mean_ratio: mean,
        std_error: (var / n).sqrt(),
        bound: crate::auction::competitive_bound(delta, y),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeViolation {
    pub code: &'static str,
    pub user_id: Option<UserId>,
    pub message: String,
}

/// Every constraint the outcome should satisfy, checked from scratch.
pub fn check_outcome(
    outcome: &AuctionOutcome,
    demands: &[Demand],
    edge_capacity: f64,
    rental_price: f64,
    gamma: f64,
) -> Vec<OutcomeViolation> {
    let mut v = Vec::new();
    let mut flag = |code: &'static str, user_id: Option<UserId>, message: String| {
        v.push(OutcomeViolation {
            code,
            user_id,
            message,
        })
    };
    if outcome.allocations.len() != demands.len() {
        flag(
            "decision-range",
            None,
            format!(
                "{} allocations for {} demands",
                outcome.allocations.len(),
                demands.len()
            ),
        );
        return v;
    }
    let by_id = |id: UserId| demands.iter().position(|d| d.user_id == id);

    let total: f64 = outcome.allocations.iter().map(|a| a.allocation).sum();
    if total > edge_capacity {
        flag(
            "capacity",
            None,
            format!("allocated {total} of {edge_capacity}"),
        );
    }

    match outcome.price {
        None => {
            if outcome.revenue != 0.0 || !outcome.winners.is_empty() {
                flag(
                    "revenue-identity",
                    None,
                    "no-trade outcome with revenue or winners".into(),
                );
            }
        }
        Some(p) => {
            let floor = rental_price * (1.0 + gamma);
            if outcome.revenue < floor * (1.0 - 1e-12) {
                flag(
                    "profit-floor",
                    None,
                    format!("revenue {} below floor {floor}", outcome.revenue),
                );
            }
            let paid: f64 = outcome.allocations.iter().map(|a| a.payment).sum();
            if (paid - outcome.revenue).abs() > 1e-9 * outcome.revenue.abs().max(f64::MIN_POSITIVE)
            {
                flag(
                    "revenue-identity",
                    None,
                    format!("payments {paid} vs revenue {}", outcome.revenue),
                );
            }
            if let Some(t) = outcome.target_revenue {
                if outcome.revenue != t {
                    flag(
                        "revenue-identity",
                        None,
                        format!("revenue {} vs target {t}", outcome.revenue),
                    );
                }
            }
            for id in &outcome.removed {
                if let Some(i) = by_id(*id) {
                    if demands[i].density() >= p {
                        flag(
                            "envy-removed",
                            Some(*id),
                            format!("removed with density {} >= price {p}", demands[i].density()),
                        );
                    }
                }
            }
        }
    }

    for (a, d) in outcome.allocations.iter().zip(demands) {
        if a.user_id != d.user_id {
            flag(
                "decision-range",
                Some(d.user_id),
                "allocation order differs from demand order".into(),
            );
            continue;
        }
        let won = outcome.winners.contains(&d.user_id);
        if a.payment > d.budget * (1.0 + 1e-12) || a.payment < 0.0 {
            flag(
                "budget-balance",
                Some(d.user_id),
                format!("pays {} with budget {}", a.payment, d.budget),
            );
        }
        if !won {
            if a.allocation != 0.0 || a.partition.is_some() || a.payment != 0.0 {
                flag(
                    "allocation",
                    Some(d.user_id),
                    "loser holds resources or pays".into(),
                );
            }
            continue;
        }
        let Some(p) = outcome.price else { continue };
        if a.allocation != d.request || a.partition != Some(d.partition) {
            flag(
                "allocation",
                Some(d.user_id),
                format!(
                    "got {} at {:?}, asked {} at {}",
                    a.allocation, a.partition, d.request, d.partition
                ),
            );
        }
        if a.partition.is_some_and(|s| s > d.max_partition) {
            flag(
                "decision-range",
                Some(d.user_id),
                format!("partition {:?} beyond {}", a.partition, d.max_partition),
            );
        }
        if a.allocation > 0.0
            && ((a.payment / a.allocation) - p).abs() > 1e-12 * p.max(f64::MIN_POSITIVE)
        {
            flag(
                "flat-price",
                Some(d.user_id),
                format!("unit payment {} vs price {p}", a.payment / a.allocation),
            );
        }
        if d.density() < p * (1.0 - 1e-12) {
            flag(
                "envy-winner",
                Some(d.user_id),
                format!("density {} below price {p}", d.density()),
            );
        }
        match d.latency_at(a.allocation) {
            Ok(t) if t <= d.latency_req * (1.0 + LATENCY_TOLERANCE) => {}
            Ok(t) => flag(
                "latency",
                Some(d.user_id),
                format!("latency {t} over {}", d.latency_req),
            ),
            Err(e) => flag("latency", Some(d.user_id), e.to_string()),
        }
    }
    v
}

/// Demand analysis by direct per-partition evaluation of the profile, without
/// the precomputed workload tables.
pub fn enumerate_demand(
    bid: &Bid,
    profile: &MeDnnProfile,
    link: &DeviceLink,
    edge_capacity: f64,
    mode: TransmissionMode,
) -> Result<DemandOutcome> {
    let g = profile.layer_count();
    let mut candidates = Vec::new();
    for s in 0..=g {
        let t_dev = profile.device_flops(bid.sigma, s)? / link.device_flops;
        let t_net = if s == g {
            0.0
        } else {
            let weight = match mode {
                TransmissionMode::Survival => profile.forward_prob(bid.sigma, s + 1)?,
                TransmissionMode::PartitionForward if s == 0 => 1.0,
                TransmissionMode::PartitionForward => profile.forward_prob(bid.sigma, s)?,
            };
            let size = if s == 0 {
                profile.input_size
            } else {
                profile.layers[s - 1].output_size
            };
            weight * (link.prop_delay + size / link.data_rate)
        };
        let slack = bid.latency_req - t_dev - t_net;
        if slack > 0.0 {
            let edge = profile.edge_flops(bid.sigma, s)?;
            let a = edge / slack;
            if a < edge_capacity {
                candidates.push((s, a, edge, t_dev + t_net));
            }
        }
    }
    let best = candidates
        .iter()
        .copied()
        .reduce(|b, c| if c.1 <= b.1 { c } else { b });
    Ok(match best {
        None => DemandOutcome::Infeasible,
        Some((s, a, _, _)) if a == 0.0 => DemandOutcome::LocalOnly { partition: s },
        Some((partition, request, edge_work, local_latency)) => {
            DemandOutcome::Request(DemandRequest {
                partition,
                request,
                density: bid.budget / request,
                edge_work,
                local_latency,
            })
        }
    })
}

/// Random unit-free auction instance. With `all_fit` the capacity exceeds
/// the total request.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    max_users: usize,
    all_fit: bool,
) -> (Vec<Demand>, f64, f64) {
    let n = rng.random_range(1..=max_users);
    let demands: Vec<Demand> = (0..n)
        .map(|i| {
            Demand::simple(
                i as UserId,
                rng.random_range(0.5..20.0),
                rng.random_range(0.5..5.0),
            )
        })
        .collect();
    let total: f64 = demands.iter().map(|d| d.request).sum();
    let capacity = if all_fit {
        total * rng.random_range(1.05..2.0)
    } else {
        total * rng.random_range(0.3..1.1)
    };
    let reserve = rng.random_range(0.0..1.0);
    (demands, capacity, reserve)
}

/// Random small multi-exit profile for demand-analysis checks.
pub fn random_profile<R: Rng + ?Sized>(rng: &mut R) -> MeDnnProfile {
    let g = rng.random_range(1..=8);
    let mut exits: Vec<usize> = (1..g).filter(|_| rng.random_bool(0.4)).collect();
    exits.push(g);
    synth_profile(&SynthParams {
        id: "random".into(),
        layer_count: g,
        main_compute: rng.random_range(1e7..1e10),
        exit_positions: exits,
        branch_fraction: rng.random_range(0.0..0.2),
        sigma_grid: vec![0.1, 0.3, 0.5],
        shape: ProbabilityShape::Confidence {
            shallow_min: rng.random_range(0.0..0.3),
            shallow_max: rng.random_range(0.3..0.7),
            decay: rng.random_range(0.2..0.9),
        },
        input_size: rng.random_range(1e3..1e7),
        first_output: rng.random_range(1e3..1e7),
        last_output: rng.random_range(1e2..1e5),
        jitter: 0.2,
        seed: rng.random(),
    })
    .expect("random parameters are consistent")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sizes for the verification sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub instances: usize,
    pub draws: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            instances: 1_000,
            draws: 100_000,
        }
    }
}

/// The oracle suite behind `aeria verify`.
pub fn verify(seed: u64, cfg: VerifyConfig) -> Result<VerifyReport> {
    use crate::simulator::streams::stream;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        })
    };

    let mut rng = stream(seed, 64, 0);
    let mut mismatches = 0;
    for _ in 0..cfg.instances {
        let fit = rng.random_bool(0.5);
        let (d, f_e, p_res) = random_instance(&mut rng, DEFAULT_ORACLE_CAP, fit);
        let (_, brute) = brute_force_single_price(&d, f_e, p_res, DEFAULT_ORACLE_CAP)?;
        if roso(&d, f_e, p_res).upper_revenue != brute {
            mismatches += 1;
        }
    }
    push(
        "roso-brute-force",
        mismatches == 0,
        format!("{mismatches} of {} instances differ", cfg.instances),
    );

    let mut rng = stream(seed, 65, 0);
    let (mut checked, mut est_bad, mut bound_bad) = (0, 0, 0);
    while checked < cfg.instances {
        let (d, f_e, p_res) = random_instance(&mut rng, 10, true);
        let r = roso(&d, f_e, p_res);
        let Ok(Delta::Finite(dl)) = delta(&r) else {
            continue;
        };
        let y = optimal_y(dl)?;
        let c = crate::auction::centre(&r, crate::auction::DEFAULT_ITERATION_CAP, &mut rng)?;
        let rep = check_consensus(&d, f_e, p_res, y, c.epsilon)?;
        if rep.applicable {
            checked += 1;
            est_bad += rep.estimate_violations();
            bound_bad += rep.bound_violations();
        }
    }
    push(
        "consensus",
        est_bad == 0,
        format!("{est_bad} estimate changes over {checked} instances"),
    );
    push(
        "removal-bound",
        bound_bad == 0,
        format!("{bound_bad} bound violations over {checked} instances"),
    );

    let mut rng = stream(seed, 66, 0);
    for (value, y) in [(100.0, 4.0), (18.9, 4.51)] {
        let ks = check_distribution(value, y, cfg.draws, &mut rng)?;
        push(
            &format!("distribution({value},{y})"),
            ks < 0.01,
            format!("KS {ks:.5}"),
        );
    }

    let mut rng = stream(seed, 67, 0);
    for dl in [1.8, 2.0] {
        let e = check_expectation(1.0, dl, cfg.draws, &mut rng)?;
        let identity = (e.bound - 1.0 / e.y).abs() < 1e-8;
        push(
            &format!("expectation(delta={dl})"),
            e.meets(0.99) && identity,
            format!("mean {:.5} vs bound {:.5}", e.mean_ratio, e.bound),
        );
    }

    let mut rng = stream(seed, 68, 0);
    let mut bad = 0;
    for _ in 0..cfg.instances {
        let fit = rng.random_bool(0.5);
        let (d, f_e, _) = random_instance(&mut rng, 30, fit);
        let params =
            AuctionParams::new(f_e, rng.random_range(0.0..5.0), rng.random_range(0.0..1.0));
        let run = run_auction(&d, &params, &mut rng)?;
        if !check_outcome(&run.outcome, &d, f_e, params.rental_price, params.gamma).is_empty() {
            bad += 1;
        }
    }
    push(
        "outcome-constraints",
        bad == 0,
        format!("{bad} of {} outcomes violate a constraint", cfg.instances),
    );

    let mut rng = stream(seed, 69, 0);
    let mut bad = 0;
    for _ in 0..cfg.instances {
        let profile = random_profile(&mut rng);
        let (bid, link, f_e) = random_bid(&mut rng, &profile);
        let fast = crate::demand::analyze(&bid, &profile, &link, f_e, TransmissionMode::Survival)?;
        let slow = enumerate_demand(&bid, &profile, &link, f_e, TransmissionMode::Survival)?;
        if !same_demand(&fast, &slow) {
            bad += 1;
        }
    }
    push(
        "demand-enumeration",
        bad == 0,
        format!("{bad} of {} users differ", cfg.instances),
    );

    Ok(VerifyReport { seed, checks })
}

/// Random bid against `profile` with a deadline that often binds.
pub fn random_bid<R: Rng + ?Sized>(rng: &mut R, profile: &MeDnnProfile) -> (Bid, DeviceLink, f64) {
    let sigmas = profile.sigmas();
    let sigma = sigmas[rng.random_range(0..sigmas.len())];
    let link = DeviceLink::new(
        rng.random_range(1e8..1e10),
        rng.random_range(0.0..0.01),
        rng.random_range(1e6..1e8),
    )
    .expect("positive link");
    let local = profile
        .device_flops(sigma, profile.layer_count())
        .expect("valid sigma")
        / link.device_flops;
    let bid = Bid {
        user_id: rng.random(),
        budget: rng.random_range(0.001..0.1),
        latency_req: local * rng.random_range(0.01..1.5),
        sigma,
        model_id: profile.id.clone(),
    };
    (bid, link, rng.random_range(1e9..1e13))
}

/// Same partition and request within rounding of the two evaluation routes.
pub fn same_demand(a: &DemandOutcome, b: &DemandOutcome) -> bool {
    match (a, b) {
        (DemandOutcome::Request(x), DemandOutcome::Request(y)) => {
            x.partition == y.partition && (x.request - y.request).abs() <= 1e-9 * x.request
        }
        _ => a == b,
    }
}
