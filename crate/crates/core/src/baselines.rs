//! Comparison mechanisms.
//!
//! These are approximations reconstructed from short descriptions of the
//! original systems, not reimplementations. Each returns an outcome in the
//! same shape as the main auction so the simulator can compare them slot by
//! slot. None of them applies the provider's profit-floor gate; the flag is
//! still evaluated and reported.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{
    real, reserve_price, roso, run_auction, AuctionOutcome, AuctionParams, CentreResult, Demand,
    PricingPath,
};
use crate::demand::{analyze_workload, Bidder, DemandOutcome};
use crate::error::Result;
use crate::latency::{device_latency, network_latency_with, TransmissionMode};
use crate::profiles::{MeDnnProfile, ProfileCatalog, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    FixedProfitRate { rate: f64 },
    IaoLike,
    EdgentLike,
    Amr2Like,
}

/// A mechanism's outcome together with the demands it was priced on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRun {
    pub outcome: AuctionOutcome,
    pub demands: Vec<Demand>,
    pub centre: Option<CentreResult>,
    /// Omniscient single-price revenue over `demands`, when computed.
    pub upper_revenue: Option<f64>,
}

pub fn run_baseline<R: Rng + ?Sized>(
    kind: BaselineKind,
    bidders: &[Bidder],
    catalog: &ProfileCatalog,
    params: &AuctionParams,
    mode: TransmissionMode,
    rng: &mut R,
) -> Result<MechanismRun> {
    match kind {
        BaselineKind::FixedProfitRate { rate } => {
            let demands = aeria_demands(bidders, catalog, params.edge_capacity, mode)?;
            let outcome = fixed_profit_rate(&demands, params, rate)?;
            Ok(MechanismRun {
                outcome,
                demands,
                centre: None,
                upper_revenue: None,
            })
        }
        BaselineKind::IaoLike => iao_like(bidders, catalog, params, mode, rng),
        BaselineKind::EdgentLike => edgent_like(bidders, catalog, params, mode, rng),
        BaselineKind::Amr2Like => amr2_like(bidders, catalog, params, mode),
    }
}

/// Demands under the probabilistic multi-exit model, in bidder order.
pub fn aeria_demands(
    bidders: &[Bidder],
    catalog: &ProfileCatalog,
    edge_capacity: f64,
    mode: TransmissionMode,
) -> Result<Vec<Demand>> {
    let mut out = Vec::new();
    for b in bidders {
        if let (_, Some(d)) = b.demand(catalog.get(&b.bid.model_id)?, edge_capacity, mode)? {
            out.push(d);
        }
    }
    Ok(out)
}

/// Extract a revenue target of `(1 + rate) * p_r` by cost sharing over the
/// omniscient admitted set.
pub fn fixed_profit_rate(
    demands: &[Demand],
    params: &AuctionParams,
    rate: f64,
) -> Result<AuctionOutcome> {
    let target = (1.0 + rate) * params.rental_price;
    let reserve = reserve_price(params.rental_price, rate, params.edge_capacity)?;
    let r = roso(demands, params.edge_capacity, reserve);
    let mut out = real(target, &r, demands);
    if r.admitted.is_empty() {
        out.path = PricingPath::Empty;
    }
    out.evaluate(demands, params.edge_capacity, params.profit_floor());
    Ok(out)
}

/// Deterministic-exit truncations, deepest first.
fn exit_models(profile: &MeDnnProfile) -> Result<Vec<MeDnnProfile>> {
    profile
        .branches
        .iter()
        .rev()
        .map(|b| profile.truncated_at_exit(b.position))
        .collect()
}

/// Exit options for one bidder, deepest first, skipping infeasible exits.
/// `None` entries run locally. Empty when the user never needs the edge.
fn exit_options(
    bidder: &Bidder,
    profile: &MeDnnProfile,
    f_e: f64,
    mode: TransmissionMode,
) -> Result<Vec<Option<Demand>>> {
    let mut options = Vec::new();
    for model in exit_models(profile)? {
        let (out, demand) = bidder.demand(&model, f_e, mode)?;
        match out {
            DemandOutcome::Infeasible => {}
            DemandOutcome::LocalOnly { .. } if options.is_empty() => return Ok(options),
            _ => options.push(demand),
        }
    }
    Ok(options)
}

/// Prune every user to a deterministic exit so the whole market fits, then
/// sell to everyone at the lowest density.
pub fn amr2_like(
    bidders: &[Bidder],
    catalog: &ProfileCatalog,
    params: &AuctionParams,
    mode: TransmissionMode,
) -> Result<MechanismRun> {
    let f_e = params.edge_capacity;
    let mut options = Vec::new();
    for b in bidders {
        let o = exit_options(b, catalog.get(&b.bid.model_id)?, f_e, mode)?;
        if let Some(Some(_)) = o.first() {
            options.push(o);
        }
    }
    let deepest: f64 = options.iter().filter_map(|o| o[0].map(|d| d.request)).sum();
    let demands: Vec<Demand> = if deepest < f_e {
        options.iter().filter_map(|o| o[0]).collect()
    } else {
        // a local option ends the search: the pruned model runs on the device
        let share = f_e / options.len() as f64;
        options
            .iter()
            .filter_map(|o| {
                o.iter()
                    .find(|d| d.is_none_or(|d| d.request < share))
                    .copied()
                    .flatten()
            })
            .collect()
    };

    let mut outcome = match demands.iter().map(Demand::density).min_by(f64::total_cmp) {
        None => AuctionOutcome::settle(&demands, None, 0.0, &[], PricingPath::Empty),
        Some(price) => {
            let all: Vec<usize> = (0..demands.len()).collect();
            let volume: f64 = demands.iter().map(|d| d.request).sum();
            AuctionOutcome::settle(
                &demands,
                Some(price),
                price * volume,
                &all,
                PricingPath::LowestDensity,
            )
        }
    };
    outcome.evaluate(&demands, f_e, params.profit_floor());
    Ok(MechanismRun {
        outcome,
        demands,
        centre: None,
        upper_revenue: None,
    })
}

/// Per-partition local latency and edge work of one vanilla-model user.
struct LevelCurve {
    local: Vec<f64>,
    edge: Vec<f64>,
}

impl LevelCurve {
    fn new(work: &Workload, bidder: &Bidder, mode: TransmissionMode) -> Self {
        let local = (0..=work.layers)
            .map(|s| {
                device_latency(work.device[s], &bidder.link)
                    + network_latency_with(work, s, &bidder.link, mode)
            })
            .collect();
        LevelCurve {
            local,
            edge: work.edge.clone(),
        }
    }

    /// Cheapest (partition, allocation) reaching total latency `level`.
    fn need(&self, level: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for s in 0..self.local.len() {
            let a = if self.edge[s] == 0.0 {
                if self.local[s] <= level {
                    0.0
                } else {
                    continue;
                }
            } else if self.local[s] < level {
                self.edge[s] / (level - self.local[s])
            } else {
                continue;
            };
            if best.is_none_or(|(_, b)| a <= b) {
                best = Some((s, a));
            }
        }
        best
    }
}

/// Lowest common latency level whose total need fits `cap`.
fn water_level(curves: &[&LevelCurve], start: f64, cap: f64) -> f64 {
    let total = |level: f64| -> f64 {
        curves
            .iter()
            .map(|c| c.need(level).map_or(f64::INFINITY, |(_, a)| a))
            .sum()
    };
    let mut hi = start;
    let mut guard = 0;
    while total(hi) > cap && guard < 200 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Vanilla-model partitioning with max-latency-first allocation, which
/// levels every served user at one latency. When the level misses some
/// deadline the tightest such user is dropped and the rest re-leveled. The
/// resulting allocations are then priced by the main auction.
pub fn iao_like<R: Rng + ?Sized>(
    bidders: &[Bidder],
    catalog: &ProfileCatalog,
    params: &AuctionParams,
    mode: TransmissionMode,
    rng: &mut R,
) -> Result<MechanismRun> {
    let f_e = params.edge_capacity;
    let cap = f_e * (1.0 - 1e-9);
    let mut users = Vec::new();
    for b in bidders {
        let vanilla = catalog.get(&b.bid.model_id)?.vanilla()?;
        let work = vanilla.workload(b.bid.sigma)?;
        if let DemandOutcome::Request(_) = analyze_workload(&b.bid, &work, &b.link, f_e, mode) {
            users.push((b, LevelCurve::new(&work, b, mode), vanilla.layer_count()));
        }
    }
    let (level, active) = iao_level(&users, cap);
    let mut demands = Vec::new();
    for &i in &active {
        let (b, curve, g) = &users[i];
        if let Some((s, a)) = curve.need(level).filter(|&(_, a)| a > 0.0) {
            demands.push(Demand {
                user_id: b.bid.user_id,
                budget: b.bid.budget,
                request: a,
                partition: s,
                max_partition: *g,
                edge_work: curve.edge[s],
                local_latency: curve.local[s],
                latency_req: b.bid.latency_req,
            });
        }
    }
    let run = run_auction(&demands, params, rng)?;
    Ok(MechanismRun {
        outcome: run.outcome,
        demands,
        centre: run.centre,
        upper_revenue: Some(run.roso.upper_revenue),
    })
}

fn iao_level(users: &[(&Bidder, LevelCurve, usize)], cap: f64) -> (f64, Vec<usize>) {
    let mut active: Vec<usize> = (0..users.len()).collect();
    loop {
        if active.is_empty() {
            return (0.0, active);
        }
        let curves: Vec<&LevelCurve> = active.iter().map(|&i| &users[i].1).collect();
        let start = active
            .iter()
            .map(|&i| users[i].0.bid.latency_req)
            .fold(0.0, f64::max);
        let level = water_level(&curves, start, cap);
        let tightest = active
            .iter()
            .enumerate()
            .filter(|&(_, &i)| users[i].0.bid.latency_req < level)
            .min_by(|a, b| {
                let (ba, bb) = (&users[*a.1].0.bid, &users[*b.1].0.bid);
                ba.latency_req
                    .total_cmp(&bb.latency_req)
                    .then(ba.user_id.cmp(&bb.user_id))
            })
            .map(|(k, _)| k);
        match tightest {
            None => return (level, active),
            Some(k) => {
                active.remove(k);
            }
        }
    }
}

/// Per user, the deepest deterministic exit whose truncated model can meet
/// the deadline; the resulting demands are priced by the main auction.
pub fn edgent_like<R: Rng + ?Sized>(
    bidders: &[Bidder],
    catalog: &ProfileCatalog,
    params: &AuctionParams,
    mode: TransmissionMode,
    rng: &mut R,
) -> Result<MechanismRun> {
    let mut demands = Vec::new();
    for b in bidders {
        if let Some(Some(d)) =
            exit_options(b, catalog.get(&b.bid.model_id)?, params.edge_capacity, mode)?.first()
        {
            demands.push(*d);
        }
    }
    let run = run_auction(&demands, params, rng)?;
    Ok(MechanismRun {
        outcome: run.outcome,
        demands,
        centre: run.centre,
        upper_revenue: Some(run.roso.upper_revenue),
    })
}
