//! Single-slot competitive auction.
//!
//! Phase II runs in three steps: an omniscient single-price auction bounds
//! the revenue from above, a randomized consensus estimate settles a
//! bid-independent target, and a cost-sharing fixed point extracts that
//! target from the users who can afford the resulting flat price.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::UserId;
use crate::error::{Error, Result};

/// Default bound on target-revenue redraws.
pub const DEFAULT_ITERATION_CAP: u32 = 10_000;

/// Relative slack for latency fulfillment checks.
pub const LATENCY_TOLERANCE: f64 = 1e-9;

/// Relative slack for money comparisons (payment vs budget, revenue vs floor).
const MONEY_TOLERANCE: f64 = 1e-12;

/// One bidder as seen by the auction: the analyzed request plus what is
/// needed to re-check its latency without the model profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub user_id: UserId,
    pub budget: f64,
    /// Minimal edge allocation, FLOPS.
    pub request: f64,
    pub partition: usize,
    /// Layer count of the user's model; partitions range over `0..=max_partition`.
    pub max_partition: usize,
    /// FLOP run at the edge at this partition.
    pub edge_work: f64,
    /// Device plus network latency at this partition, seconds.
    pub local_latency: f64,
    pub latency_req: f64,
}

impl Demand {
    /// Request with unit latency budget that binds exactly at `request`.
    pub fn simple(user_id: UserId, budget: f64, request: f64) -> Self {
        Demand {
            user_id,
            budget,
            request,
            partition: 0,
            max_partition: 1,
            edge_work: request,
            local_latency: 0.0,
            latency_req: 1.0,
        }
    }

    pub fn density(&self) -> f64 {
        self.budget / self.request
    }

    pub fn latency_at(&self, allocation: f64) -> Result<f64> {
        Ok(self.local_latency + crate::latency::edge_latency(self.edge_work, allocation)?)
    }
}

pub fn reserve_price(rental_price: f64, gamma: f64, edge_capacity: f64) -> Result<f64> {
    if !(edge_capacity > 0.0) {
        return Err(Error::NonPositiveCapacity(edge_capacity));
    }
    if !(rental_price >= 0.0 && gamma >= 0.0) {
        return Err(Error::Domain(format!(
            "rental price {rental_price} and gamma {gamma} must be non-negative"
        )));
    }
    Ok((1.0 + gamma) * rental_price / edge_capacity)
}

/// Non-increasing density, ties by ascending user id.
pub(crate) fn density_order(demands: &[Demand], a: usize, b: usize) -> Ordering {
    demands[b]
        .density()
        .total_cmp(&demands[a].density())
        .then(demands[a].user_id.cmp(&demands[b].user_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosoResult {
    pub upper_revenue: f64,
    /// Indices into the demand slice, non-increasing density.
    pub admitted: Vec<usize>,
    /// Request volume of the revenue-maximizing prefix.
    pub admitted_volume: f64,
    pub prefix_len: usize,
    /// Largest request in the admitted set.
    pub max_request: f64,
    pub reserve_price: f64,
    /// Request volume of the whole admitted set.
    pub total_volume: f64,
    pub below_reserve: Vec<usize>,
    /// Priced in but dropped because the request did not fit.
    pub capacity_skipped: Vec<usize>,
}

impl RosoResult {
    pub fn price(&self) -> Option<f64> {
        (self.prefix_len > 0).then(|| self.upper_revenue / self.admitted_volume)
    }
}

pub fn roso(demands: &[Demand], edge_capacity: f64, reserve: f64) -> RosoResult {
    let (mut order, below_reserve): (Vec<usize>, Vec<usize>) =
        (0..demands.len()).partition(|&i| demands[i].density() >= reserve);
    order.sort_by(|&a, &b| density_order(demands, a, b));

    let mut remaining = edge_capacity;
    let mut admitted = Vec::with_capacity(order.len());
    let mut capacity_skipped = Vec::new();
    for i in order {
        if remaining - demands[i].request > 0.0 {
            remaining -= demands[i].request;
            admitted.push(i);
        } else {
            capacity_skipped.push(i);
        }
    }

    let (mut best, mut best_volume, mut best_len) = (0.0, 0.0, 0);
    let mut volume = 0.0;
    let mut max_request: f64 = 0.0;
    for (k, &i) in admitted.iter().enumerate() {
        volume += demands[i].request;
        max_request = max_request.max(demands[i].request);
        let revenue = demands[i].density() * volume;
        if revenue >= best {
            best = revenue;
            best_volume = volume;
            best_len = k + 1;
        }
    }

    RosoResult {
        upper_revenue: best,
        admitted,
        admitted_volume: best_volume,
        prefix_len: best_len,
        max_request,
        reserve_price: reserve,
        total_volume: volume,
        below_reserve,
        capacity_skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta {
    Finite(f64),
    /// One request carries all of the priced volume.
    Unbounded,
}

pub fn delta(roso: &RosoResult) -> Result<Delta> {
    if roso.admitted.is_empty() {
        return Err(Error::EmptyAdmittedSet);
    }
    let (volume, zeta) = (roso.admitted_volume, roso.max_request);
    if volume <= zeta {
        return Ok(Delta::Unbounded);
    }
    Ok(Delta::Finite(volume / (volume - zeta)))
}

/// Root above `delta` of `ln y = y / delta - 1`, which maximizes the
/// expected competitive ratio.
pub fn optimal_y(delta: f64) -> Result<f64> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(Error::DeltaNotAboveOne(delta));
    }
    // h is positive at delta and strictly decreasing beyond it
    let h = |y: f64| y.ln() - y / delta + 1.0;
    let mut lo = delta;
    let mut hi = 2.0 * delta;
    while h(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expected competitive ratio lower bound `(1/ln y)(1/delta - 1/y)`.
pub fn competitive_bound(delta: f64, y: f64) -> f64 {
    (1.0 / delta - 1.0 / y) / y.ln()
}

/// `y^(floor(log_y value - eps) + eps)`, the largest point of the grid
/// `y^(k + eps)` not above `value`.
pub fn consensus_estimate(value: f64, y: f64, eps: f64) -> Result<f64> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Domain(format!(
            "estimate argument {value} must be positive"
        )));
    }
    if !(y > 1.0 && y.is_finite()) {
        return Err(Error::Domain(format!("base {y} must exceed 1")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("offset {eps} outside [0, 1]")));
    }
    let mut k = (value.ln() / y.ln() - eps).floor();
    // the log can land one ulp off an exact power; settle on the grid directly
    while y.powf(k + eps) > value {
        k -= 1.0;
    }
    while y.powf(k + 1.0 + eps) <= value {
        k += 1.0;
    }
    Ok(y.powf(k + eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentreResult {
    pub target: f64,
    pub delta: f64,
    pub y: f64,
    pub epsilon: f64,
    pub iterations: u32,
}

pub fn centre<R: Rng + ?Sized>(roso: &RosoResult, cap: u32, rng: &mut R) -> Result<CentreResult> {
    let delta = match delta(roso)? {
        Delta::Finite(d) => d,
        Delta::Unbounded => {
            return Err(Error::DeltaUnbounded {
                volume: roso.admitted_volume,
                largest: roso.max_request,
            })
        }
    };
    let y = optimal_y(delta)?;
    let ceiling = roso.upper_revenue / delta;
    for iterations in 1..=cap {
        let epsilon: f64 = rng.random();
        let target = consensus_estimate(roso.upper_revenue, y, epsilon)?;
        if target <= ceiling {
            return Ok(CentreResult {
                target,
                delta,
                y,
                epsilon,
                iterations,
            });
        }
    }
    Err(Error::IterationCapExceeded { cap })
}

/// Result of the cost-sharing fixed point over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub price: Option<f64>,
    /// Surviving indices, in the candidate order.
    pub winners: Vec<usize>,
    /// Removed indices, in removal order.
    pub removed: Vec<usize>,
    pub volume: f64,
}

/// Drop the lowest-density candidate while it cannot afford `target / volume`.
/// `candidates` must be in non-increasing density order.
pub fn extract(target: f64, candidates: &[usize], demands: &[Demand]) -> Extraction {
    let mut winners = candidates.to_vec();
    let mut removed = Vec::new();
    let mut volume: f64 = winners.iter().map(|&i| demands[i].request).sum();
    while let Some(&last) = winners.last() {
        let price = target / volume;
        if demands[last].density() >= price {
            return Extraction {
                price: Some(price),
                winners,
                removed,
                volume,
            };
        }
        winners.pop();
        removed.push(last);
        volume = winners.iter().map(|&i| demands[i].request).sum();
    }
    Extraction {
        price: None,
        winners,
        removed,
        volume: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingPath {
    /// Nobody was priced in.
    Empty,
    Consensus,
    /// Reserve-price sale used when a single request dominates the volume.
    PostedPrice,
    /// Fixed target extracted by cost sharing.
    TargetExtraction,
    LowestDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub user_id: UserId,
    /// FLOPS; zero for losers.
    pub allocation: f64,
    pub partition: Option<usize>,
    pub payment: f64,
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFlags {
    pub budget_balance: bool,
    pub capacity: bool,
    /// Trade revenue meets the floor, or the slot did not trade.
    pub profit_floor: bool,
    pub decision_range: bool,
    pub latency: bool,
}

impl ConstraintFlags {
    pub fn all(&self) -> bool {
        self.budget_balance
            && self.capacity
            && self.profit_floor
            && self.decision_range
            && self.latency
    }
}

/// A trade the provider refused because it missed the profit floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclinedTrade {
    pub price: f64,
    pub revenue: f64,
    pub winners: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub price: Option<f64>,
    pub revenue: f64,
    /// Revenue the pricing step aimed for, when it had one.
    pub target_revenue: Option<f64>,
    pub path: PricingPath,
    pub winners: Vec<UserId>,
    /// One entry per input demand, in input order.
    pub allocations: Vec<Allocation>,
    pub removed: Vec<UserId>,
    pub capacity_skipped: Vec<UserId>,
    pub below_reserve: Vec<UserId>,
    pub profit_floor_declined: Option<DeclinedTrade>,
    pub flags: ConstraintFlags,
}

impl AuctionOutcome {
    pub fn traded(&self) -> bool {
        self.price.is_some()
    }

    pub fn allocated(&self) -> f64 {
        self.allocations.iter().map(|a| a.allocation).sum()
    }

    /// Build an outcome where `winners` (indices) pay `price` per FLOPS.
    pub(crate) fn settle(
        demands: &[Demand],
        price: Option<f64>,
        revenue: f64,
        winners: &[usize],
        path: PricingPath,
    ) -> Self {
        let mut allocations: Vec<Allocation> = demands
            .iter()
            .map(|d| Allocation {
                user_id: d.user_id,
                allocation: 0.0,
                partition: None,
                payment: 0.0,
                latency: None,
            })
            .collect();
        if let Some(p) = price {
            for &i in winners {
                let d = &demands[i];
                allocations[i] = Allocation {
                    user_id: d.user_id,
                    allocation: d.request,
                    partition: Some(d.partition),
                    payment: p * d.request,
                    latency: d.latency_at(d.request).ok(),
                };
            }
        }
        AuctionOutcome {
            price,
            revenue: if price.is_some() { revenue } else { 0.0 },
            target_revenue: None,
            path,
            winners: if price.is_some() {
                winners.iter().map(|&i| demands[i].user_id).collect()
            } else {
                Vec::new()
            },
            allocations,
            removed: Vec::new(),
            capacity_skipped: Vec::new(),
            below_reserve: Vec::new(),
            profit_floor_declined: None,
            flags: ConstraintFlags {
                budget_balance: true,
                capacity: true,
                profit_floor: true,
                decision_range: true,
                latency: true,
            },
        }
    }

    pub(crate) fn with_roso(mut self, demands: &[Demand], roso: &RosoResult) -> Self {
        let ids = |v: &[usize]| v.iter().map(|&i| demands[i].user_id).collect::<Vec<_>>();
        self.capacity_skipped = ids(&roso.capacity_skipped);
        self.below_reserve = ids(&roso.below_reserve);
        self
    }

    /// Turn a trade into a no-trade, remembering what was on the table.
    pub(crate) fn decline(&mut self) {
        if let Some(price) = self.price.take() {
            self.profit_floor_declined = Some(DeclinedTrade {
                price,
                revenue: self.revenue,
                winners: self.winners.len(),
            });
            self.revenue = 0.0;
            self.winners.clear();
            for a in &mut self.allocations {
                *a = Allocation {
                    user_id: a.user_id,
                    allocation: 0.0,
                    partition: None,
                    payment: 0.0,
                    latency: None,
                };
            }
        }
    }

    /// Recompute constraint flags against the demands the outcome was built from.
    pub fn evaluate(&mut self, demands: &[Demand], edge_capacity: f64, profit_floor: f64) {
        let mut flags = ConstraintFlags {
            budget_balance: true,
            capacity: self.allocated() <= edge_capacity,
            profit_floor: !self.traded() || self.revenue >= profit_floor * (1.0 - MONEY_TOLERANCE),
            decision_range: self.allocations.len() == demands.len(),
            latency: true,
        };
        for (a, d) in self.allocations.iter().zip(demands) {
            if a.payment < 0.0 || a.payment > d.budget * (1.0 + MONEY_TOLERANCE) {
                flags.budget_balance = false;
            }
            match a.partition {
                Some(s) => {
                    if s > d.max_partition || !(a.allocation >= 0.0) {
                        flags.decision_range = false;
                    }
                    match d.latency_at(a.allocation) {
                        Ok(t) if t <= d.latency_req * (1.0 + LATENCY_TOLERANCE) => {}
                        _ => flags.latency = false,
                    }
                }
                None => {
                    if a.allocation != 0.0 {
                        flags.decision_range = false;
                    }
                }
            }
        }
        self.flags = flags;
    }
}

/// Apply the cost-sharing fixed point for `target` over the ROSO set.
pub fn real(target: f64, roso: &RosoResult, demands: &[Demand]) -> AuctionOutcome {
    let ex = extract(target, &roso.admitted, demands);
    let mut out = AuctionOutcome::settle(
        demands,
        ex.price,
        target,
        &ex.winners,
        PricingPath::TargetExtraction,
    )
    .with_roso(demands, roso);
    out.target_revenue = Some(target);
    out.removed = ex.removed.iter().map(|&i| demands[i].user_id).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionParams {
    /// FLOPS.
    pub edge_capacity: f64,
    /// Rental cost of the slot.
    pub rental_price: f64,
    /// Minimum profit rate over the rental cost.
    pub gamma: f64,
    pub iteration_cap: u32,
}

impl AuctionParams {
    pub fn new(edge_capacity: f64, rental_price: f64, gamma: f64) -> Self {
        AuctionParams {
            edge_capacity,
            rental_price,
            gamma,
            iteration_cap: DEFAULT_ITERATION_CAP,
        }
    }

    pub fn profit_floor(&self) -> f64 {
        self.rental_price * (1.0 + self.gamma)
    }

    pub fn reserve_price(&self) -> Result<f64> {
        reserve_price(self.rental_price, self.gamma, self.edge_capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRun {
    pub outcome: AuctionOutcome,
    pub roso: RosoResult,
    pub centre: Option<CentreResult>,
}

pub fn run_auction<R: Rng + ?Sized>(
    demands: &[Demand],
    params: &AuctionParams,
    rng: &mut R,
) -> Result<AuctionRun> {
    let reserve = params.reserve_price()?;
    let roso = roso(demands, params.edge_capacity, reserve);
    let mut centre_result = None;
    let mut outcome = if roso.admitted.is_empty() {
        AuctionOutcome::settle(demands, None, 0.0, &[], PricingPath::Empty)
            .with_roso(demands, &roso)
    } else {
        match delta(&roso)? {
            Delta::Unbounded => AuctionOutcome::settle(
                demands,
                Some(reserve),
                reserve * roso.total_volume,
                &roso.admitted,
                PricingPath::PostedPrice,
            )
            .with_roso(demands, &roso),
            Delta::Finite(_) => {
                let c = centre(&roso, params.iteration_cap, rng)?;
                centre_result = Some(c);
                let mut out = real(c.target, &roso, demands);
                out.path = PricingPath::Consensus;
                out
            }
        }
    };
    if outcome.traded() && outcome.revenue < params.profit_floor() {
        outcome.decline();
    }
    outcome.evaluate(demands, params.edge_capacity, params.profit_floor());
    Ok(AuctionRun {
        outcome,
        roso,
        centre: centre_result,
    })
}
