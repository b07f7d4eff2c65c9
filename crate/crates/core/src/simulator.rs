//! Time-slotted edge inference market.
//!
//! A fixed population of users is drawn once. Each slot a subset of them
//! bids, every configured mechanism prices the same bids, and per-slot
//! metrics are collected. All randomness comes from named ChaCha streams
//! derived from one root seed, so slots can run in parallel and adding a
//! mechanism never shifts another mechanism's draws.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::{
    run_auction, AuctionOutcome, AuctionParams, PricingPath, DEFAULT_ITERATION_CAP,
};
use crate::baselines::{aeria_demands, run_baseline, BaselineKind, MechanismRun};
use crate::demand::{Bid, Bidder, UserId};
use crate::error::{Error, Result};
use crate::io::TraceBundle;
use crate::latency::{device_latency, DeviceLink, TransmissionMode};
use crate::profiles::ProfileCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Aeria,
    FixedProfitRate,
    Iao,
    Edgent,
    Amr2,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Aeria,
        Mechanism::FixedProfitRate,
        Mechanism::Iao,
        Mechanism::Edgent,
        Mechanism::Amr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Aeria => "aeria",
            Mechanism::FixedProfitRate => "fixed-profit-rate",
            Mechanism::Iao => "iao",
            Mechanism::Edgent => "edgent",
            Mechanism::Amr2 => "amr2",
        }
    }

    fn stream_code(self) -> u64 {
        match self {
            Mechanism::Aeria => 16,
            Mechanism::FixedProfitRate => 17,
            Mechanism::Iao => 18,
            Mechanism::Edgent => 19,
            Mechanism::Amr2 => 20,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mechanism `{s}`")))
    }
}

/// Named random streams under one root seed.
pub mod streams {
    use super::*;

    pub const POPULATION: u64 = 1;
    pub const BIDDERS: u64 = 2;

    pub fn stream(root: u64, name: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(root);
        rng.set_stream((name << 32) | (index & 0xffff_ffff));
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BidderProcess {
    /// Poisson counts around a daily U-shaped mean, highest at midnight.
    Diurnal {
        low: f64,
        high: f64,
    },
    Poisson {
        mean: f64,
    },
    Fixed {
        count: usize,
    },
}

impl Default for BidderProcess {
    fn default() -> Self {
        BidderProcess::Diurnal {
            low: 20.0,
            high: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub users: usize,
    /// FLOPS range of user devices.
    pub device_flops: [f64; 2],
    /// Uplink rate range, bits/second.
    pub data_rate: [f64; 2],
    /// Users sit uniformly in a disc of this radius around the server.
    pub radius_m: f64,
    /// Per-slot budget range, currency.
    pub budget: [f64; 2],
    /// Deadline as a fraction of the user's all-local latency.
    pub latency_factor: [f64; 2],
    /// Restrict model assignment to these ids; empty means the whole catalog.
    pub models: Vec<String>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            users: 800,
            device_flops: [0.5e9, 5e9],
            data_rate: [20e6, 30e6],
            radius_m: 1000.0,
            budget: [0.005, 0.015],
            latency_factor: [0.01, 0.03],
            models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracePaths {
    pub electricity: Option<PathBuf>,
    pub bidders: Option<PathBuf>,
    pub rates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub slot_hours: f64,
    pub slots: usize,
    /// FLOPS.
    pub edge_capacity: f64,
    /// Minimum profit rate over the rental cost.
    pub gamma: f64,
    pub server_power_w: f64,
    pub pue: f64,
    /// Currency per kWh when no electricity trace is bound.
    pub electricity_price: f64,
    pub mechanisms: Vec<Mechanism>,
    pub seed: u64,
    pub population: PopulationConfig,
    pub bidders: BidderProcess,
    pub fixed_profit_rate: f64,
    pub transmission: TransmissionMode,
    pub centre_iteration_cap: u32,
    /// Profile catalog file; the builtin catalog when absent.
    pub profiles: Option<PathBuf>,
    pub traces: TracePaths,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            slot_hours: 1.0,
            slots: 360,
            edge_capacity: 1.74e12,
            gamma: 0.5,
            server_power_w: 65.0,
            pue: 1.2,
            electricity_price: 0.1056,
            mechanisms: Mechanism::ALL.to_vec(),
            seed: 1,
            population: PopulationConfig::default(),
            bidders: BidderProcess::default(),
            fixed_profit_rate: 1.0,
            transmission: TransmissionMode::Survival,
            centre_iteration_cap: DEFAULT_ITERATION_CAP,
            profiles: None,
            traces: TracePaths::default(),
        }
    }
}

fn range_ok(r: [f64; 2], positive: bool) -> bool {
    r[0].is_finite()
        && r[1].is_finite()
        && r[0] <= r[1]
        && if positive { r[0] > 0.0 } else { r[0] >= 0.0 }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.slot_hours > 0.0 && self.slot_hours.is_finite()) {
            return fail("slot_hours must be positive");
        }
        if !(self.edge_capacity > 0.0 && self.edge_capacity.is_finite()) {
            return fail("edge_capacity must be positive");
        }
        if !(self.gamma >= 0.0) {
            return fail("gamma must be non-negative");
        }
        if !(self.pue >= 1.0) {
            return fail("pue must be at least 1");
        }
        if !(self.server_power_w >= 0.0 && self.electricity_price >= 0.0) {
            return fail("server_power_w and electricity_price must be non-negative");
        }
        if !(self.fixed_profit_rate > 0.0) {
            return fail("fixed_profit_rate must be positive");
        }
        if self.mechanisms.is_empty() {
            return fail("at least one mechanism is required");
        }
        if self.centre_iteration_cap == 0 {
            return fail("centre_iteration_cap must be positive");
        }
        let p = &self.population;
        if p.users == 0 {
            return fail("population.users must be positive");
        }
        if !range_ok(p.device_flops, true)
            || !range_ok(p.data_rate, true)
            || !range_ok(p.budget, true)
        {
            return fail("population ranges must be positive and ordered");
        }
        if !range_ok(p.latency_factor, true) {
            return fail("population.latency_factor must be positive and ordered");
        }
        if !(p.radius_m >= 0.0) {
            return fail("population.radius_m must be non-negative");
        }
        match self.bidders {
            BidderProcess::Diurnal { low, high } if !(0.0 <= low && low <= high) => {
                fail("diurnal bidder range must satisfy 0 <= low <= high")
            }
            BidderProcess::Poisson { mean } if !(mean >= 0.0) => {
                fail("poisson mean must be non-negative")
            }
            _ => Ok(()),
        }
    }

    pub fn params(&self, rental_price: f64) -> AuctionParams {
        AuctionParams {
            edge_capacity: self.edge_capacity,
            rental_price,
            gamma: self.gamma,
            iteration_cap: self.centre_iteration_cap,
        }
    }
}

/// Rental cost of one slot: energy at `power_w * pue` over `hours`.
pub fn rental_price(electricity_price: f64, power_w: f64, pue: f64, hours: f64) -> f64 {
    electricity_price * power_w * pue / 1000.0 * hours
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub device_flops: f64,
    pub data_rate: f64,
    pub distance: f64,
    pub model_id: String,
}

pub fn generate_population<R: Rng + ?Sized>(
    config: &PopulationConfig,
    catalog: &ProfileCatalog,
    rng: &mut R,
) -> Result<Vec<User>> {
    let models: Vec<String> = if config.models.is_empty() {
        catalog.ids().map(str::to_string).collect()
    } else {
        for id in &config.models {
            catalog.get(id)?;
        }
        config.models.clone()
    };
    if models.is_empty() {
        return Err(Error::Config("profile catalog is empty".into()));
    }
    let draw = |rng: &mut R, r: [f64; 2]| {
        if r[0] < r[1] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    };
    Ok((0..config.users)
        .map(|i| {
            let device_flops = draw(rng, config.device_flops);
            let data_rate = draw(rng, config.data_rate);
            let distance = config.radius_m * rng.random::<f64>().sqrt();
            let model_id = models[rng.random_range(0..models.len())].clone();
            User {
                user_id: i as UserId,
                device_flops,
                data_rate,
                distance,
                model_id,
            }
        })
        .collect())
}

/// Expected bidder count for a slot under a daily cycle.
pub fn diurnal_mean(slot: usize, slot_hours: f64, low: f64, high: f64) -> f64 {
    let hour = (slot as f64 * slot_hours).rem_euclid(24.0);
    0.5 * (low + high) + 0.5 * (high - low) * (2.0 * PI * hour / 24.0).cos()
}

/// Everything a mechanism sees in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotInputs {
    pub slot: usize,
    pub electricity_price: f64,
    pub rental_price: f64,
    pub bidders: Vec<Bidder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub mechanism: Mechanism,
    pub bidders: usize,
    /// Bidders whose analysis produced an edge request.
    pub requests: usize,
    pub winners: usize,
    pub revenue: f64,
    pub rental_price: f64,
    pub profit_rate: Option<f64>,
    pub price: Option<f64>,
    pub utilization: f64,
    pub competitive_ratio: Option<f64>,
    pub fulfilled: usize,
    pub fulfilled_fraction: f64,
    pub path: PricingPath,
    pub declined: bool,
    pub constraints_ok: bool,
    pub centre_iterations: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub metrics: SlotMetrics,
    pub run: MechanismRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub slots: usize,
    pub total_revenue: f64,
    pub mean_revenue: f64,
    pub mean_profit_rate: Option<f64>,
    pub mean_utilization: f64,
    pub mean_competitive_ratio: Option<f64>,
    pub mean_fulfilled_fraction: f64,
    pub traded_slots: usize,
    pub declined_slots: usize,
    pub constraint_violations: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

impl Summary {
    pub fn of(slots: &[SlotMetrics]) -> Self {
        let total_revenue: f64 = slots.iter().map(|m| m.revenue).sum();
        Summary {
            slots: slots.len(),
            total_revenue,
            mean_revenue: if slots.is_empty() {
                0.0
            } else {
                total_revenue / slots.len() as f64
            },
            mean_profit_rate: mean(slots.iter().filter_map(|m| m.profit_rate)),
            mean_utilization: mean(slots.iter().map(|m| m.utilization)).unwrap_or(0.0),
            mean_competitive_ratio: mean(slots.iter().filter_map(|m| m.competitive_ratio)),
            mean_fulfilled_fraction: mean(slots.iter().map(|m| m.fulfilled_fraction))
                .unwrap_or(1.0),
            traded_slots: slots.iter().filter(|m| m.price.is_some()).count(),
            declined_slots: slots.iter().filter(|m| m.declined).count(),
            constraint_violations: slots.iter().filter(|m| !m.constraints_ok).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub mechanism: Mechanism,
    pub summary: Summary,
    pub slots: Vec<SlotMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: MarketConfig,
    pub mechanisms: Vec<MechanismReport>,
}

/// A configured market with its population drawn.
#[derive(Debug, Clone)]
pub struct Market {
    pub config: MarketConfig,
    pub catalog: ProfileCatalog,
    pub traces: TraceBundle,
    pub users: Vec<User>,
}

impl Market {
    pub fn new(config: MarketConfig, catalog: ProfileCatalog, traces: TraceBundle) -> Result<Self> {
        config.validate()?;
        traces.check_length(config.slots)?;
        let mut rng = streams::stream(config.seed, streams::POPULATION, 0);
        let users = generate_population(&config.population, &catalog, &mut rng)?;
        Ok(Market {
            config,
            catalog,
            traces,
            users,
        })
    }

    fn bidder_count<R: Rng + ?Sized>(&self, slot: usize, rng: &mut R) -> usize {
        let n = match (&self.traces.bidders, self.config.bidders) {
            (Some(counts), _) => counts[slot],
            (None, BidderProcess::Fixed { count }) => count,
            (None, BidderProcess::Poisson { mean }) => poisson(mean, rng),
            (None, BidderProcess::Diurnal { low, high }) => {
                poisson(diurnal_mean(slot, self.config.slot_hours, low, high), rng)
            }
        };
        n.min(self.users.len())
    }

    /// Bids for one slot; identical for every mechanism.
    pub fn slot_inputs(&self, slot: usize) -> Result<SlotInputs> {
        let cfg = &self.config;
        let mut rng = streams::stream(cfg.seed, streams::BIDDERS, slot as u64);
        let n = self.bidder_count(slot, &mut rng);
        let mut chosen = sample(&mut rng, self.users.len(), n).into_vec();
        chosen.sort_unstable();

        let pop = &cfg.population;
        let rate_scale = match &self.traces.rates {
            Some(rates) => rates[slot] * 1e6 / (0.5 * (pop.data_rate[0] + pop.data_rate[1])),
            None => 1.0,
        };
        let mut bidders = Vec::with_capacity(n);
        for i in chosen {
            let user = &self.users[i];
            let profile = self.catalog.get(&user.model_id)?;
            let sigmas = profile.sigmas();
            let sigma = sigmas[rng.random_range(0..sigmas.len())];
            let budget = uniform(&mut rng, pop.budget);
            let factor = uniform(&mut rng, pop.latency_factor);
            let link = DeviceLink::from_distance(
                user.device_flops,
                user.distance,
                user.data_rate * rate_scale,
            )?;
            let local = device_latency(profile.workload(sigma)?.total(), &link);
            bidders.push(Bidder {
                bid: Bid {
                    user_id: user.user_id,
                    budget,
                    latency_req: factor * local,
                    sigma,
                    model_id: user.model_id.clone(),
                },
                link,
            });
        }

        let electricity_price = match &self.traces.electricity {
            Some(prices) => prices[slot],
            None => cfg.electricity_price,
        };
        let rental = rental_price(
            electricity_price,
            cfg.server_power_w,
            cfg.pue,
            cfg.slot_hours,
        );
        Ok(SlotInputs {
            slot,
            electricity_price,
            rental_price: rental,
            bidders,
        })
    }

    pub fn run_slot(&self, inputs: &SlotInputs, mechanism: Mechanism) -> Result<SlotResult> {
        let mut rng = streams::stream(
            self.config.seed,
            mechanism.stream_code(),
            inputs.slot as u64,
        );
        let run = run_mechanism(mechanism, &self.config, &self.catalog, inputs, &mut rng)?;
        let metrics = self.metrics(inputs, mechanism, &run)?;
        Ok(SlotResult { metrics, run })
    }

    fn metrics(
        &self,
        inputs: &SlotInputs,
        mechanism: Mechanism,
        run: &MechanismRun,
    ) -> Result<SlotMetrics> {
        let out: &AuctionOutcome = &run.outcome;
        let mut fulfilled = 0;
        for b in &inputs.bidders {
            let won = out.winners.contains(&b.bid.user_id);
            if won || b.locally_fulfilled(self.catalog.get(&b.bid.model_id)?)? {
                fulfilled += 1;
            }
        }
        let n = inputs.bidders.len();
        let p_r = inputs.rental_price;
        let competitive_ratio = match (out.traded(), run.upper_revenue) {
            (true, Some(upper)) if upper > 0.0 => Some(out.revenue / upper),
            _ => None,
        };
        Ok(SlotMetrics {
            slot: inputs.slot,
            mechanism,
            bidders: n,
            requests: run.demands.len(),
            winners: out.winners.len(),
            revenue: out.revenue,
            rental_price: p_r,
            profit_rate: (p_r > 0.0).then(|| (out.revenue - p_r) / p_r),
            price: out.price,
            utilization: out.allocated() / self.config.edge_capacity,
            competitive_ratio,
            fulfilled,
            fulfilled_fraction: if n == 0 {
                1.0
            } else {
                fulfilled as f64 / n as f64
            },
            path: out.path,
            declined: out.profit_floor_declined.is_some(),
            constraints_ok: out.flags.all(),
            centre_iterations: run.centre.map(|c| c.iterations),
        })
    }

    /// Runs every slot for every configured mechanism. Slots execute in
    /// parallel; results are merged in slot order.
    pub fn run(&self) -> Result<RunReport> {
        let per_slot: Vec<Vec<SlotMetrics>> = (0..self.config.slots)
            .into_par_iter()
            .map(|slot| {
                let inputs = self.slot_inputs(slot)?;
                self.config
                    .mechanisms
                    .iter()
                    .map(|&m| Ok(self.run_slot(&inputs, m)?.metrics))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mechanisms = self
            .config
            .mechanisms
            .iter()
            .enumerate()
            .map(|(k, &mechanism)| {
                let slots: Vec<SlotMetrics> = per_slot.iter().map(|row| row[k].clone()).collect();
                MechanismReport {
                    mechanism,
                    summary: Summary::of(&slots),
                    slots,
                }
            })
            .collect();
        Ok(RunReport {
            config: self.config.clone(),
            mechanisms,
        })
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] < r[1] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng) as usize)
        .unwrap_or(0)
}

/// Prices one slot's bids with `mechanism`.
pub fn run_mechanism<R: Rng + ?Sized>(
    mechanism: Mechanism,
    config: &MarketConfig,
    catalog: &ProfileCatalog,
    inputs: &SlotInputs,
    rng: &mut R,
) -> Result<MechanismRun> {
    let params = config.params(inputs.rental_price);
    let mode = config.transmission;
    let kind = match mechanism {
        Mechanism::Aeria => {
            let demands = aeria_demands(&inputs.bidders, catalog, params.edge_capacity, mode)?;
            let run = run_auction(&demands, &params, rng)?;
            return Ok(MechanismRun {
                outcome: run.outcome,
                demands,
                centre: run.centre,
                upper_revenue: Some(run.roso.upper_revenue),
            });
        }
        Mechanism::FixedProfitRate => BaselineKind::FixedProfitRate {
            rate: config.fixed_profit_rate,
        },
        Mechanism::Iao => BaselineKind::IaoLike,
        Mechanism::Edgent => BaselineKind::EdgentLike,
        Mechanism::Amr2 => BaselineKind::Amr2Like,
    };
    run_baseline(kind, &inputs.bidders, catalog, &params, mode, rng)
}

/// Runs a market from a config with the builtin or configured catalog.
pub fn run(
    config: &MarketConfig,
    catalog: &ProfileCatalog,
    traces: TraceBundle,
) -> Result<RunReport> {
    Market::new(config.clone(), catalog.clone(), traces)?.run()
}
