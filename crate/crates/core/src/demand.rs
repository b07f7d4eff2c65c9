//! Per-user edge demand analysis.
//!
//! Each bidder picks the partition point that minimizes the edge compute rate
//! needed to meet its latency requirement. The request is the smallest
//! allocation that makes the total latency bind exactly at `t_i`.

use serde::{Deserialize, Serialize};

use crate::auction::Demand;
use crate::error::{Error, Result};
use crate::latency::{device_latency, network_latency_with, DeviceLink, TransmissionMode};
use crate::profiles::{MeDnnProfile, Workload};

pub type UserId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub user_id: UserId,
    /// Budget per slot, currency.
    pub budget: f64,
    /// Latency requirement, seconds.
    pub latency_req: f64,
    /// Confidence criterion; must be a key of the model's probability table.
    pub sigma: f64,
    pub model_id: String,
}

impl Bid {
    pub fn check(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Domain(format!(
                "user {}: budget {} must be positive",
                self.user_id, self.budget
            )));
        }
        if !(self.latency_req > 0.0 && self.latency_req.is_finite()) {
            return Err(Error::Domain(format!(
                "user {}: latency requirement {} must be positive",
                self.user_id, self.latency_req
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandRequest {
    pub partition: usize,
    /// Minimal edge allocation, FLOPS.
    pub request: f64,
    /// Budget per requested FLOPS.
    pub density: f64,
    /// Expected FLOP executed at the edge for this partition.
    pub edge_work: f64,
    /// Device plus transmission latency for this partition, seconds.
    pub local_latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DemandOutcome {
    Request(DemandRequest),
    /// The device alone meets the requirement at this partition.
    LocalOnly {
        partition: usize,
    },
    Infeasible,
}

impl DemandOutcome {
    pub fn request(&self) -> Option<&DemandRequest> {
        match self {
            DemandOutcome::Request(r) => Some(r),
            _ => None,
        }
    }
}

pub fn analyze(
    bid: &Bid,
    profile: &MeDnnProfile,
    link: &DeviceLink,
    edge_capacity: f64,
    mode: TransmissionMode,
) -> Result<DemandOutcome> {
    bid.check()?;
    let work = profile.workload(bid.sigma)?;
    Ok(analyze_workload(bid, &work, link, edge_capacity, mode))
}

/// Demand analysis over a workload already evaluated at the bid's sigma.
pub fn analyze_workload(
    bid: &Bid,
    work: &Workload,
    link: &DeviceLink,
    edge_capacity: f64,
    mode: TransmissionMode,
) -> DemandOutcome {
    // (partition, request, local latency); later partitions win ties
    let mut best: Option<(usize, f64, f64)> = None;
    for s in 0..=work.layers {
        let local =
            device_latency(work.device[s], link) + network_latency_with(work, s, link, mode);
        let remaining = bid.latency_req - local;
        if !(remaining > 0.0) {
            continue;
        }
        let request = work.edge[s] / remaining;
        if !(request < edge_capacity) {
            continue;
        }
        if best.is_none_or(|(_, a, _)| request <= a) {
            best = Some((s, request, local));
        }
    }
    match best {
        None => DemandOutcome::Infeasible,
        Some((partition, request, _)) if request == 0.0 => DemandOutcome::LocalOnly { partition },
        Some((partition, request, local_latency)) => DemandOutcome::Request(DemandRequest {
            partition,
            request,
            density: bid.budget / request,
            edge_work: work.edge[partition],
            local_latency,
        }),
    }
}

/// A bid together with the device and link it was placed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bidder {
    pub bid: Bid,
    pub link: DeviceLink,
}

impl Bidder {
    /// Runs the analysis against `profile` and builds the auction-side demand
    /// when the outcome is a request.
    pub fn demand(
        &self,
        profile: &MeDnnProfile,
        edge_capacity: f64,
        mode: TransmissionMode,
    ) -> Result<(DemandOutcome, Option<Demand>)> {
        let out = analyze(&self.bid, profile, &self.link, edge_capacity, mode)?;
        let demand = out
            .request()
            .map(|r| Demand::from_request(&self.bid, r, profile.layer_count()));
        Ok((out, demand))
    }

    /// Whether the full model run entirely on the device meets the deadline.
    pub fn locally_fulfilled(&self, profile: &MeDnnProfile) -> Result<bool> {
        let work = profile.workload(self.bid.sigma)?;
        Ok(device_latency(work.total(), &self.link) <= self.bid.latency_req)
    }
}

impl Demand {
    pub fn from_request(bid: &Bid, request: &DemandRequest, max_partition: usize) -> Self {
        Demand {
            user_id: bid.user_id,
            budget: bid.budget,
            request: request.request,
            partition: request.partition,
            max_partition,
            edge_work: request.edge_work,
            local_latency: request.local_latency,
            latency_req: bid.latency_req,
        }
    }
}
