//! Three-phase device/network/edge inference latency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{MeDnnProfile, Workload};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLink {
    /// Device compute rate, FLOPS.
    pub device_flops: f64,
    /// One-way propagation delay, seconds.
    pub prop_delay: f64,
    /// Uplink data rate, bits/second.
    pub data_rate: f64,
    /// Distance to the edge server in meters, when the delay was derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl DeviceLink {
    pub fn new(device_flops: f64, prop_delay: f64, data_rate: f64) -> Result<Self> {
        let link = DeviceLink {
            device_flops,
            prop_delay,
            data_rate,
            distance: None,
        };
        link.check()?;
        Ok(link)
    }

    pub fn from_distance(device_flops: f64, distance: f64, data_rate: f64) -> Result<Self> {
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(Error::Domain(format!(
                "distance {distance} must be non-negative"
            )));
        }
        let mut link = Self::new(device_flops, distance / SPEED_OF_LIGHT, data_rate)?;
        link.distance = Some(distance);
        Ok(link)
    }

    fn check(&self) -> Result<()> {
        if !(self.device_flops > 0.0 && self.device_flops.is_finite()) {
            return Err(Error::Domain(format!(
                "device FLOPS {} must be positive",
                self.device_flops
            )));
        }
        if !(self.data_rate > 0.0 && self.data_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "data rate {} must be positive",
                self.data_rate
            )));
        }
        if !(self.prop_delay >= 0.0 && self.prop_delay.is_finite()) {
            return Err(Error::Domain(format!(
                "propagation delay {} must be non-negative",
                self.prop_delay
            )));
        }
        Ok(())
    }
}

/// Which forward probability weights the transmission term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmissionMode {
    /// Weight by the probability of surviving every local exit, `mu(s + 1)`.
    #[default]
    Survival,
    /// Weight by the forward probability of the partition layer, `mu(s)`.
    PartitionForward,
}

pub fn device_latency(device_work: f64, link: &DeviceLink) -> f64 {
    device_work / link.device_flops
}

/// Transmission time at partition `s` given a precomputed workload.
pub fn network_latency_with(
    work: &Workload,
    s: usize,
    link: &DeviceLink,
    mode: TransmissionMode,
) -> f64 {
    if s >= work.layers {
        return 0.0;
    }
    let weight = match mode {
        TransmissionMode::Survival => work.survival(s),
        TransmissionMode::PartitionForward => work.forward_at_partition(s),
    };
    weight * (link.prop_delay + work.output[s] / link.data_rate)
}

pub fn network_latency(
    profile: &MeDnnProfile,
    sigma: f64,
    s: usize,
    link: &DeviceLink,
    mode: TransmissionMode,
) -> Result<f64> {
    profile.check_partition(s)?;
    Ok(network_latency_with(
        &profile.workload(sigma)?,
        s,
        link,
        mode,
    ))
}

pub fn edge_latency(edge_work: f64, allocation: f64) -> Result<f64> {
    if edge_work == 0.0 {
        return Ok(0.0);
    }
    if allocation <= 0.0 {
        return Err(Error::UndefinedEdgeLatency { work: edge_work });
    }
    Ok(edge_work / allocation)
}

/// Latency split into its three phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub device: f64,
    pub network: f64,
    pub edge: f64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> f64 {
        self.device + self.network + self.edge
    }
}

pub fn breakdown_with(
    work: &Workload,
    s: usize,
    allocation: f64,
    link: &DeviceLink,
    mode: TransmissionMode,
) -> Result<LatencyBreakdown> {
    Ok(LatencyBreakdown {
        device: device_latency(work.device[s], link),
        network: network_latency_with(work, s, link, mode),
        edge: edge_latency(work.edge[s], allocation)?,
    })
}

pub fn total_latency(
    profile: &MeDnnProfile,
    sigma: f64,
    s: usize,
    allocation: f64,
    link: &DeviceLink,
    mode: TransmissionMode,
) -> Result<f64> {
    profile.check_partition(s)?;
    Ok(breakdown_with(&profile.workload(sigma)?, s, allocation, link, mode)?.total())
}
