//! Closed-form timeline of the instance-start row transfer against prefill.
//!
//! The selected head rows travel host -> device while the device runs the
//! prompt's forward pass; the transfer is hidden when it finishes no later
//! than prefill. Embedding lookups run on the host and use no device memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hardware parameters. [`HardwareModel::default`] is an illustrative
/// PCIe-class link with an edge-class accelerator, not a measured profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareModel {
    /// Host -> device bytes per second.
    pub link_bandwidth: f64,
    /// Device floating-point operations per second.
    pub device_flops: f64,
    /// Seconds per token for a host-side embedding gather.
    pub host_lookup_latency: f64,
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self {
            link_bandwidth: 16.0e9,
            device_flops: 20.0e12,
            host_lookup_latency: 50.0e-9,
        }
    }
}

impl HardwareModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("link_bandwidth", self.link_bandwidth),
            ("device_flops", self.device_flops),
            ("host_lookup_latency", self.host_lookup_latency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Model and prompt shape, independent of how many rows are selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub hidden_size: u64,
    pub dtype_bytes: u64,
    pub prompt_len: u64,
    pub flops_per_token: f64,
}

impl Workload {
    fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.dtype_bytes == 0 {
            return Err(Error::Config(
                "hidden_size and dtype_bytes must be positive".into(),
            ));
        }
        if !(self.flops_per_token.is_finite() && self.flops_per_token > 0.0) {
            return Err(Error::Config(format!(
                "flops_per_token must be positive and finite, got {}",
                self.flops_per_token
            )));
        }
        Ok(())
    }

    pub fn row_bytes(&self) -> u64 {
        self.hidden_size * self.dtype_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapTimeline {
    pub plan_rows: u64,
    pub transfer_bytes: u64,
    pub transfer_time: f64,
    pub prefill_time: f64,
    pub embedding_time: f64,
    /// `max(0, transfer_time - prefill_time)`.
    pub exposed_latency: f64,
    pub hidden: bool,
    /// Always zero: the embedding table is host-resident.
    pub embedding_device_bytes: u64,
}

fn transfer_time(hw: &HardwareModel, bytes: u64) -> f64 {
    bytes as f64 / hw.link_bandwidth
}

fn prefill_time(hw: &HardwareModel, w: &Workload) -> f64 {
    w.prompt_len as f64 * w.flops_per_token / hw.device_flops
}

pub fn simulate(hw: &HardwareModel, plan_rows: u64, w: &Workload) -> Result<OverlapTimeline> {
    hw.validate()?;
    w.validate()?;
    let transfer_bytes = plan_rows
        .checked_mul(w.row_bytes())
        .ok_or_else(|| Error::Config("transfer size overflows".into()))?;
    let transfer = transfer_time(hw, transfer_bytes);
    let prefill = prefill_time(hw, w);
    let exposed = (transfer - prefill).max(0.0);
    Ok(OverlapTimeline {
        plan_rows,
        transfer_bytes,
        transfer_time: transfer,
        prefill_time: prefill,
        embedding_time: w.prompt_len as f64 * hw.host_lookup_latency,
        exposed_latency: exposed,
        hidden: exposed == 0.0,
        embedding_device_bytes: 0,
    })
}

/// Largest row count whose transfer is fully hidden behind prefill.
pub fn breakeven_rows(hw: &HardwareModel, w: &Workload) -> Result<u64> {
    hw.validate()?;
    w.validate()?;
    let prefill = prefill_time(hw, w);
    let hidden = |rows: u64| match rows.checked_mul(w.row_bytes()) {
        Some(bytes) => transfer_time(hw, bytes) <= prefill,
        None => false,
    };
    let estimate = (prefill * hw.link_bandwidth / w.row_bytes() as f64).floor();
    if estimate.is_nan() || estimate >= (1u64 << 62) as f64 {
        return Err(Error::Config("breakeven row count is out of range".into()));
    }
    // correct the closed form against the exact predicate
    let mut rows = estimate.max(0.0) as u64;
    while rows > 0 && !hidden(rows) {
        rows -= 1;
    }
    while hidden(rows + 1) {
        rows += 1;
    }
    Ok(rows)
}
