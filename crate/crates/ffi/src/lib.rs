//! C ABI over the `aeria` crate.
//!
//! Every fallible call returns an [`AeriaStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can
//! be read with [`aeria_last_error`]. Handles are opaque and must be
//! released with their matching `_free` function. Strings returned by the
//! library are owned by the caller and released with [`aeria_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aeria::auction::{self, AuctionParams, AuctionRun, Demand, PricingPath};
use aeria::demand::{analyze, Bid, DemandOutcome};
use aeria::io::{self, Format};
use aeria::latency::{DeviceLink, TransmissionMode};
use aeria::profiles::{MeDnnProfile, ProfileCatalog};
use aeria::simulator::{streams, Market};
use aeria::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeriaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or config.
    Parse = 3,
    InvalidArgument = 4,
    /// Index past the end of a collection.
    OutOfRange = 5,
    /// Any other library failure (I/O, iteration cap).
    Failed = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeriaTransmission {
    /// Output size weighted by the probability of passing every local exit.
    Survival = 0,
    /// Weighted by the forward probability of the partition layer.
    PartitionForward = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeriaDemandKind {
    Request = 0,
    LocalOnly = 1,
    Infeasible = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeriaPricingPath {
    Empty = 0,
    Consensus = 1,
    PostedPrice = 2,
    TargetExtraction = 3,
    LowestDensity = 4,
}

/// A trained multi-exit model.
pub struct AeriaProfile(MeDnnProfile);

/// Result of one auction run.
pub struct AeriaOutcome(AuctionRun);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaBid {
    pub user_id: u64,
    pub budget: f64,
    /// Seconds.
    pub latency_req: f64,
    pub sigma: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaLink {
    /// FLOPS.
    pub device_flops: f64,
    /// Seconds.
    pub prop_delay: f64,
    /// Bits/second.
    pub data_rate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaDemandResult {
    pub kind: AeriaDemandKind,
    /// Partition point; meaningful unless `kind` is infeasible.
    pub partition: usize,
    /// Minimal edge allocation in FLOPS, zero unless `kind` is a request.
    pub request: f64,
    pub density: f64,
    pub edge_work: f64,
    pub local_latency: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaDemand {
    pub user_id: u64,
    pub budget: f64,
    pub request: f64,
    pub partition: usize,
    pub max_partition: usize,
    pub edge_work: f64,
    pub local_latency: f64,
    pub latency_req: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaAuctionParams {
    /// FLOPS.
    pub edge_capacity: f64,
    pub rental_price: f64,
    pub gamma: f64,
    /// Zero selects the library default.
    pub iteration_cap: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaOutcomeSummary {
    pub traded: bool,
    /// Unit price; NaN without a trade.
    pub price: f64,
    pub revenue: f64,
    pub path: AeriaPricingPath,
    pub winner_count: usize,
    /// Equals the number of demands passed in.
    pub allocation_count: usize,
    /// A trade was found but its revenue missed the profit floor.
    pub declined: bool,
    pub constraints_ok: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AeriaAllocation {
    pub user_id: u64,
    pub winner: bool,
    pub allocation: f64,
    /// -1 for losers.
    pub partition: i64,
    pub payment: f64,
    /// NaN for losers.
    pub latency: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AeriaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Json { .. } | Error::Config(_) => AeriaStatus::Parse,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Trace { .. }
            | Error::TraceTooShort { .. } => AeriaStatus::Failed,
            Error::IterationCapExceeded { .. } => AeriaStatus::Failed,
            _ => AeriaStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: AeriaStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AeriaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AeriaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside aeria".into());
            AeriaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(AeriaStatus::NullPointer, format!("`{name}` is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(AeriaStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(AeriaStatus::NullPointer, format!("`{name}` is null")),
        Ok,
    )
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(
        || fail(AeriaStatus::NullPointer, format!("`{name}` is null")),
        Ok,
    )
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .or_else(|_| fail(AeriaStatus::Failed, "output contains a nul byte"))
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn aeria_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn aeria_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses one profile. A catalog document is accepted if it holds exactly
/// one model.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_profile_from_json(
    json: *const c_char,
    out: *mut *mut AeriaProfile,
) -> AeriaStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let catalog = ProfileCatalog::from_json_str(text, Path::new("<ffi>"))?;
        if catalog.len() != 1 {
            return fail(
                AeriaStatus::InvalidArgument,
                format!("expected one profile, got {}", catalog.len()),
            );
        }
        let id = catalog.ids().next().expect("one profile").to_string();
        *out = Box::into_raw(Box::new(AeriaProfile(catalog.get(&id)?.clone())));
        Ok(())
    })
}

/// Looks a model up in the catalog bundled with the library.
///
/// # Safety
/// `id` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_profile_builtin(
    id: *const c_char,
    out: *mut *mut AeriaProfile,
) -> AeriaStatus {
    guard(|| {
        let id = str_arg(id, "id")?;
        let out = out_arg(out, "out")?;
        let profile = ProfileCatalog::builtin().get(id)?.clone();
        *out = Box::into_raw(Box::new(AeriaProfile(profile)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aeria_profile_free(p: *mut AeriaProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live profile handle and `layers` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_profile_layer_count(
    p: *const AeriaProfile,
    layers: *mut usize,
) -> AeriaStatus {
    guard(|| {
        *out_arg(layers, "layers")? = ref_arg(p, "profile")?.0.layer_count();
        Ok(())
    })
}

/// Expected device and edge FLOP when partitioning after layer `s`.
///
/// # Safety
/// `p` must be a live profile handle; `device` and `edge` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_profile_flops(
    p: *const AeriaProfile,
    sigma: f64,
    s: usize,
    device: *mut f64,
    edge: *mut f64,
) -> AeriaStatus {
    guard(|| {
        let p = &ref_arg(p, "profile")?.0;
        let (d, e) = (out_arg(device, "device")?, out_arg(edge, "edge")?);
        *d = p.device_flops(sigma, s)?;
        *e = p.edge_flops(sigma, s)?;
        Ok(())
    })
}

/// Cheapest partition and edge request for one bid.
///
/// # Safety
/// All pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_analyze_demand(
    p: *const AeriaProfile,
    bid: *const AeriaBid,
    link: *const AeriaLink,
    edge_capacity: f64,
    mode: AeriaTransmission,
    out: *mut AeriaDemandResult,
) -> AeriaStatus {
    guard(|| {
        let profile = &ref_arg(p, "profile")?.0;
        let b = ref_arg(bid, "bid")?;
        let l = ref_arg(link, "link")?;
        let out = out_arg(out, "out")?;
        let bid = Bid {
            user_id: b.user_id,
            budget: b.budget,
            latency_req: b.latency_req,
            sigma: b.sigma,
            model_id: profile.id.clone(),
        };
        let link = DeviceLink::new(l.device_flops, l.prop_delay, l.data_rate)?;
        let mode = match mode {
            AeriaTransmission::Survival => TransmissionMode::Survival,
            AeriaTransmission::PartitionForward => TransmissionMode::PartitionForward,
        };
        *out = match analyze(&bid, profile, &link, edge_capacity, mode)? {
            DemandOutcome::Request(r) => AeriaDemandResult {
                kind: AeriaDemandKind::Request,
                partition: r.partition,
                request: r.request,
                density: r.density,
                edge_work: r.edge_work,
                local_latency: r.local_latency,
            },
            DemandOutcome::LocalOnly { partition } => AeriaDemandResult {
                kind: AeriaDemandKind::LocalOnly,
                partition,
                request: 0.0,
                density: 0.0,
                edge_work: 0.0,
                local_latency: 0.0,
            },
            DemandOutcome::Infeasible => AeriaDemandResult {
                kind: AeriaDemandKind::Infeasible,
                partition: 0,
                request: 0.0,
                density: 0.0,
                edge_work: 0.0,
                local_latency: 0.0,
            },
        };
        Ok(())
    })
}

/// Prices one slot. `demands` may be null when `n` is zero.
///
/// # Safety
/// `demands` must point to `n` readable entries; `params` valid; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_auction_run(
    demands: *const AeriaDemand,
    n: usize,
    params: *const AeriaAuctionParams,
    seed: u64,
    out: *mut *mut AeriaOutcome,
) -> AeriaStatus {
    guard(|| {
        let raw: &[AeriaDemand] = if n == 0 {
            &[]
        } else if demands.is_null() {
            return fail(AeriaStatus::NullPointer, "`demands` is null");
        } else {
            std::slice::from_raw_parts(demands, n)
        };
        let p = ref_arg(params, "params")?;
        let out = out_arg(out, "out")?;
        let mut params = AuctionParams::new(p.edge_capacity, p.rental_price, p.gamma);
        if p.iteration_cap > 0 {
            params.iteration_cap = p.iteration_cap;
        }
        let demands: Vec<Demand> = raw
            .iter()
            .map(|d| Demand {
                user_id: d.user_id,
                budget: d.budget,
                request: d.request,
                partition: d.partition,
                max_partition: d.max_partition,
                edge_work: d.edge_work,
                local_latency: d.local_latency,
                latency_req: d.latency_req,
            })
            .collect();
        for d in &demands {
            if !(d.budget >= 0.0 && d.request > 0.0 && d.request.is_finite()) {
                return fail(
                    AeriaStatus::InvalidArgument,
                    format!("user {}: invalid budget or request", d.user_id),
                );
            }
        }
        let mut rng = streams::stream(seed, 16, 0);
        let run = auction::run_auction(&demands, &params, &mut rng)?;
        *out = Box::into_raw(Box::new(AeriaOutcome(run)));
        Ok(())
    })
}

/// # Safety
/// `o` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aeria_outcome_free(o: *mut AeriaOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// # Safety
/// `o` must be a live outcome handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_outcome_summary(
    o: *const AeriaOutcome,
    out: *mut AeriaOutcomeSummary,
) -> AeriaStatus {
    guard(|| {
        let r = &ref_arg(o, "outcome")?.0.outcome;
        *out_arg(out, "out")? = AeriaOutcomeSummary {
            traded: r.traded(),
            price: r.price.unwrap_or(f64::NAN),
            revenue: r.revenue,
            path: match r.path {
                PricingPath::Empty => AeriaPricingPath::Empty,
                PricingPath::Consensus => AeriaPricingPath::Consensus,
                PricingPath::PostedPrice => AeriaPricingPath::PostedPrice,
                PricingPath::TargetExtraction => AeriaPricingPath::TargetExtraction,
                PricingPath::LowestDensity => AeriaPricingPath::LowestDensity,
            },
            winner_count: r.winners.len(),
            allocation_count: r.allocations.len(),
            declined: r.profit_floor_declined.is_some(),
            constraints_ok: r.flags.all(),
        };
        Ok(())
    })
}

/// Allocation of the `index`-th demand, in input order.
///
/// # Safety
/// `o` must be a live outcome handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_outcome_allocation(
    o: *const AeriaOutcome,
    index: usize,
    out: *mut AeriaAllocation,
) -> AeriaStatus {
    guard(|| {
        let r = &ref_arg(o, "outcome")?.0.outcome;
        let out = out_arg(out, "out")?;
        let Some(a) = r.allocations.get(index) else {
            return fail(
                AeriaStatus::OutOfRange,
                format!("allocation {index} of {}", r.allocations.len()),
            );
        };
        *out = AeriaAllocation {
            user_id: a.user_id,
            winner: r.winners.contains(&a.user_id),
            allocation: a.allocation,
            partition: a.partition.map_or(-1, |s| s as i64),
            payment: a.payment,
            latency: a.latency.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Full run (outcome, omniscient benchmark, target draw) as JSON.
///
/// # Safety
/// `o` must be a live outcome handle and `json` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_outcome_to_json(
    o: *const AeriaOutcome,
    json: *mut *mut c_char,
) -> AeriaStatus {
    guard(|| {
        let run = &ref_arg(o, "outcome")?.0;
        let json = out_arg(json, "json")?;
        let text =
            serde_json::to_string(run).or_else(|e| fail(AeriaStatus::Failed, e.to_string()))?;
        *json = into_c_string(text)?;
        Ok(())
    })
}

/// Runs the market simulation for a JSON config and returns the report
/// as JSON. Relative paths in the config resolve against the working
/// directory. Profiles and traces are loaded as the CLI would.
///
/// # Safety
/// `config_json` must be a nul-terminated string; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_simulate_json(
    config_json: *const c_char,
    report_json: *mut *mut c_char,
) -> AeriaStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let report_json = out_arg(report_json, "report_json")?;
        let cfg = io::parse_config(text, Path::new("<ffi config>"), Path::new("."))?;
        let catalog = match &cfg.profiles {
            Some(p) => ProfileCatalog::load(p)?,
            None => ProfileCatalog::builtin(),
        };
        let traces = io::load_traces(&cfg.traces)?;
        let report = Market::new(cfg, catalog, traces)?.run()?;
        let mut buf = Vec::new();
        io::write_report(&report, Format::Json, &mut buf)?;
        let text =
            String::from_utf8(buf).or_else(|_| fail(AeriaStatus::Failed, "report is not UTF-8"))?;
        *report_json = into_c_string(text)?;
        Ok(())
    })
}

/// Snaps `value` onto the random grid `{y^(k + eps)}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_consensus_estimate(
    value: f64,
    y: f64,
    eps: f64,
    out: *mut f64,
) -> AeriaStatus {
    guard(|| {
        *out_arg(out, "out")? = auction::consensus_estimate(value, y, eps)?;
        Ok(())
    })
}

/// Grid base maximizing the worst-case revenue ratio for `delta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aeria_optimal_y(delta: f64, out: *mut f64) -> AeriaStatus {
    guard(|| {
        *out_arg(out, "out")? = auction::optimal_y(delta)?;
        Ok(())
    })
}
