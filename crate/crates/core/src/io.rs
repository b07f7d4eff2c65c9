//! Config, trace and report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionParams, Demand, DEFAULT_ITERATION_CAP};
use crate::error::{Error, Result};
use crate::simulator::{diurnal_mean, streams, MarketConfig, RunReport, SlotMetrics, TracePaths};

/// Per-slot exogenous series. Each is indexed by slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    /// Currency per kWh.
    pub electricity: Option<Vec<f64>>,
    pub bidders: Option<Vec<usize>>,
    /// Mean uplink rate, Mbps.
    pub rates: Option<Vec<f64>>,
}

impl TraceBundle {
    pub fn check_length(&self, slots: usize) -> Result<()> {
        let lens = [
            ("electricity", self.electricity.as_ref().map(Vec::len)),
            ("bidders", self.bidders.as_ref().map(Vec::len)),
            ("rates", self.rates.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(have) = len.filter(|&l| l < slots) {
                return Err(Error::TraceTooShort {
                    name: name.into(),
                    have,
                    need: slots,
                });
            }
        }
        Ok(())
    }
}

fn read_series<T: std::str::FromStr>(
    path: &Path,
    check: impl Fn(&T) -> bool,
    what: &str,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Trace {
                path: path.into(),
                row: 0,
                message: format!("{other:?}"),
            },
        })?;
    let err = |row: usize, message: String| Error::Trace {
        path: path.into(),
        row,
        message,
    };
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        // header is row 1
        let row = k + 2;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        if record.len() != 2 {
            return Err(err(
                row,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| err(row, format!("bad slot index `{}`", &record[0])))?;
        if index != out.len() {
            return Err(err(
                row,
                format!(
                    "slot index {index} breaks the sequence, expected {}",
                    out.len()
                ),
            ));
        }
        let value: T = record[1]
            .parse()
            .map_err(|_| err(row, format!("bad {what} `{}`", &record[1])))?;
        if !check(&value) {
            return Err(err(row, format!("{what} `{}` out of range", &record[1])));
        }
        out.push(value);
    }
    Ok(out)
}

/// Electricity prices, `slot_index,price`.
pub fn load_electricity(path: &Path) -> Result<Vec<f64>> {
    read_series(path, |v: &f64| v.is_finite() && *v >= 0.0, "price")
}

/// Bidder counts, `slot_index,count`.
pub fn load_bidder_counts(path: &Path) -> Result<Vec<usize>> {
    read_series(path, |_: &usize| true, "count")
}

/// Mean rates, `slot_index,mean_rate_mbps`.
pub fn load_rates(path: &Path) -> Result<Vec<f64>> {
    read_series(path, |v: &f64| v.is_finite() && *v > 0.0, "rate")
}

pub fn load_traces(paths: &TracePaths) -> Result<TraceBundle> {
    Ok(TraceBundle {
        electricity: paths
            .electricity
            .as_deref()
            .map(load_electricity)
            .transpose()?,
        bidders: paths
            .bidders
            .as_deref()
            .map(load_bidder_counts)
            .transpose()?,
        rates: paths.rates.as_deref().map(load_rates).transpose()?,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        Error::Config(format!("{}: {inner} (at `{at}`)", path.display()))
    })
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// Parses and validates a config file. Relative file references resolve
/// against the config file's directory.
pub fn load_config(path: &Path) -> Result<MarketConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path, path.parent().unwrap_or(Path::new(".")))
}

/// Config from text; `origin` names it in errors and relative paths
/// resolve against `base`.
pub fn parse_config(text: &str, origin: &Path, base: &Path) -> Result<MarketConfig> {
    let mut cfg: MarketConfig = parse_json(text, origin)?;
    resolve(base, &mut cfg.profiles);
    resolve(base, &mut cfg.traces.electricity);
    resolve(base, &mut cfg.traces.bidders);
    resolve(base, &mut cfg.traces.rates);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Shortest decimal that round-trips a value rounded to 12 significant digits.
pub fn sig12(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub const CSV_COLUMNS: [&str; 18] = [
    "mechanism",
    "slot",
    "bidders",
    "requests",
    "winners",
    "revenue",
    "rental_price",
    "profit_rate",
    "price",
    "utilization",
    "competitive_ratio",
    "fulfilled",
    "fulfilled_fraction",
    "path",
    "declined",
    "constraints_ok",
    "centre_iterations",
    "electricity_price",
];

fn csv_row(m: &SlotMetrics, electricity: Option<f64>) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(sig12).unwrap_or_default();
    let path = serde_json::to_value(m.path)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    vec![
        m.mechanism.name().to_string(),
        m.slot.to_string(),
        m.bidders.to_string(),
        m.requests.to_string(),
        m.winners.to_string(),
        sig12(m.revenue),
        sig12(m.rental_price),
        opt(m.profit_rate),
        opt(m.price),
        sig12(m.utilization),
        opt(m.competitive_ratio),
        m.fulfilled.to_string(),
        sig12(m.fulfilled_fraction),
        path,
        m.declined.to_string(),
        m.constraints_ok.to_string(),
        m.centre_iterations
            .map(|i| i.to_string())
            .unwrap_or_default(),
        opt(electricity),
    ]
}

pub fn write_report<W: Write>(report: &RunReport, format: Format, mut w: W) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, report).map_err(|source| Error::Json {
                path: "<report>".into(),
                source,
            })?;
            writeln!(w).map_err(|e| Error::io("<report>", e))?;
        }
        Format::Csv => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(CSV_COLUMNS)?;
            for mr in &report.mechanisms {
                for m in &mr.slots {
                    let p_e = rental_to_electricity(&report.config, m.rental_price);
                    out.write_record(csv_row(m, p_e))?;
                }
            }
            out.flush().map_err(|e| Error::io("<report>", e))?;
        }
    }
    Ok(())
}

fn rental_to_electricity(cfg: &MarketConfig, rental: f64) -> Option<f64> {
    let kwh = cfg.server_power_w * cfg.pue / 1000.0 * cfg.slot_hours;
    (kwh > 0.0).then(|| rental / kwh)
}

/// Writes to `path`, or stdout when `path` is `None`.
pub fn emit_report(report: &RunReport, format: Format, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(f);
            write_report(report, format, &mut w)?;
            w.flush().map_err(|e| Error::io(p, e))
        }
        None => write_report(report, format, std::io::stdout().lock()),
    }
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// One demand in an auction input file. Only id, budget and request are
/// required; the latency fields default to a unit deadline that binds
/// exactly at the requested allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub user_id: u64,
    pub budget: f64,
    pub request: f64,
    #[serde(default)]
    pub partition: usize,
    #[serde(default)]
    pub max_partition: Option<usize>,
    #[serde(default)]
    pub edge_work: Option<f64>,
    #[serde(default)]
    pub local_latency: f64,
    #[serde(default)]
    pub latency_req: Option<f64>,
}

impl DemandSpec {
    pub fn to_demand(&self) -> Result<Demand> {
        if !(self.budget > 0.0 && self.request > 0.0) {
            return Err(Error::Domain(format!(
                "user {}: budget and request must be positive",
                self.user_id
            )));
        }
        let latency_req = self.latency_req.unwrap_or(self.local_latency + 1.0);
        if !(latency_req > self.local_latency) {
            return Err(Error::Domain(format!(
                "user {}: deadline leaves no time for the edge",
                self.user_id
            )));
        }
        Ok(Demand {
            user_id: self.user_id,
            budget: self.budget,
            request: self.request,
            partition: self.partition,
            max_partition: self.max_partition.unwrap_or(self.partition.max(1)),
            edge_work: self
                .edge_work
                .unwrap_or(self.request * (latency_req - self.local_latency)),
            local_latency: self.local_latency,
            latency_req,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandsFile {
    pub edge_capacity: f64,
    #[serde(default)]
    pub rental_price: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_cap")]
    pub iteration_cap: u32,
    pub demands: Vec<DemandSpec>,
}

fn default_cap() -> u32 {
    DEFAULT_ITERATION_CAP
}

impl DemandsFile {
    pub fn params(&self) -> AuctionParams {
        AuctionParams {
            edge_capacity: self.edge_capacity,
            rental_price: self.rental_price,
            gamma: self.gamma,
            iteration_cap: self.iteration_cap,
        }
    }

    pub fn to_demands(&self) -> Result<Vec<Demand>> {
        self.demands.iter().map(DemandSpec::to_demand).collect()
    }
}

pub fn load_demands(path: &Path) -> Result<DemandsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

/// Synthetic traces: a daily electricity cycle around `base_price`, diurnal
/// Poisson bidder counts and a mildly varying mean rate.
pub fn synth_traces(slots: usize, slot_hours: f64, base_price: f64, seed: u64) -> TraceBundle {
    let mut rng = streams::stream(seed, 3, 0);
    let mut electricity = Vec::with_capacity(slots);
    let mut bidders = Vec::with_capacity(slots);
    let mut rates = Vec::with_capacity(slots);
    for slot in 0..slots {
        let hour = (slot as f64 * slot_hours).rem_euclid(24.0);
        let phase = 2.0 * std::f64::consts::PI * (hour - 8.0) / 24.0;
        let noise: f64 = rng.random_range(-0.05..0.05);
        electricity.push((base_price * (1.0 + 0.3 * phase.sin() + noise)).max(0.0));
        let mean = diurnal_mean(slot, slot_hours, 20.0, 60.0);
        bidders.push(
            Poisson::new(mean)
                .map(|d| d.sample(&mut rng) as usize)
                .unwrap_or(0),
        );
        rates.push(25.0 + 3.0 * phase.cos() + rng.random_range(-1.0..1.0));
    }
    TraceBundle {
        electricity: Some(electricity),
        bidders: Some(bidders),
        rates: Some(rates),
    }
}

/// Writes `electricity.csv`, `bidders.csv` and `rates.csv` into `dir`.
pub fn write_traces(bundle: &TraceBundle, dir: &Path) -> Result<TracePaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fn series<T: ToString>(path: &Path, header: [&str; 2], values: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for (i, v) in values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
    let mut paths = TracePaths::default();
    if let Some(v) = &bundle.electricity {
        let p = dir.join("electricity.csv");
        series(
            &p,
            ["slot_index", "price"],
            &v.iter().map(|x| sig12(*x)).collect::<Vec<_>>(),
        )?;
        paths.electricity = Some(p);
    }
    if let Some(v) = &bundle.bidders {
        let p = dir.join("bidders.csv");
        series(&p, ["slot_index", "count"], v)?;
        paths.bidders = Some(p);
    }
    if let Some(v) = &bundle.rates {
        let p = dir.join("rates.csv");
        series(
            &p,
            ["slot_index", "mean_rate_mbps"],
            &v.iter().map(|x| sig12(*x)).collect::<Vec<_>>(),
        )?;
        paths.rates = Some(p);
    }
    Ok(paths)
}
