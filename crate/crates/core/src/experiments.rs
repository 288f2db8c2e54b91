//! Size, depth and precision sweeps, and the effective compression ratio.
//!
//! Each sweep point trains one floating-point network per seed, direct-quantizes
//! that same float network at every requested bit width, and optionally
//! retrains the quantized copy. Medians over seeds feed the report.
//!
//! The effective compression ratio compares a quantized network against the
//! floating-point size curve of its family: the float parameter count that
//! would reach the same validation error, times 32 bits, divided by the bits
//! the quantized network actually stores.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::nn::{cnn_spec, count_weight_bits, ffdnn_spec, Network};
use crate::quantizer::{bits_to_levels, direct_quantize, GroupSelection};
use crate::rng::Rng;
use crate::trainer::{evaluate, retrain_quantized, train_float, TrainConfig};

pub const FLOAT_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ffdnn,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Float,
    Direct,
    Retrained,
}

macro_rules! text_enum {
    ($ty:ty { $($v:ident => $s:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)*
                    _ => Err(Error::Format(format!("unknown {} {s:?}", stringify!($ty)))),
                }
            }
        }
    };
}

text_enum!(Family { Ffdnn => "ffdnn", Cnn => "cnn" });
text_enum!(QuantMode { Float => "float", Direct => "direct", Retrained => "retrained" });

/// One buildable architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    Ffdnn {
        input_dim: usize,
        hidden_units: usize,
        hidden_layers: usize,
        classes: usize,
        dropout: f64,
    },
    Cnn {
        map_counts: Vec<usize>,
        input_shape: [usize; 3],
        fc_units: usize,
        classes: usize,
    },
}

impl Arch {
    pub fn family(&self) -> Family {
        match self {
            Arch::Ffdnn { .. } => Family::Ffdnn,
            Arch::Cnn { .. } => Family::Cnn,
        }
    }

    /// Hidden units (`"256"`) or feature-map configuration (`"32-32-64"`).
    pub fn width_label(&self) -> String {
        match self {
            Arch::Ffdnn { hidden_units, .. } => hidden_units.to_string(),
            Arch::Cnn { map_counts, .. } => join_maps(map_counts),
        }
    }

    /// Hidden layers (FFDNN) or convolution levels (CNN).
    pub fn depth(&self) -> usize {
        match self {
            Arch::Ffdnn { hidden_layers, .. } => *hidden_layers,
            Arch::Cnn { map_counts, .. } => map_counts.len(),
        }
    }

    pub fn build(&self, rng: &mut Rng) -> Result<Network> {
        let spec = match self {
            Arch::Ffdnn {
                input_dim,
                hidden_units,
                hidden_layers,
                classes,
                dropout,
            } => ffdnn_spec(*input_dim, *hidden_units, *hidden_layers, *classes, *dropout)?,
            Arch::Cnn {
                map_counts,
                input_shape,
                fc_units,
                classes,
            } => cnn_spec(map_counts, *input_shape, *fc_units, *classes)?,
        };
        Network::new(spec, rng)
    }

    /// Same family, different size: `[units]` for an FFDNN, the map list for a CNN.
    pub fn with_width(&self, size: &[usize]) -> Result<Arch> {
        let mut a = self.clone();
        match &mut a {
            Arch::Ffdnn { hidden_units, .. } => match size {
                [u] => *hidden_units = *u,
                _ => {
                    return Err(Error::Config(format!(
                        "ffdnn width must be one unit count, got {size:?}"
                    )))
                }
            },
            Arch::Cnn { map_counts, .. } => *map_counts = size.to_vec(),
        }
        Ok(a)
    }

    /// Same width, different depth. A CNN keeps the last `depth` levels of its
    /// map configuration, so `32-32-64` yields `64`, `32-64`, `32-32-64`.
    pub fn with_depth(&self, depth: usize) -> Result<Arch> {
        let mut a = self.clone();
        match &mut a {
            Arch::Ffdnn { hidden_layers, .. } => *hidden_layers = depth,
            Arch::Cnn { map_counts, .. } => {
                if depth == 0 || depth > map_counts.len() {
                    return Err(Error::Config(format!(
                        "cnn depth {depth} outside 1..={} for maps {}",
                        map_counts.len(),
                        join_maps(map_counts)
                    )));
                }
                *map_counts = map_counts[map_counts.len() - depth..].to_vec();
            }
        }
        Ok(a)
    }
}

fn join_maps(maps: &[usize]) -> String {
    maps.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("-")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub family: Family,
    pub width_or_maps: String,
    pub depth: usize,
    pub mode: QuantMode,
    /// 32 for floating point.
    pub n_bits: u32,
    pub seed: u64,
    /// Weights plus biases.
    pub param_count: u64,
    pub total_weight_bits: u64,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
}

impl SweepRecord {
    fn sort_key(&self) -> (Family, usize, u64, QuantMode, u32, u64) {
        (
            self.family,
            self.depth,
            self.param_count,
            self.mode,
            self.n_bits,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub bits: Vec<u32>,
    pub modes: Vec<QuantMode>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub retrain: TrainConfig,
    /// Worker threads; results do not depend on this.
    pub jobs: usize,
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("sweep needs at least one mode".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        let quantized = self.modes.iter().any(|m| *m != QuantMode::Float);
        if quantized && self.bits.is_empty() {
            return Err(Error::Config("quantized sweep modes need a bit list".into()));
        }
        for &b in &self.bits {
            bits_to_levels(b)?;
        }
        self.train.validate()?;
        self.retrain.validate()
    }

    fn wants(&self, mode: QuantMode) -> bool {
        self.modes.contains(&mode)
    }
}

/// Sweep over sizes of one family; see [`Arch::with_width`].
pub fn run_width_sweep(
    template: &Arch,
    sizes: &[Vec<usize>],
    settings: &SweepSettings,
    data: &DatasetSplit,
) -> Result<Vec<SweepRecord>> {
    let archs = sizes
        .iter()
        .map(|s| template.with_width(s))
        .collect::<Result<Vec<_>>>()?;
    run_sweep(&archs, settings, data)
}

/// Sweep over depths at fixed width; see [`Arch::with_depth`].
pub fn run_depth_sweep(
    template: &Arch,
    depths: &[usize],
    settings: &SweepSettings,
    data: &DatasetSplit,
) -> Result<Vec<SweepRecord>> {
    let archs = depths
        .iter()
        .map(|&d| template.with_depth(d))
        .collect::<Result<Vec<_>>>()?;
    run_sweep(&archs, settings, data)
}

/// Runs every (architecture, seed) pipeline and returns records sorted by key.
pub fn run_sweep(archs: &[Arch], settings: &SweepSettings, data: &DatasetSplit) -> Result<Vec<SweepRecord>> {
    settings.validate()?;
    let points: Vec<(&Arch, u64)> = archs
        .iter()
        .flat_map(|a| settings.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let slots: Vec<Mutex<Option<Result<Vec<SweepRecord>>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= points.len() {
            break;
        }
        let (arch, seed) = points[i];
        *slots[i].lock().unwrap() = Some(run_point(arch, seed, settings, data));
    };
    let jobs = settings.jobs.clamp(1, points.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut records = Vec::new();
    for slot in slots {
        records.extend(slot.into_inner().unwrap().expect("every point ran")?);
    }
    records.sort_by_key(SweepRecord::sort_key);
    Ok(records)
}

fn run_point(arch: &Arch, seed: u64, settings: &SweepSettings, data: &DatasetSplit) -> Result<Vec<SweepRecord>> {
    let net = arch.build(&mut Rng::new(seed))?;
    let train_cfg = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let (float_net, _) = train_float(&net, data, &train_cfg)?;
    let record = |net: &Network, mode: QuantMode, n_bits: u32| -> Result<SweepRecord> {
        Ok(SweepRecord {
            family: arch.family(),
            width_or_maps: arch.width_label(),
            depth: arch.depth(),
            mode,
            n_bits,
            seed,
            param_count: net.param_count() as u64,
            total_weight_bits: count_weight_bits(net, n_bits),
            val_metric: evaluate(net, &data.valid)?,
            test_metric: data.test.as_ref().map(|t| evaluate(net, t)).transpose()?,
        })
    };

    let mut out = Vec::new();
    if settings.wants(QuantMode::Float) {
        out.push(record(&float_net, QuantMode::Float, FLOAT_BITS)?);
    }
    for &bits in &settings.bits {
        if !settings.wants(QuantMode::Direct) && !settings.wants(QuantMode::Retrained) {
            break;
        }
        let (direct, _) = direct_quantize(&float_net, bits, &GroupSelection::All)?;
        if settings.wants(QuantMode::Direct) {
            out.push(record(&direct, QuantMode::Direct, bits)?);
        }
        if settings.wants(QuantMode::Retrained) {
            let cfg = TrainConfig {
                seed,
                ..settings.retrain.clone()
            };
            let (retrained, _) = retrain_quantized(&direct, data, &cfg)?;
            out.push(record(&retrained, QuantMode::Retrained, bits)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    /// Quantized groups, `+`-joined; empty for the float reference.
    pub groups: String,
    pub metric: f64,
}

/// Error rate with only each listed subset of groups direct-quantized, every
/// row starting from the same float weights.
pub fn run_group_sensitivity(
    net: &Network,
    n_bits: u32,
    subsets: &[Vec<String>],
    eval: &Dataset,
) -> Result<Vec<SensitivityRow>> {
    subsets
        .iter()
        .map(|subset| {
            let (q, _) = direct_quantize(net, n_bits, &GroupSelection::Only(subset.clone()))?;
            Ok(SensitivityRow {
                groups: subset.join("+"),
                metric: evaluate(&q, eval)?,
            })
        })
        .collect()
}

/// Float error as a function of parameter count for one family.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatBaselineCurve {
    pub family: Family,
    /// `(param_count, metric)` with strictly increasing parameter counts.
    pub points: Vec<(f64, f64)>,
}

impl FloatBaselineCurve {
    pub fn new(family: Family, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("float baseline curve is empty".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(
                "float baseline parameter counts must be strictly increasing".into(),
            ));
        }
        Ok(Self { family, points })
    }

    /// Median validation error of the float records of `family`, per parameter count.
    pub fn from_records(records: &[SweepRecord], family: Family) -> Result<Self> {
        let mut by_size: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in records
            .iter()
            .filter(|r| r.family == family && r.mode == QuantMode::Float)
        {
            by_size.entry(r.param_count).or_default().push(r.val_metric);
        }
        if by_size.is_empty() {
            return Err(Error::Config(format!(
                "no float baseline records for family {family}; run a sweep that includes mode \"float\""
            )));
        }
        Self::new(
            family,
            by_size.into_iter().map(|(p, v)| (p as f64, median(&v))).collect(),
        )
    }

    /// Cumulative minimum of the metric over increasing size.
    pub fn monotone_envelope(&self) -> Vec<(f64, f64)> {
        let mut best = f64::INFINITY;
        self.points
            .iter()
            .map(|&(p, m)| {
                best = best.min(m);
                (p, best)
            })
            .collect()
    }
}

pub fn baseline_curves(records: &[SweepRecord]) -> Vec<FloatBaselineCurve> {
    [Family::Ffdnn, Family::Cnn]
        .into_iter()
        .filter_map(|f| FloatBaselineCurve::from_records(records, f).ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Interpolate `log2(param_count)` instead of the raw count.
    Log2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams {
    pub params: f64,
    /// The metric fell outside the curve's range and the result was pinned to an end.
    pub clamped: bool,
}

/// Float parameter count that reaches `achieved_metric` on the curve's monotone
/// envelope, interpolated piecewise linearly between neighbouring nodes. On a
/// flat stretch the smallest size wins.
pub fn effective_params(
    curve: &FloatBaselineCurve,
    achieved_metric: f64,
    interp: Interpolation,
) -> Result<EffectiveParams> {
    let env = curve.monotone_envelope();
    let (first, last) = (env[0], env[env.len() - 1]);
    if achieved_metric >= first.1 {
        return Ok(EffectiveParams {
            params: first.0,
            clamped: achieved_metric > first.1,
        });
    }
    if achieved_metric < last.1 {
        return Ok(EffectiveParams {
            params: last.0,
            clamped: true,
        });
    }
    let i = env
        .iter()
        .position(|&(_, m)| m <= achieved_metric)
        .expect("bracketed above");
    let ((p0, m0), (p1, m1)) = (env[i - 1], env[i]);
    if m1 == achieved_metric {
        return Ok(EffectiveParams {
            params: p1,
            clamped: false,
        });
    }
    let t = (m0 - achieved_metric) / (m0 - m1);
    let params = match interp {
        Interpolation::Linear => p0 + t * (p1 - p0),
        Interpolation::Log2 => (p0.log2() + t * (p1.log2() - p0.log2())).exp2(),
    };
    Ok(EffectiveParams { params, clamped: false })
}

/// `effective_params · 32 / compressed_bits`.
pub fn ecr_ratio(effective_params: f64, compressed_bits: u64) -> Result<f64> {
    if compressed_bits == 0 {
        return Err(Error::Config("compressed size is zero bits".into()));
    }
    Ok(effective_params * FLOAT_BITS as f64 / compressed_bits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcrRow {
    pub record: SweepRecord,
    pub effective_params: f64,
    pub effective_bits: f64,
    pub ecr: f64,
    pub clamped: bool,
}

pub fn ecr(record: &SweepRecord, curve: &FloatBaselineCurve, interp: Interpolation) -> Result<EcrRow> {
    if record.mode == QuantMode::Float {
        return Err(Error::Config("ECR is defined for quantized records only".into()));
    }
    if record.family != curve.family {
        return Err(Error::Config(format!(
            "record family {} does not match the {} baseline",
            record.family, curve.family
        )));
    }
    let eff = effective_params(curve, record.val_metric, interp)?;
    Ok(EcrRow {
        record: record.clone(),
        effective_params: eff.params,
        effective_bits: eff.params * FLOAT_BITS as f64,
        ecr: ecr_ratio(eff.params, record.total_weight_bits)?,
        clamped: eff.clamped,
    })
}

/// ECR for every non-float record against its family's curve.
pub fn ecr_rows(records: &[SweepRecord], curves: &[FloatBaselineCurve], interp: Interpolation) -> Result<Vec<EcrRow>> {
    records
        .iter()
        .filter(|r| r.mode != QuantMode::Float)
        .map(|r| {
            let curve = curves.iter().find(|c| c.family == r.family).ok_or_else(|| {
                Error::Config(format!(
                    "no float baseline for family {}; run a sweep that includes mode \"float\"",
                    r.family
                ))
            })?;
            ecr(r, curve, interp)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seed-median of one (architecture, mode, bits) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub family: Family,
    pub width_or_maps: String,
    pub depth: usize,
    pub mode: QuantMode,
    pub n_bits: u32,
    pub param_count: u64,
    pub total_weight_bits: u64,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
    pub seeds: usize,
}

pub fn aggregate(records: &[SweepRecord]) -> Vec<Aggregate> {
    let mut cells: Vec<(Aggregate, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        let pos = cells.iter().position(|(a, _, _)| {
            a.family == r.family
                && a.width_or_maps == r.width_or_maps
                && a.depth == r.depth
                && a.mode == r.mode
                && a.n_bits == r.n_bits
        });
        let i = pos.unwrap_or_else(|| {
            cells.push((
                Aggregate {
                    family: r.family,
                    width_or_maps: r.width_or_maps.clone(),
                    depth: r.depth,
                    mode: r.mode,
                    n_bits: r.n_bits,
                    param_count: r.param_count,
                    total_weight_bits: r.total_weight_bits,
                    val_metric: 0.0,
                    test_metric: None,
                    seeds: 0,
                },
                Vec::new(),
                Vec::new(),
            ));
            cells.len() - 1
        });
        let cell = &mut cells[i];
        cell.1.push(r.val_metric);
        if let Some(t) = r.test_metric {
            cell.2.push(t);
        }
    }
    cells
        .into_iter()
        .map(|(mut a, v, t)| {
            a.seeds = v.len();
            a.val_metric = median(&v);
            a.test_metric = (!t.is_empty()).then(|| median(&t));
            a
        })
        .collect()
}

pub const RECORDS_HEADER: &str =
    "family,width_or_maps,depth,mode,n_bits,seed,param_count,total_weight_bits,val_metric,test_metric";
pub const ECR_HEADER: &str = "family,width_or_maps,depth,mode,n_bits,seed,param_count,total_weight_bits,\
val_metric,test_metric,effective_params,effective_bits,ecr,clamped";
pub const DEPTH_TABLE_HEADER: &str = "family,width_or_maps,depth,float_metric,levels,direct,retrained,difference";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn record_fields(r: &SweepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.family,
        r.width_or_maps,
        r.depth,
        r.mode,
        r.n_bits,
        r.seed,
        r.param_count,
        r.total_weight_bits,
        r.val_metric,
        opt(r.test_metric)
    )
}

pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        s.push_str(&record_fields(r));
        s.push('\n');
    }
    s
}

pub fn parse_records_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        Some((_, h)) => return Err(Error::Format(format!("records.csv header mismatch: {h:?}"))),
        None => return Err(Error::Format("records.csv is empty".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Format(format!(
                "records.csv line {lineno}: expected 10 fields, found {}",
                f.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| Error::Format(format!("records.csv line {lineno}: bad number {:?}", f[k])))
        };
        let int = |k: usize| -> Result<u64> {
            f[k].parse()
                .map_err(|_| Error::Format(format!("records.csv line {lineno}: bad integer {:?}", f[k])))
        };
        out.push(SweepRecord {
            family: f[0].parse()?,
            width_or_maps: f[1].to_string(),
            depth: int(2)? as usize,
            mode: f[3].parse()?,
            n_bits: int(4)? as u32,
            seed: int(5)?,
            param_count: int(6)?,
            total_weight_bits: int(7)?,
            val_metric: num(8)?,
            test_metric: if f[9].is_empty() { None } else { Some(num(9)?) },
        });
    }
    Ok(out)
}

pub fn ecr_to_csv(rows: &[EcrRow]) -> String {
    let mut s = format!("{ECR_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            record_fields(&r.record),
            r.effective_params,
            r.effective_bits,
            r.ecr,
            r.clamped
        );
    }
    s
}

/// One row of the direct / retrained / difference layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTableRow {
    pub family: Family,
    pub width_or_maps: String,
    pub depth: usize,
    pub float_metric: f64,
    pub levels: u32,
    pub direct: Option<f64>,
    pub retrained: Option<f64>,
    /// Retrained minus float.
    pub difference: Option<f64>,
}

pub fn depth_table(records: &[SweepRecord]) -> Vec<DepthTableRow> {
    let aggs = aggregate(records);
    let mut rows = Vec::new();
    for f in aggs.iter().filter(|a| a.mode == QuantMode::Float) {
        let same = |a: &&Aggregate| a.family == f.family && a.width_or_maps == f.width_or_maps && a.depth == f.depth;
        let mut bits: Vec<u32> = aggs
            .iter()
            .filter(same)
            .filter(|a| a.mode != QuantMode::Float)
            .map(|a| a.n_bits)
            .collect();
        bits.sort_unstable();
        bits.dedup();
        for b in bits {
            let metric = |mode| {
                aggs.iter()
                    .filter(same)
                    .find(|a| a.mode == mode && a.n_bits == b)
                    .map(|a| a.val_metric)
            };
            let retrained = metric(QuantMode::Retrained);
            rows.push(DepthTableRow {
                family: f.family,
                width_or_maps: f.width_or_maps.clone(),
                depth: f.depth,
                float_metric: f.val_metric,
                levels: bits_to_levels(b).unwrap_or(0),
                direct: metric(QuantMode::Direct),
                retrained,
                difference: retrained.map(|r| r - f.val_metric),
            });
        }
    }
    rows
}

fn depth_table_csv(rows: &[DepthTableRow]) -> String {
    let mut s = format!("{DEPTH_TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.family,
            r.width_or_maps,
            r.depth,
            r.float_metric,
            r.levels,
            opt(r.direct),
            opt(r.retrained),
            opt(r.difference)
        );
    }
    s
}

/// Retrained bit width with the highest median ECR, per architecture.
pub fn best_ecr_bits(rows: &[EcrRow], mode: QuantMode) -> Vec<(Family, String, usize, u32, f64)> {
    let mut cells: BTreeMap<(Family, usize, u64, String), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.record.mode == mode) {
        let rec = &r.record;
        cells
            .entry((rec.family, rec.depth, rec.param_count, rec.width_or_maps.clone()))
            .or_default()
            .entry(rec.n_bits)
            .or_default()
            .push(r.ecr);
    }
    cells
        .into_iter()
        .filter_map(|((fam, depth, _, w), by_bits)| {
            by_bits
                .into_iter()
                .map(|(b, v)| (b, median(&v)))
                .fold(None, |best: Option<(u32, f64)>, (b, e)| match best {
                    Some((_, be)) if be >= e => best,
                    _ => Some((b, e)),
                })
                .map(|(b, e)| (fam, w, depth, b, e))
        })
        .collect()
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "–".into(), |x| format!("{x:.2}%"))
}

fn summary_markdown(records: &[SweepRecord], table: &[DepthTableRow], ecr: &[EcrRow]) -> String {
    let mut s = String::from("# Quantization sweep summary\n\n");
    let _ = writeln!(s, "{} records, {} quantized.\n", records.len(), ecr.len());
    s.push_str("## Error rate by architecture and precision (validation, seed median)\n\n");
    s.push_str("| Architecture (float result) | # Quantization levels | Direct | Retraining | Difference |\n");
    s.push_str("|---|---|---|---|---|\n");
    for r in table {
        let _ = writeln!(
            s,
            "| {} {} depth {} ({:.2}%) | {}-level | {} | {} | {} |",
            r.family,
            r.width_or_maps,
            r.depth,
            r.float_metric,
            r.levels,
            fmt_pct(r.direct),
            fmt_pct(r.retrained),
            fmt_pct(r.difference)
        );
    }
    for mode in [QuantMode::Direct, QuantMode::Retrained] {
        let best = best_ecr_bits(ecr, mode);
        if best.is_empty() {
            continue;
        }
        let _ = writeln!(s, "\n## Best bit width by median ECR ({mode})\n");
        s.push_str("| Architecture | Bits | ECR |\n|---|---|---|\n");
        for (fam, w, d, b, e) in best {
            let _ = writeln!(s, "| {fam} {w} depth {d} | {b} | {e:.3} |");
        }
    }
    s
}

/// Report file names written by [`emit_report`].
pub const REPORT_FILES: [&str; 8] = [
    "records.csv",
    "ecr.csv",
    "table_depth.csv",
    "plot_width_error.csv",
    "plot_bits_error.csv",
    "plot_effective_params.csv",
    "plot_ecr.csv",
    "summary.md",
];

/// Writes records, ECR rows, plot series and the Markdown summary into `out_dir`.
pub fn emit_report(
    records: &[SweepRecord],
    curves: &[FloatBaselineCurve],
    interp: Interpolation,
    out_dir: &Path,
) -> Result<()> {
    let ecr = ecr_rows(records, curves, interp)?;
    let table = depth_table(records);
    let aggs = aggregate(records);

    let mut width = String::from("family,width_or_maps,depth,param_count,mode,n_bits,val_metric,test_metric\n");
    let mut bits = String::from("family,width_or_maps,depth,mode,n_bits,total_weight_bits,val_metric\n");
    for a in &aggs {
        let _ = writeln!(
            width,
            "{},{},{},{},{},{},{},{}",
            a.family,
            a.width_or_maps,
            a.depth,
            a.param_count,
            a.mode,
            a.n_bits,
            a.val_metric,
            opt(a.test_metric)
        );
        let _ = writeln!(
            bits,
            "{},{},{},{},{},{},{}",
            a.family, a.width_or_maps, a.depth, a.mode, a.n_bits, a.total_weight_bits, a.val_metric
        );
    }

    let mut eff = String::from("family,series,param_count,val_metric\n");
    for c in curves {
        for &(p, m) in &c.points {
            let _ = writeln!(eff, "{},float,{p},{m}", c.family);
        }
        for (p, m) in c.monotone_envelope() {
            let _ = writeln!(eff, "{},envelope,{p},{m}", c.family);
        }
    }
    for r in &ecr {
        let _ = writeln!(
            eff,
            "{},{}-{}bit-{},{},{}",
            r.record.family,
            r.record.mode,
            r.record.n_bits,
            r.record.width_or_maps,
            r.effective_params,
            r.record.val_metric
        );
    }

    let mut ecr_plot = String::from("family,width_or_maps,depth,mode,n_bits,ecr\n");
    let mut cells: Vec<((Family, String, usize, QuantMode, u32), Vec<f64>)> = Vec::new();
    for r in &ecr {
        let k = (
            r.record.family,
            r.record.width_or_maps.clone(),
            r.record.depth,
            r.record.mode,
            r.record.n_bits,
        );
        match cells.iter_mut().find(|(key, _)| *key == k) {
            Some((_, v)) => v.push(r.ecr),
            None => cells.push((k, vec![r.ecr])),
        }
    }
    for ((f, w, d, m, b), v) in &cells {
        let _ = writeln!(ecr_plot, "{f},{w},{d},{m},{b},{}", median(v));
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let contents = [
        records_to_csv(records),
        ecr_to_csv(&ecr),
        depth_table_csv(&table),
        width,
        bits,
        eff,
        ecr_plot,
        summary_markdown(records, &table, &ecr),
    ];
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
