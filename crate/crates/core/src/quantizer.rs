//! Uniform symmetric weight quantizer with a per-group L2-optimal step size.
//!
//! A quantizer with `M` (odd) levels and step `Δ` maps a weight onto
//! `{-(M-1)/2·Δ, …, -Δ, 0, Δ, …, (M-1)/2·Δ}`:
//!
//! ```text
//! Q(w) = sgn(w) · Δ · min(⌊|w|/Δ + 0.5⌋, (M-1)/2)
//! ```
//!
//! Halfway points round away from zero because rounding happens on `|w|`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;

const MAX_ITERATIONS: usize = 100;
const REL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    levels: u32,
    delta: f64,
}

impl QuantizerSpec {
    pub fn new(levels: u32, delta: f64) -> Result<Self> {
        check_levels(levels)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!(
                "quantization step must be positive and finite, got {delta}"
            )));
        }
        Ok(Self { levels, delta })
    }

    /// Number of quantization levels `M`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Step size `Δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest code magnitude, `(M-1)/2`.
    pub fn max_code(&self) -> i32 {
        (self.levels as i32 - 1) / 2
    }

    /// All representable values in ascending order.
    pub fn grid(&self) -> Vec<f64> {
        let m = self.max_code();
        (-m..=m).map(|k| self.value_of(k)).collect()
    }

    /// Reconstruction value of an integer code.
    pub fn value_of(&self, code: i32) -> f64 {
        code as f64 * self.delta
    }

    /// Whether `w` is exactly one of the representable values.
    pub fn on_grid(&self, w: f64) -> bool {
        let k = (w.abs() / self.delta).round();
        k <= self.max_code() as f64 && self.value_of(k as i32 * sgn(w) as i32) == w
    }
}

fn check_levels(levels: u32) -> Result<()> {
    if levels < 3 || levels.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "quantization levels must be odd and at least 3, got {levels}"
        )));
    }
    if levels > 255 {
        return Err(Error::Config(format!(
            "at most 255 quantization levels are supported, got {levels}"
        )));
    }
    Ok(())
}

fn sgn(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Code magnitude `min(⌊|w|/Δ + 0.5⌋, (M-1)/2)` and whether it saturated.
fn magnitude(w: f64, delta: f64, max_code: i32) -> (f64, bool) {
    let k = (w.abs() / delta + 0.5).floor();
    let cap = max_code as f64;
    if k > cap {
        (cap, true)
    } else {
        (k, false)
    }
}

/// Quantizes one weight.
pub fn apply(w: f64, spec: &QuantizerSpec) -> f64 {
    let (k, _) = magnitude(w, spec.delta, spec.max_code());
    sgn(w) * spec.delta * k
}

/// Signed integer code of one weight; `apply(w) == code(w) as f64 * Δ`.
pub fn code(w: f64, spec: &QuantizerSpec) -> i32 {
    let (k, _) = magnitude(w, spec.delta, spec.max_code());
    sgn(w) as i32 * k as i32
}

/// Half the summed squared quantization error over a weight group.
pub fn l2_error(weights: &[f64], spec: &QuantizerSpec) -> f64 {
    0.5 * weights
        .iter()
        .map(|&w| {
            let e = apply(w, spec) - w;
            e * e
        })
        .sum::<f64>()
}

/// Bit width to level count: `2^n - 1`, so 2 bits give a ternary grid.
pub fn bits_to_levels(n_bits: u32) -> Result<u32> {
    if !(2..=8).contains(&n_bits) {
        return Err(Error::Config(format!(
            "bit width must be between 2 and 8, got {n_bits}"
        )));
    }
    Ok((1u32 << n_bits) - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub group: String,
    pub levels: u32,
    pub delta: f64,
    pub l2_error: f64,
    pub iterations: usize,
    pub saturated_fraction: f64,
    /// Set when every weight was zero and `Δ` fell back to 1.
    pub degenerate: bool,
}

impl QuantizationReport {
    pub fn spec(&self) -> QuantizerSpec {
        QuantizerSpec {
            levels: self.levels,
            delta: self.delta,
        }
    }
}

/// Finds the step size minimizing the L2 quantization error of `weights`.
///
/// Alternates between assigning codes for the current step and solving the
/// least-squares step for the fixed codes, `Δ = Σ q·w / Σ q²`, starting from
/// `Δ₀ = 2·max|w|/(M-1)`. Neither half-step can raise the error. Stops when the
/// relative change in `Δ` drops below 1e-8 or after 100 rounds.
///
/// Small groups can leave that descent in a poor local minimum, so the same
/// descent is also run from the exact global minimizer found by
/// [`breakpoint_sweep`], and the lower-error result is kept.
pub fn optimize_delta(weights: &[f64], levels: u32) -> Result<QuantizationReport> {
    check_levels(levels)?;
    if weights.is_empty() {
        return Err(Error::Config("cannot quantize an empty weight group".into()));
    }
    let max_code = (levels as i32 - 1) / 2;
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max_abs == 0.0 {
        return Ok(QuantizationReport {
            group: String::new(),
            levels,
            delta: 1.0,
            l2_error: 0.0,
            iterations: 0,
            saturated_fraction: 0.0,
            degenerate: true,
        });
    }

    let error_at = |delta: f64| l2_error(weights, &QuantizerSpec { levels, delta });
    let (mut delta, mut iterations) = alternate(weights, 2.0 * max_abs / (levels - 1) as f64, max_code);
    let mut error = error_at(delta);
    let (swept, swept_iterations) = alternate(weights, breakpoint_sweep(weights, max_code), max_code);
    let swept_error = error_at(swept);
    if swept_error < error {
        (delta, iterations, error) = (swept, swept_iterations, swept_error);
    }

    let saturated = weights.iter().filter(|&&w| magnitude(w, delta, max_code).1).count();
    Ok(QuantizationReport {
        group: String::new(),
        levels,
        delta,
        l2_error: error,
        iterations,
        saturated_fraction: saturated as f64 / weights.len() as f64,
        degenerate: false,
    })
}

/// Code assignment / least-squares step alternation from `delta`.
fn alternate(weights: &[f64], mut delta: f64, max_code: i32) -> (f64, usize) {
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut qw, mut qq) = (0.0, 0.0);
        for &w in weights {
            let (k, _) = magnitude(w, delta, max_code);
            qw += k * w.abs();
            qq += k * k;
        }
        if qq == 0.0 {
            break;
        }
        let next = qw / qq;
        let change = (next - delta).abs() / delta;
        delta = next;
        if change < REL_TOLERANCE {
            break;
        }
    }
    (delta, iterations)
}

#[derive(PartialEq)]
struct Breakpoint {
    at: f64,
    level: usize,
    index: usize,
}

impl Eq for Breakpoint {}

impl Ord for Breakpoint {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.at.total_cmp(&other.at)
    }
}

impl PartialOrd for Breakpoint {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Global minimizer of the quantization error over `Δ > 0`.
///
/// A weight's code steps from `k` to `k+1` once `Δ ≤ |w|/(k+0.5)`. Between
/// consecutive breakpoints the codes are fixed and the error is the quadratic
/// `½(Σw² − 2ΔΣq|w| + Δ²Σq²)`, minimized in closed form and clamped to the
/// interval. Breakpoints are visited in decreasing order by merging the
/// `(M-1)/2` scaled copies of the sorted magnitudes.
fn breakpoint_sweep(weights: &[f64], max_code: i32) -> f64 {
    let mut mags: Vec<f64> = weights.iter().map(|w| w.abs()).filter(|&a| a > 0.0).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let sum_sq: f64 = mags.iter().map(|a| a * a).sum();
    let levels = max_code as usize;
    let mut heap: std::collections::BinaryHeap<Breakpoint> = (0..levels)
        .map(|level| Breakpoint {
            at: mags[0] / (level as f64 + 0.5),
            level,
            index: 0,
        })
        .collect();

    let (mut qa, mut qq) = (0.0, 0.0);
    let (mut best_delta, mut best_error) = (f64::NAN, f64::INFINITY);
    while let Some(bp) = heap.pop() {
        let a = mags[bp.index];
        let k = bp.level as f64;
        qa += a;
        qq += 2.0 * k + 1.0;
        if bp.index + 1 < mags.len() {
            heap.push(Breakpoint {
                at: mags[bp.index + 1] / (k + 0.5),
                index: bp.index + 1,
                ..bp
            });
        }
        let lower = heap.peek().map_or(0.0, |next| next.at);
        if lower == bp.at {
            continue;
        }
        let delta = (qa / qq).clamp(lower, bp.at);
        if delta > 0.0 {
            let error = sum_sq - 2.0 * delta * qa + delta * delta * qq;
            if error < best_error {
                (best_delta, best_error) = (delta, error);
            }
        }
    }
    best_delta
}

/// Which weight groups a quantization pass touches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum GroupSelection {
    #[default]
    All,
    Only(Vec<String>),
}

impl GroupSelection {
    pub fn only<S: AsRef<str>>(names: &[S]) -> Self {
        GroupSelection::Only(names.iter().map(|s| s.as_ref().to_string()).collect())
    }

    pub fn includes(&self, name: &str) -> bool {
        match self {
            GroupSelection::All => true,
            GroupSelection::Only(names) => names.iter().any(|n| n == name),
        }
    }
}

/// Quantizes the selected weight groups of a trained network.
///
/// Each selected group gets its own optimized step; its pre-quantization weights
/// are kept as the shadow copy for retraining. Biases and unselected groups are
/// left untouched.
pub fn direct_quantize(
    net: &Network,
    n_bits: u32,
    selection: &GroupSelection,
) -> Result<(Network, Vec<QuantizationReport>)> {
    let levels = bits_to_levels(n_bits)?;
    if let GroupSelection::Only(names) = selection {
        for name in names {
            if net.group_index(name).is_none() {
                return Err(Error::Config(format!(
                    "unknown weight group {name:?}; network has {:?}",
                    net.group_names()
                )));
            }
        }
    }

    let mut out = net.clone();
    let mut reports = Vec::new();
    for group in out.groups_mut() {
        if !selection.includes(&group.name) {
            continue;
        }
        let mut report = optimize_delta(group.weights.data(), levels)?;
        report.group = group.name.clone();
        let spec = report.spec();
        let float = group.weights.clone();
        for w in group.weights.data_mut() {
            *w = apply(*w, &spec);
        }
        group.shadow_weights = Some(float);
        group.quantizer = Some(spec);
        reports.push(report);
    }
    Ok((out, reports))
}

pub const REPORT_HEADER: &str = "group,M,delta,l2_error,iterations,saturated_fraction";

/// One CSV row per group, preceded by [`REPORT_HEADER`].
pub fn reports_to_csv(reports: &[QuantizationReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.group, r.levels, r.delta, r.l2_error, r.iterations, r.saturated_fraction
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_ffdnn;
    use crate::rng::Rng;

    fn spec(levels: u32, delta: f64) -> QuantizerSpec {
        QuantizerSpec::new(levels, delta).unwrap()
    }

    #[test]
    fn apply_hand_values() {
        let s = spec(3, 0.1);
        assert_eq!(apply(0.0, &s), 0.0);
        assert_eq!(apply(0.07, &s), 0.1);
        assert_eq!(apply(0.04, &s), 0.0);
        assert_eq!(apply(-0.35, &s), -0.1);
        assert_eq!(apply(0.35, &spec(7, 0.1)), 0.30000000000000004);
        assert_eq!(code(-0.35, &spec(7, 0.1)), -3);
    }

    #[test]
    fn halfway_rounds_away_from_zero() {
        let s = spec(7, 1.0);
        assert_eq!(apply(0.5, &s), 1.0);
        assert_eq!(apply(-0.5, &s), -1.0);
        assert_eq!(apply(1.5, &s), 2.0);
        assert_eq!(apply(-2.5, &s), -3.0);
    }

    #[test]
    fn spec_rejects_bad_levels_and_steps() {
        assert!(QuantizerSpec::new(4, 0.1).is_err());
        assert!(QuantizerSpec::new(1, 0.1).is_err());
        assert!(QuantizerSpec::new(3, 0.0).is_err());
        assert!(QuantizerSpec::new(3, f64::NAN).is_err());
    }

    #[test]
    fn grid_and_membership() {
        let s = spec(7, 0.25);
        assert_eq!(s.grid(), vec![-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75]);
        assert!(s.on_grid(-0.5));
        assert!(!s.on_grid(0.3));
        assert!(!s.on_grid(1.0));
    }

    #[test]
    fn bits_to_levels_table() {
        assert_eq!(bits_to_levels(2).unwrap(), 3);
        assert_eq!(bits_to_levels(3).unwrap(), 7);
        assert_eq!(bits_to_levels(4).unwrap(), 15);
        assert_eq!(bits_to_levels(8).unwrap(), 255);
        assert!(bits_to_levels(1).is_err());
        assert!(bits_to_levels(9).is_err());
    }

    #[test]
    fn optimize_exact_fits() {
        let r = optimize_delta(&[-1.0, 1.0], 3).unwrap();
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.l2_error, 0.0);
        let r = optimize_delta(&[0.3; 17], 3).unwrap();
        assert!((r.delta - 0.3).abs() < 1e-15);
        assert!(r.l2_error < 1e-30);
    }

    #[test]
    fn optimize_all_zero_is_degenerate() {
        let r = optimize_delta(&[0.0; 5], 3).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.l2_error, 0.0);
        assert!(optimize_delta(&[], 3).is_err());
        assert!(optimize_delta(&[1.0], 4).is_err());
    }

    #[test]
    fn optimize_never_worse_than_initial_step() {
        let mut rng = Rng::new(12);
        for levels in [3, 7, 15] {
            let w: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
            let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let init = spec(levels, 2.0 * max / (levels - 1) as f64);
            let r = optimize_delta(&w, levels).unwrap();
            assert!(r.l2_error <= l2_error(&w, &init));
            assert!((r.l2_error - l2_error(&w, &r.spec())).abs() == 0.0);
            assert!((0.0..=1.0).contains(&r.saturated_fraction));
        }
    }

    #[test]
    fn gaussian_ternary_step_near_grid_search() {
        let mut rng = Rng::new(2024);
        let w: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let res = 1e-4 * max;
        let (mut best_d, mut best_e) = (0.0, f64::INFINITY);
        let mut d = res;
        while d <= 4.0 * max / 2.0 {
            let e = l2_error(&w, &spec(3, d));
            if e < best_e {
                best_e = e;
                best_d = d;
            }
            d += res;
        }
        let r = optimize_delta(&w, 3).unwrap();
        assert!((r.delta - best_d).abs() / best_d < 5e-3, "{} vs {}", r.delta, best_d);
        assert!(r.l2_error <= best_e * (1.0 + 5e-3));
    }

    #[test]
    fn breakpoint_sweep_is_the_global_minimum() {
        let mut rng = Rng::new(77);
        for n in [1, 2, 3, 5, 10, 17] {
            for levels in [3, 7, 15] {
                let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let swept = breakpoint_sweep(&w, (levels as i32 - 1) / 2);
                let e = l2_error(&w, &spec(levels, swept));
                for i in 1..=20_000 {
                    let d = i as f64 * 1e-4 * max;
                    assert!(
                        e <= l2_error(&w, &spec(levels, d)) * (1.0 + 1e-9) + 1e-15,
                        "n={n} M={levels} Δ={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn small_groups_escape_poor_local_minima() {
        // codes from the max-based start settle 14% above the optimum here
        let mut rng = Rng::new(1001);
        let w: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let (descent, _) = alternate(&w, 2.0 * w.iter().fold(0.0f64, |m, x| m.max(x.abs())) / 14.0, 7);
        let r = optimize_delta(&w, 15).unwrap();
        assert!(r.l2_error < l2_error(&w, &spec(15, descent)));
    }

    #[test]
    fn direct_quantize_only_touches_selected_groups() {
        let mut rng = Rng::new(1);
        let net = build_ffdnn(4, 8, 2, 3, &mut rng).unwrap();
        let (q, reports) = direct_quantize(&net, 2, &GroupSelection::only(&["In-h1"])).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].group, "In-h1");
        for (a, b) in net.groups().iter().zip(q.groups()) {
            assert_eq!(a.bias, b.bias);
            if a.name == "In-h1" {
                let s = b.quantizer.unwrap();
                assert!(b.weights.data().iter().all(|&w| s.on_grid(w)));
                assert_eq!(b.shadow_weights.as_ref(), Some(&a.weights));
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn direct_quantize_all_groups_ternary() {
        let mut rng = Rng::new(2);
        let net = build_ffdnn(4, 8, 2, 3, &mut rng).unwrap();
        let (q, reports) = direct_quantize(&net, 2, &GroupSelection::All).unwrap();
        assert_eq!(reports.len(), 3);
        for g in q.groups() {
            let d = g.quantizer.unwrap().delta();
            assert!(g.weights.data().iter().all(|&w| w == 0.0 || w == d || w == -d));
        }
        let again = direct_quantize(&net, 2, &GroupSelection::All).unwrap();
        assert_eq!(again.0, q);
    }

    #[test]
    fn direct_quantize_unknown_group() {
        let mut rng = Rng::new(3);
        let net = build_ffdnn(4, 8, 1, 3, &mut rng).unwrap();
        let err = direct_quantize(&net, 2, &GroupSelection::only(&["h7-h8"])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn report_csv_layout() {
        let r = optimize_delta(&[-1.0, 1.0], 3).unwrap();
        let csv = reports_to_csv(&[QuantizationReport {
            group: "C1".into(),
            ..r
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        assert_eq!(lines.next(), Some("C1,3,1,0,1,0"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_spec() -> impl Strategy<Value = QuantizerSpec> {
            (1u32..20, 1e-3f64..10.0).prop_map(|(h, d)| spec(2 * h + 1, d))
        }

        proptest! {
            #[test]
            fn idempotent_and_bounded(w in -100.0f64..100.0, s in arb_spec()) {
                let q = apply(w, &s);
                prop_assert_eq!(apply(q, &s), q);
                prop_assert!(q.abs() <= s.delta() * s.max_code() as f64);
                prop_assert!(s.on_grid(q));
                prop_assert_eq!(q, -apply(-w, &s));
                prop_assert_eq!(q, code(w, &s) as f64 * s.delta());
            }

            #[test]
            fn error_bounded_in_range(u in -1.0f64..1.0, s in arb_spec()) {
                let reach = s.delta() * s.max_code() as f64 + s.delta() / 2.0;
                let w = u * reach;
                prop_assert!((apply(w, &s) - w).abs() <= s.delta() / 2.0 * (1.0 + 1e-12));
            }
        }
    }
}
