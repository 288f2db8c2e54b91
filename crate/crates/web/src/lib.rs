//! Browser bindings for the static page in `www/`.
//!
//! Every export returns a JSON string; failures come back as `{"error": "..."}`.

use quantbench::data::{make_synthetic, Dataset, SyntheticKind, SyntheticSpec};
use quantbench::experiments::{ecr_ratio, effective_params, Family, FloatBaselineCurve, Interpolation};
use quantbench::nn::{count_weight_bits, ffdnn_spec, Network};
use quantbench::quantizer::{
    apply, bits_to_levels, code, direct_quantize, l2_error, optimize_delta, GroupSelection, QuantizerSpec,
};
use quantbench::trainer::{evaluate, retrain_quantized, train_float, TrainConfig};
use quantbench::{Result, Rng, Tensor};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn sample_weights(distribution: &str, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let draw = |r: &mut Rng| match distribution {
        "gaussian" => 0.1 * r.normal(),
        "uniform" => r.uniform_range(-0.2, 0.2),
        // Laplace by inverse CDF.
        _ => {
            let u = r.uniform_range(-0.5, 0.5);
            -0.07 * u.signum() * (1.0 - 2.0 * u.abs()).max(1e-12).ln()
        }
    };
    if !["gaussian", "uniform", "laplace"].contains(&distribution) {
        return Err(quantbench::Error::Usage(format!(
            "unknown distribution {distribution:?}; use gaussian, uniform or laplace"
        )));
    }
    Ok((0..n).map(|_| draw(rng)).collect())
}

/// Draws `n` weights, fits the step size for `bits`, and returns the weights,
/// their quantized values, the fitted step and the error curve `E(Δ)` over
/// `[0.05, 2] × Δ*` so the page can show where the optimum sits.
#[wasm_bindgen]
pub fn quantize_sample(distribution: &str, n: usize, bits: u32, seed: u64) -> String {
    respond((|| {
        let mut rng = Rng::new(seed);
        let weights = sample_weights(distribution, n.clamp(1, 20_000), &mut rng)?;
        let levels = bits_to_levels(bits)?;
        let report = optimize_delta(&weights, levels)?;
        let spec = report.spec();
        let quantized: Vec<f64> = weights.iter().map(|&w| apply(w, &spec)).collect();
        let mut histogram = vec![0usize; levels as usize];
        let max_code = (levels as i32 - 1) / 2;
        for &w in &weights {
            histogram[(code(w, &spec) + max_code) as usize] += 1;
        }
        let curve = (1..=80)
            .map(|i| {
                let delta = report.delta * (0.05 + 1.95 * i as f64 / 80.0);
                Ok([delta, l2_error(&weights, &QuantizerSpec::new(levels, delta)?)])
            })
            .collect::<Result<Vec<[f64; 2]>>>()?;
        Ok(json!({
            "levels": levels,
            "delta": report.delta,
            "l2_error": report.l2_error,
            "iterations": report.iterations,
            "saturated_fraction": report.saturated_fraction,
            "weights": weights,
            "quantized": quantized,
            "histogram": histogram,
            "error_curve": curve,
        }))
    })())
}

/// Effective compression ratio of a quantized model.
///
/// `baseline` holds one `params,error%` pair per line for the float models.
#[wasm_bindgen]
pub fn ecr_calculator(baseline: &str, achieved_metric: f64, params: usize, bits: u32, log2: bool) -> String {
    respond((|| {
        let mut points = Vec::new();
        for (i, line) in baseline.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parsed: Option<(f64, f64)> = line
                .split_once(',')
                .and_then(|(p, m)| Some((p.trim().parse().ok()?, m.trim().parse().ok()?)));
            let p = parsed.ok_or_else(|| {
                quantbench::Error::Format(format!(
                    "baseline line {}: expected `params,error`, got {line:?}",
                    i + 1
                ))
            })?;
            points.push(p);
        }
        let curve = FloatBaselineCurve::new(Family::Ffdnn, points)?;
        let interp = if log2 {
            Interpolation::Log2
        } else {
            Interpolation::Linear
        };
        let eff = effective_params(&curve, achieved_metric, interp)?;
        let compressed = params as u64 * bits as u64;
        Ok(json!({
            "effective_params": eff.params,
            "clamped": eff.clamped,
            "effective_bits": eff.params * 32.0,
            "compressed_bits": compressed,
            "ecr": ecr_ratio(eff.params, compressed)?,
            "envelope": curve.monotone_envelope(),
        }))
    })())
}

const GRID: usize = 48;

fn shuffled(ds: &Dataset, rng: &mut Rng) -> Result<Dataset> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let labels = order.iter().map(|&i| ds.labels[i]).collect();
    Dataset::new(ds.features.select_rows(&order), labels, ds.class_count)
}

fn decision_grid(net: &Network) -> Result<Vec<usize>> {
    let mut pts = Vec::with_capacity(GRID * GRID * 2);
    for row in 0..GRID {
        for col in 0..GRID {
            pts.push(-1.2 + 2.4 * (col as f64 + 0.5) / GRID as f64);
            pts.push(1.2 - 2.4 * (row as f64 + 0.5) / GRID as f64);
        }
    }
    let probs = net.predict(&Tensor::new(vec![GRID * GRID, 2], pts)?)?;
    Ok(quantbench::nn::argmax_rows(&probs))
}

/// Trains a small float network on 3-class spirals, quantizes it to `bits`,
/// retrains it, and returns test error plus a class map for each stage.
#[wasm_bindgen]
pub fn spirals_demo(hidden_units: usize, bits: u32, epochs: usize, seed: u64) -> String {
    respond((|| {
        let mut rng = Rng::new(seed);
        let all = make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::Spirals { noise: 0.04 },
            n: 900,
            classes: 3,
            seed,
        })?;
        let all = shuffled(&all, &mut rng)?;
        let split = all.split(600, 150)?;
        let spec = ffdnn_spec(2, hidden_units.clamp(2, 256), 2, 3, 0.0)?;
        let net = Network::new(spec, &mut rng)?;
        let cfg = TrainConfig {
            batch_size: 32,
            lr_init: 1e-2,
            max_epochs: epochs.clamp(1, 400),
            patience: 20,
            seed,
            ..TrainConfig::default()
        };
        let (float_net, _) = train_float(&net, &split, &cfg)?;
        let (direct, reports) = direct_quantize(&float_net, bits, &GroupSelection::All)?;
        let (retrained, _) = retrain_quantized(&direct, &split, &cfg.for_retraining())?;
        let test = split.test.as_ref().expect("split leaves a test tail");
        let mut stages = Vec::new();
        for (name, n, bits_per_weight) in [
            ("float", &float_net, 32),
            ("direct", &direct, bits),
            ("retrained", &retrained, bits),
        ] {
            stages.push(json!({
                "name": name,
                "test_error": evaluate(n, test)?,
                "weight_bits": count_weight_bits(n, bits_per_weight),
                "grid": decision_grid(n)?,
            }));
        }
        let points: Vec<[f64; 3]> = (0..test.len())
            .map(|i| {
                let r = test.features.row(i);
                [r[0], r[1], test.labels[i] as f64]
            })
            .collect();
        Ok(json!({
            "grid_size": GRID,
            "extent": 1.2,
            "levels": bits_to_levels(bits)?,
            "deltas": reports.iter().map(|r| json!({ "group": r.group, "delta": r.delta })).collect::<Vec<_>>(),
            "stages": stages,
            "test_points": points,
        }))
    })())
}
