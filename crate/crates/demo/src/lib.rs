//! Browser bindings for three small operations: detection on a simulated
//! dataset, fitting a count family to GDF values, and the empirical
//! mid-quantile curve. Every binding returns a JSON string.

use influens::detection::{backend_threshold, clusmip_sweep, Backend, ClusMipConfig};
use influens::selectors::SelectorSpec;
use influens::simharness::{replicate, Perturbation, SimConfig};
use influens::thresholds::empirical_mid_distribution;
use influens::{Selector, Task};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct DetectionView {
    n: usize,
    p: usize,
    truth: Vec<usize>,
    flagged: Vec<usize>,
    candidates: Vec<usize>,
    tau: Vec<Option<u32>>,
    reference_tau: Vec<u32>,
    cutoff: Option<f64>,
    power: f64,
    fpr: f64,
}

/// Simulates one contaminated dataset and runs ClusMIP on it. Indices in
/// the result are 1-based.
pub fn detect_simulated(perturbation: &str, kappa: f64, selector: &str, backend: &str, seed: u64) -> Result<String, String> {
    let pert: Perturbation = perturbation.parse().map_err(|e| format!("{e}"))?;
    let task = if pert == Perturbation::LogisticX { Task::Logistic } else { Task::Linear };
    let selector: Selector = selector.parse().map_err(|e| format!("{e}"))?;
    let backend: Backend = backend.parse().map_err(|e| format!("{e}"))?;
    // Half the desk-scale dimension keeps a run interactive.
    let base = SimConfig::desk(task, 0.5, pert, kappa, seed);
    let cfg = SimConfig { p: base.p / 2, n_reps: 1, ..base };
    let data = replicate(&cfg, 0).map_err(|e| e.to_string())?;
    let ccfg = ClusMipConfig::new(SelectorSpec::new(selector), 0.05, seed);
    let sweep = clusmip_sweep(&data, &ccfg, &[backend]).map_err(|e| e.to_string())?;
    let (_, result) = sweep.results.into_iter().next().expect("one backend requested");
    let result = result.map_err(|e| e.to_string())?;
    let hits = result.flagged.iter().filter(|&i| i < cfg.n_infl).count();
    let view = DetectionView {
        n: cfg.n,
        p: cfg.p,
        truth: (1..=cfg.n_infl).collect(),
        flagged: result.flagged.one_based(),
        candidates: sweep.profile.tau.indices.one_based(),
        tau: sweep.profile.tau.values.clone(),
        reference_tau: sweep.profile.threshold_values(),
        cutoff: result.rule.cutoff.is_finite().then_some(result.rule.cutoff),
        power: hits as f64 / cfg.n_infl as f64,
        fpr: (result.flagged.len() - hits) as f64 / (cfg.n - cfg.n_infl) as f64,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn parse_counts(text: &str) -> Result<Vec<u32>, String> {
    let values: Vec<u32> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("`{s}` is not a non-negative integer")))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err("no values".into());
    }
    Ok(values)
}

/// Fits a count family (`cmb`, `cmp`, `bb`, `gp`, `mb`, `mp`) to the
/// counts in `text` and reports the mid-quantile cutoff at `1 - alpha`.
pub fn fit_counts(text: &str, family: &str, trials: u32, alpha: f64) -> Result<String, String> {
    let values = parse_counts(text)?;
    let backend: Backend = family.parse().map_err(|e| format!("{e}"))?;
    if !backend.is_parametric() {
        return Err(format!("`{family}` is not a count family"));
    }
    let cfg = ClusMipConfig::new(SelectorSpec::new(Selector::Lasso), alpha, 1);
    let (rule, fit) = backend_threshold(backend, &values, trials, &cfg).map_err(|e| e.to_string())?;
    let mut doc = match fit {
        Some(fit) => serde_json::to_value(fit).map_err(|e| e.to_string())?,
        None => serde_json::json!({ "family": null, "note": "all values are zero" }),
    };
    doc["cutoff"] = serde_json::json!(rule.cutoff);
    Ok(doc.to_string())
}

/// `[[zeta, Q_mid(zeta)], ...]` on `points` evenly spaced levels in (0, 1).
pub fn mid_quantile_curve(text: &str, points: usize) -> Result<String, String> {
    let values = parse_counts(text)?;
    let md = empirical_mid_distribution(&values).map_err(|e| e.to_string())?;
    let points = points.clamp(2, 2000);
    let curve: Vec<[f64; 2]> = (1..=points)
        .map(|k| {
            let zeta = k as f64 / (points + 1) as f64;
            [zeta, md.mid_quantile(zeta)]
        })
        .collect();
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = detectSimulated)]
pub fn detect_simulated_js(perturbation: &str, kappa: f64, selector: &str, backend: &str, seed: u32) -> Result<String, JsValue> {
    detect_simulated(perturbation, kappa, selector, backend, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = fitCounts)]
pub fn fit_counts_js(text: &str, family: &str, trials: u32, alpha: f64) -> Result<String, JsValue> {
    fit_counts(text, family, trials, alpha).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = midQuantileCurve)]
pub fn mid_quantile_curve_js(text: &str, points: usize) -> Result<String, JsValue> {
    mid_quantile_curve(text, points).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_view() {
        let out: serde_json::Value = serde_json::from_str(&detect_simulated("II_X", 30.0, "slasso", "clt", 3).unwrap()).unwrap();
        assert_eq!(out["truth"].as_array().unwrap().len(), 10);
        assert_eq!(out["candidates"].as_array().unwrap().len(), out["tau"].as_array().unwrap().len());
        assert!(out["power"].as_f64().unwrap() >= 0.0);
        assert!(detect_simulated("II_Z", 1.0, "lasso", "clt", 1).is_err());
    }

    #[test]
    fn fit_and_curve() {
        let text = "3, 0, 5 2 2 7 1 4 3 0 6 2 3 1 9 2";
        let fit: serde_json::Value = serde_json::from_str(&fit_counts(text, "cmp", 0, 0.05).unwrap()).unwrap();
        assert_eq!(fit["family"], "CMP");
        assert!(fit["cutoff"].as_f64().unwrap() > 0.0);
        assert!(fit_counts(text, "boot1", 0, 0.05).is_err());
        assert!(fit_counts("1 x", "cmp", 0, 0.05).is_err());

        let curve: Vec<[f64; 2]> = serde_json::from_str(&mid_quantile_curve("0 0 1 2", 9).unwrap()).unwrap();
        assert_eq!(curve.len(), 9);
        assert!(curve.windows(2).all(|w| w[1][1] >= w[0][1]));
    }
}
