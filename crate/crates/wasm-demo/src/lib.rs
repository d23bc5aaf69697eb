//! Browser bindings: the alternating two-item demo, the blocked OGD
//! trajectory, and a hash-signature explorer. Results cross the boundary as
//! JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use phe::exact_demo::{alternating_demo, blocked_schedule, ogd_run, DemoConfig};
use phe::hashing::HashSpec;

fn to_js<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn err(e: phe::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct Traces {
    schedule: Vec<usize>,
    switches: Vec<usize>,
    recurrences: Vec<usize>,
    ogd: Vec<f64>,
    bayes: Vec<f64>,
    phe: Vec<f64>,
    bayes_final_mean: [f64; 3],
    phe_final_mean: [f64; 3],
    ogd_final: [f64; 3],
}

/// Error traces of OGD, exact Bayes and PHE on the alternating stream.
#[wasm_bindgen]
pub fn alternating(repeats: usize, cycles: usize, eta: f64, phe_epochs: usize, seed: u64) -> Result<String, JsValue> {
    let cfg = DemoConfig {
        repeats,
        cycles,
        eta,
        phe_epochs,
        seed,
        ..DemoConfig::default()
    };
    let t = alternating_demo(&cfg).map_err(err)?;
    to_js(&Traces {
        switches: t.switch_steps(),
        recurrences: t.recurrence_steps(),
        schedule: t.schedule,
        ogd: t.ogd,
        bayes: t.bayes,
        phe: t.phe,
        bayes_final_mean: t.bayes_final_mean,
        phe_final_mean: t.phe_final_mean,
        ogd_final: t.ogd_final,
    })
}

/// Table states of OGD on `n` copies of item 0 followed by `n` of item 1.
#[wasm_bindgen]
pub fn blocked_ogd(eta: f64, n: usize) -> Result<String, JsValue> {
    let trace = ogd_run(eta, &blocked_schedule(n), [0.0; 3]).map_err(err)?;
    to_js(&trace.states)
}

#[derive(Serialize)]
struct Explorer {
    items: Vec<ItemRows>,
    /// Pairs of items whose bucket lists agree in every position.
    full_collisions: Vec<(usize, usize)>,
    /// Pairs sharing at least one bucket.
    partial_collisions: usize,
}

#[derive(Serialize)]
struct ItemRows {
    item: String,
    rows: Vec<usize>,
    weight_row: usize,
}

/// Bucket signatures of newline-separated `items` under a fresh hash spec.
#[wasm_bindgen]
pub fn signatures(
    items: &str,
    bucket_count: usize,
    num_hashes: usize,
    weight_buckets: usize,
    seed: u64,
) -> Result<String, JsValue> {
    let spec = HashSpec::new(bucket_count, num_hashes, weight_buckets, 1, seed).map_err(err)?;
    let mut seen = std::collections::BTreeSet::new();
    let rows: Vec<ItemRows> = items
        .lines()
        .map(str::trim)
        .filter(|s| !s.is_empty() && seen.insert(s.to_string()))
        .map(|item| {
            let sig = spec.hash_signature(item);
            ItemRows {
                item: item.to_string(),
                rows: sig.rows,
                weight_row: sig.weight_row,
            }
        })
        .collect();
    let mut full = Vec::new();
    let mut partial = 0;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i].rows == rows[j].rows && rows[i].weight_row == rows[j].weight_row {
                full.push((i, j));
            } else if rows[i].rows.iter().any(|r| rows[j].rows.contains(r)) {
                partial += 1;
            }
        }
    }
    to_js(&Explorer {
        items: rows,
        full_collisions: full,
        partial_collisions: partial,
    })
}
