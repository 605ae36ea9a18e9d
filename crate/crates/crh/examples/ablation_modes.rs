//! Mode ablation sweep: trains the full method, its single-head variant,
//! and the fixed-center variant over several seeds on the default synthetic
//! dataset, reporting per-seed and mean mAP / alignment correlation.
//!
//! Run with: `cargo run --release --example ablation_modes`

use crh::data::{generate_synthetic, SynthSpec};
use crh::eval::{alignment_against_reference, map_at_k, ZeroRelevantPolicy};
use crh::train::{train, Mode, TrainConfig, UpdateSchedule};

struct RunSummary {
    map: f64,
    pcc: f64,
    init_pcc: f64,
    final_change: f64,
}

fn run(cfg: &TrainConfig, seed: u64) -> crh::Result<RunSummary> {
    let spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    let synth = generate_synthetic(&spec)?;
    let dataset = &synth.dataset;
    let out = train(cfg, dataset)?;

    let samples: Vec<&[f32]> = (0..dataset.len()).map(|i| dataset.feature(i)).collect();
    let codes = out.model.encode_all(&samples)?;
    let map = map_at_k(
        &codes,
        dataset.labels(),
        &codes,
        dataset.labels(),
        None,
        ZeroRelevantPolicy::CountAsZero,
    )?;
    let centers = out.assignment.centers(&out.codebook)?;
    let pcc = alignment_against_reference(&centers, &synth.reference_similarity)?.pcc;
    let init_centers = out.initial_assignment.centers(&out.codebook)?;
    let init_pcc = alignment_against_reference(&init_centers, &synth.reference_similarity)?.pcc;
    let final_change = out
        .history
        .records
        .iter()
        .rev()
        .find_map(|r| r.change_fraction)
        .unwrap_or(0.0);
    Ok(RunSummary {
        map,
        pcc,
        init_pcc,
        final_change,
    })
}

fn main() -> crh::Result<()> {
    let base: TrainConfig = serde_json::from_value(serde_json::json!({
        "k": 16,
        "m": 32,
        "d": 8,
        "lambda": 0.1,
        "epochs": 60,
        "batch_size": 128,
        "seed": 7
    }))
    .unwrap();
    let seeds: Vec<u64> = (0..5).collect();

    let mut table: Vec<(String, Vec<RunSummary>)> = Vec::new();
    for (name, mode, schedule) in [
        ("CRH", Mode::Crh, UpdateSchedule::default()),
        ("CRH-M", Mode::CrhM, UpdateSchedule::default()),
        ("CRH-U", Mode::CrhU, UpdateSchedule::default()),
        ("CRH interval=10", Mode::Crh, UpdateSchedule::every(10)),
    ] {
        let mut rows = Vec::new();
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.update_schedule = schedule;
            rows.push(run(&cfg, seed)?);
        }
        table.push((name.to_string(), rows));
    }

    for (name, rows) in &table {
        let mean = |f: fn(&RunSummary) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        let maps: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.map)).collect();
        let pccs: Vec<String> = rows.iter().map(|r| format!("{:+.3}", r.pcc)).collect();
        println!(
            "{name:16} mAP {} (mean {:.4})  pcc {} (mean {:+.4})  init_pcc mean {:+.4}  last_change {:.2}",
            maps.join(" "),
            mean(|r| r.map),
            pccs.join(" "),
            mean(|r| r.pcc),
            mean(|r| r.init_pcc),
            mean(|r| r.final_change),
        );
    }
    Ok(())
}
