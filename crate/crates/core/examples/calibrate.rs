//! Recomputes the toy-lab calibration values checked by the test suite and
//! writes them to `tests/data/toylab_calibration.json`.
//!
//! cargo run --release -p intervene-core --example calibrate

use std::path::PathBuf;

use intervene::matcher::MatchMethod;
use intervene::planner::Mode;
use intervene::selector::learned_at;
use intervene::toylab::{MentionSchedule, ToyConfig, ToyLab};
use serde_json::json;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn one_burst_config(seed: u64) -> ToyConfig {
    let mut cfg = ToyConfig::default();
    cfg.corpus.facts_per_relation = 10;
    cfg.corpus.batches = 3;
    let facts = cfg.corpus.fact_count();
    let mut mentions = vec![vec![0, 2, 2]; facts];
    mentions[0] = vec![50, 0, 0];
    cfg.corpus.schedule = MentionSchedule::Explicit { mentions };
    cfg.model.init_seed = seed;
    cfg.train_seed = seed;
    cfg
}

/// Share of seeds whose burst fact is learned at the first batch end.
fn one_burst_rate(seeds: &[u64]) -> f64 {
    let hits = seeds
        .iter()
        .filter(|&&seed| {
            let lab = ToyLab::prepare(one_burst_config(seed)).expect("burst lab");
            let first_end = lab.corpus.batches[0].batch_id();
            let id = lab.corpus.world.item_id(0);
            learned_at(&lab.baseline.matrix)[&id] == Some(first_end)
        })
        .count();
    hits as f64 / seeds.len() as f64
}

fn main() {
    let lab = ToyLab::prepare(ToyConfig::default()).expect("default lab");
    let mut experiments = serde_json::Map::new();
    for (mode, method) in [
        (Mode::Suppress, MatchMethod::Occurrence),
        (Mode::Suppress, MatchMethod::Cooccurrence),
        (Mode::Promote, MatchMethod::Cooccurrence),
    ] {
        let r = lab.run(mode, method, &SEEDS).expect("experiment");
        let (re, iv) = (r.retrained(), r.intervened());
        println!(
            "{}: step {} targets {} retrained {:.3} intervened {:.3} band {:?} control |d| {:.3} target |d| {:.3}",
            r.condition(),
            r.step,
            r.targets.len(),
            re.target_mean,
            iv.target_mean,
            r.chance_band,
            iv.control_abs_delta,
            iv.target_abs_delta
        );
        experiments.insert(
            r.condition(),
            json!({
                "step": r.step,
                "targets": r.targets.len(),
                "chance_band": r.chance_band,
                "retrained_target_mean": re.target_mean,
                "intervened_target_mean": iv.target_mean,
                "intervened_control_abs_delta": iv.control_abs_delta,
                "intervened_target_abs_delta": iv.target_abs_delta,
                "replacements": r.replacements,
            }),
        );
    }
    let burst_seeds: Vec<u64> = (0..10).collect();
    let rate = one_burst_rate(&burst_seeds);
    println!("one burst of 50 mentions: learned at first batch end in {rate:.2} of seeds");

    let out = json!({
        "config_hash": ToyConfig::default().hash(),
        "seeds": SEEDS,
        "experiments": experiments,
        "one_burst": {
            "mentions": 50,
            "seeds": burst_seeds,
            "rate": rate,
            "min_rate": 0.9,
        },
    });
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toylab_calibration.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out).unwrap() + "\n").expect("write calibration");
    println!("wrote {}", path.display());
}
