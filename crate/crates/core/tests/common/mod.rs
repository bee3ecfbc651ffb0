#![allow(dead_code)]

use std::path::PathBuf;

use dense_kge::dataio::{build_dataset_dir, Dataset, Triple};
use dense_kge::train::TrainingConfig;

/// 30 disjoint pairs under one symmetric relation. For every third pair only one
/// direction is trained; the reverse direction forms the test split.
pub fn symmetric_kg() -> Dataset {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for p in 0..30u32 {
        let (a, b) = (2 * p, 2 * p + 1);
        train.push(Triple::new(a, 0, b));
        if p % 3 == 0 {
            test.push(Triple::new(b, 0, a));
        } else {
            train.push(Triple::new(b, 0, a));
        }
    }
    Dataset::from_ids(60, 1, train, vec![], test).unwrap()
}

/// A bijection `a_i → b_i` under relation 0 and its reverse under relation 1.
pub fn inverse_kg() -> Dataset {
    let mut train = Vec::new();
    for i in 0..30u32 {
        train.push(Triple::new(i, 0, 30 + i));
        train.push(Triple::new(30 + i, 1, i));
    }
    Dataset::from_ids(60, 2, train, vec![], vec![]).unwrap()
}

/// 20 disjoint chains `x -r0-> y -r0-> z` closed by `x -r1-> z`.
pub fn square_composition_kg() -> Dataset {
    let mut train = Vec::new();
    for g in 0..20u32 {
        let (x, y, z) = (3 * g, 3 * g + 1, 3 * g + 2);
        train.push(Triple::new(x, 0, y));
        train.push(Triple::new(y, 0, z));
        train.push(Triple::new(x, 1, z));
    }
    Dataset::from_ids(60, 2, train, vec![], vec![]).unwrap()
}

/// Hyperparameters used for the synthetic pattern KGs.
pub fn synthetic_config() -> TrainingConfig {
    TrainingConfig {
        k: 16,
        batch_size: 32,
        negatives: 32,
        gamma: 1.0,
        adv_temperature: 1.0,
        learning_rate: 0.01,
        max_steps: 6000,
        eval_every: 0,
        workers: 1,
        seed: 7,
        ..TrainingConfig::default()
    }
}

/// `$DENSE_DATA_DIR/<name>` when it holds the three split files.
pub fn benchmark_dir(name: &str) -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os("DENSE_DATA_DIR")?);
    [name.to_owned(), name.to_uppercase()]
        .into_iter()
        .map(|n| root.join(n))
        .find(|d| {
            ["train.txt", "valid.txt", "test.txt"]
                .iter()
                .all(|f| d.join(f).is_file())
        })
}

pub fn load_benchmark(name: &str) -> Option<Dataset> {
    benchmark_dir(name).map(|d| build_dataset_dir(&d).expect("benchmark files parse"))
}
