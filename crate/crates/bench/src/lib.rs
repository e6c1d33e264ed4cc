//! Seeded synthetic inputs for the benchmarks.

use cotkt_core::calibration::EvalRecord;
use cotkt_core::dataset::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn records(n: usize, seed: u64) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EvalRecord {
            item_id: format!("r{i}"),
            gold_label: Label::from_index(rng.gen_range(0..4)).unwrap(),
            predicted_label: Label::from_index(rng.gen_range(0..4)),
            confidence: Some(rng.gen_range(0..=100) as f64 / 100.0),
        })
        .collect()
}

pub fn replies(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [
        "Explanation: the second clause is negative.\nAnswer and Confidence (0-100): {L}, {C}",
        "Answer and Confidence (0-100): **{L}** ({C}%)",
        "{L}, {C}",
        "I would choose option {L}. My confidence is {C}%.",
        "Explanation: unclear.\nAnswer and Confidence (0-100): {L} or B, {C}",
    ];
    (0..n)
        .map(|_| {
            let letter = ['A', 'B', 'C', 'D'][rng.gen_range(0..4)];
            shapes[rng.gen_range(0..shapes.len())]
                .replace("{L}", &letter.to_string())
                .replace("{C}", &rng.gen_range(0..=100).to_string())
        })
        .collect()
}
