#![allow(dead_code)]

use proptest::prelude::*;
use sepbias::biasinject::{flip_indices, inject_underdiagnosis, NoiseSpec};
use sepbias::datagen::{Dataset, Sample};
use sepbias::Error;

/// Small labelled datasets with arbitrary group and label mixes.
pub fn arb_dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((any::<bool>(), any::<bool>(), -5.0f64..5.0), 1..200).prop_map(|rows| {
        Dataset::new(
            rows.into_iter()
                .map(|(g, y, x)| Sample {
                    features: vec![x, -x],
                    group: u8::from(g),
                    true_label: u8::from(y),
                    observed_label: u8::from(y),
                })
                .collect(),
        )
    })
}

/// Checks the injection contract for one dataset and spec: exact flip
/// count, only target-group true positives touched, nothing else changed,
/// and flip sets nested in the rate.
pub fn check_injection(data: &Dataset, spec: &NoiseSpec) -> Result<(), String> {
    let eligible = data
        .samples
        .iter()
        .filter(|s| s.group == spec.target_group && s.true_label == 1)
        .count();
    let biased = match inject_underdiagnosis(data, spec) {
        Ok(b) => b,
        Err(Error::DegenerateTarget(_)) if eligible == 0 && spec.rate > 0.0 => return Ok(()),
        Err(e) => return Err(format!("unexpected error: {e}")),
    };
    let expected = (spec.rate * eligible as f64).round() as usize;
    let mut flipped = 0;
    for (before, after) in data.samples.iter().zip(&biased.samples) {
        if before.features != after.features
            || before.group != after.group
            || before.true_label != after.true_label
        {
            return Err("features, group or true label changed".into());
        }
        if before.observed_label != after.observed_label {
            if before.group != spec.target_group || before.true_label != 1 || after.observed_label != 0 {
                return Err("collateral label change".into());
            }
            flipped += 1;
        }
    }
    if flipped != expected {
        return Err(format!("flipped {flipped}, expected {expected}"));
    }
    let lower = NoiseSpec::new(spec.target_group, spec.rate / 2.0, spec.seed);
    let small = flip_indices(data, &lower).map_err(|e| e.to_string())?;
    let large = flip_indices(data, spec).map_err(|e| e.to_string())?;
    if !small.iter().all(|i| large.contains(i)) {
        return Err("flip sets are not nested".into());
    }
    Ok(())
}
