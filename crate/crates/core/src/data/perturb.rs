//! Label-shuffle perturbation: re-permutes the targets of a random window
//! subset, destroying the signal-target association for those windows while
//! preserving the overall target distribution.

use rand::seq::SliceRandom;

use crate::util::seeded_rng;
use crate::{Error, Result};

use super::Dataset;

/// Returns a copy of `dataset` in which ⌊fraction·N⌋ uniformly chosen
/// windows have their target trajectories permuted among themselves. The
/// multiset of targets is unchanged. Test partitions must never be passed
/// through this (harness convention).
pub fn perturb_targets(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let all: Vec<usize> = (0..dataset.targets.len()).collect();
    perturb_target_subset(dataset, &all, fraction, seed)
}

/// [`perturb_targets`] restricted to a candidate window set (the training
/// partition in the noise-sweep protocol): ⌊fraction·|candidates|⌋ windows
/// are drawn from `candidates` and their targets permuted among themselves.
/// Windows outside `candidates` are untouched.
pub fn perturb_target_subset(
    dataset: &Dataset,
    candidates: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(Error::invalid_config(format!(
            "perturbation fraction {fraction} outside [0, 1]"
        )));
    }
    let mut out = dataset.clone();
    let n = candidates.len();
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 {
        return Ok(out);
    }
    if n < 2 {
        return Err(Error::InsufficientData(
            "perturb_targets needs >= 2 windows".into(),
        ));
    }
    let mut rng = seeded_rng(seed, 0x5EED);
    let mut indices: Vec<usize> = candidates.to_vec();
    indices.shuffle(&mut rng);
    let subset = &indices[..k];
    let mut shuffled: Vec<_> = subset.iter().map(|&i| out.targets[i].clone()).collect();
    shuffled.shuffle(&mut rng);
    for (&i, t) in subset.iter().zip(shuffled) {
        out.targets[i] = t;
    }
    out.perturbed = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Band, SynthConfig};

    fn dataset() -> Dataset {
        let cfg = SynthConfig::with_random_weights(
            1,
            3.0,
            vec![Band {
                center_hz: 40.0,
                bandwidth_hz: 10.0,
            }],
            1.0,
            1.0,
            0.5,
            21,
        );
        generate_synthetic(&cfg).unwrap()
    }

    fn target_multiset(ds: &Dataset) -> Vec<Vec<u32>> {
        let mut v: Vec<Vec<u32>> = ds
            .targets
            .iter()
            .map(|t| {
                t.steps
                    .iter()
                    .flat_map(|s| s.iter().map(|x| x.to_bits()))
                    .collect()
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn fraction_zero_is_identity() {
        let ds = dataset();
        let out = perturb_targets(&ds, 0.0, 123).unwrap();
        assert_eq!(ds, out);
        assert!(!out.perturbed);
    }

    #[test]
    fn fraction_one_preserves_multiset_and_changes_assignment() {
        let ds = dataset();
        let out = perturb_targets(&ds, 1.0, 123).unwrap();
        assert!(out.perturbed);
        assert_eq!(target_multiset(&ds), target_multiset(&out));
        let changed = ds
            .targets
            .iter()
            .zip(&out.targets)
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed > 0, "full shuffle left every target in place");
    }

    #[test]
    fn exact_subset_size() {
        let ds = dataset();
        assert!(ds.n_windows() >= 10);
        // N windows, fraction 0.4 -> exactly floor(0.4 N) perturbable slots.
        // Count differing targets; must be <= k (collisions may match).
        let k = (0.4 * ds.n_windows() as f64).floor() as usize;
        let out = perturb_targets(&ds, 0.4, 7).unwrap();
        let changed = ds
            .targets
            .iter()
            .zip(&out.targets)
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed <= k);
        assert!(changed > 0);
    }

    #[test]
    fn rejects_out_of_range_fraction() {
        let ds = dataset();
        assert!(perturb_targets(&ds, -0.1, 0).is_err());
        assert!(perturb_targets(&ds, 1.1, 0).is_err());
        assert!(perturb_targets(&ds, f64::NAN, 0).is_err());
    }

    #[test]
    fn untouched_windows_keep_targets() {
        let ds = dataset();
        let out = perturb_targets(&ds, 0.3, 99).unwrap();
        let same = ds
            .targets
            .iter()
            .zip(&out.targets)
            .filter(|(a, b)| a == b)
            .count();
        let k = (0.3 * ds.n_windows() as f64).floor() as usize;
        assert!(same >= ds.n_windows() - k);
    }

    #[test]
    fn deterministic_in_seed() {
        let ds = dataset();
        let a = perturb_targets(&ds, 0.5, 11).unwrap();
        let b = perturb_targets(&ds, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let c = perturb_targets(&ds, 0.5, 12).unwrap();
        assert_ne!(a.targets, c.targets);
    }
}
