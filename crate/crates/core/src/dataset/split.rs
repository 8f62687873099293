use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{ClassCounts, SampleRecord, Split};
use crate::class::ContactClass;
use crate::error::{Error, Result};

pub const MIN_SAMPLES_PER_CLASS: usize = 5;

/// The class a trial is stratified under: its most frequent contact label,
/// or ambient when it has no contact windows. Ties go to the lower index.
fn group_class(records: &[&SampleRecord]) -> ContactClass {
    let mut counts = [0usize; 3];
    for r in records {
        if r.label.is_contact() {
            counts[r.label.index()] += 1;
        }
    }
    let (best, &n) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("three classes");
    if n == 0 {
        ContactClass::Ambient
    } else {
        ContactClass::from_index(best).expect("contact index")
    }
}

/// Group-aware stratified split: whole trials go to train or val.
///
/// Trials are bucketed by [`group_class`], shuffled per bucket with `seed`,
/// and the first `round(ratio * n)` go to train, clamped to `[1, n - 1]` when
/// a bucket has at least two trials. With one trial per sample this is an
/// exact per-class ratio split.
pub fn stratified_split(records: &mut [SampleRecord], ratio: f64, seed: u64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param("ratio", "must be in (0, 1)"));
    }
    let counts = ClassCounts::of(records.iter());
    for class in ContactClass::ALL {
        let n = counts.get(class);
        if n > 0 && n < MIN_SAMPLES_PER_CLASS {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                count: n,
                min: MIN_SAMPLES_PER_CLASS,
            });
        }
    }
    let mut groups: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records.iter() {
        groups.entry(&r.trial_id).or_default().push(r);
    }
    let mut buckets: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (trial, recs) in &groups {
        buckets
            .entry(group_class(recs).index())
            .or_default()
            .push(trial.to_string());
    }
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for (class, mut trials) in buckets {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        trials.shuffle(&mut rng);
        let n = trials.len();
        let mut n_train = (ratio * n as f64).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        } else {
            n_train = n;
        }
        for (i, t) in trials.into_iter().enumerate() {
            assignment.insert(
                t,
                if i < n_train {
                    Split::Train
                } else {
                    Split::Val
                },
            );
        }
    }
    for r in records.iter_mut() {
        r.split = assignment[&r.trial_id];
    }
    Ok(())
}
