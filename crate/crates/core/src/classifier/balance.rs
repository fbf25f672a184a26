//! Class-balanced training subsets.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::AggregatedSample;
use crate::flow::ClassLabel;
use crate::rng::{substream, STREAM_BALANCE};

pub const PER_CLASS_TARGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceRecipe {
    /// Samples drawn per attack class (and per class in multiclass mode).
    pub per_class_target: usize,
    /// Attack classes removed before balancing.
    pub omitted: BTreeSet<ClassLabel>,
}

impl Default for BalanceRecipe {
    fn default() -> Self {
        BalanceRecipe { per_class_target: PER_CLASS_TARGET, omitted: BTreeSet::new() }
    }
}

fn group_by_label<T>(samples: &[AggregatedSample<T>]) -> BTreeMap<ClassLabel, Vec<usize>> {
    let mut groups: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.label).or_default().push(i);
    }
    groups
}

/// Draws `target` members: without replacement when the pool is large
/// enough, otherwise every member plus random repeats.
fn resample<R: Rng>(pool: &[usize], target: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= target {
        index::sample(rng, pool.len(), target).into_iter().map(|i| pool[i]).collect()
    } else {
        let mut out = pool.to_vec();
        out.extend((pool.len()..target).map(|_| pool[rng.random_range(0..pool.len())]));
        out
    }
}

impl BalanceRecipe {
    fn check_omitted(&self, groups: &BTreeMap<ClassLabel, Vec<usize>>) -> Result<()> {
        if self.omitted.contains(&ClassLabel::Background) {
            return Err(Error::invalid("background cannot be omitted"));
        }
        match self.omitted.iter().find(|l| !groups.contains_key(l)) {
            Some(&missing) => Err(Error::MissingClass(missing)),
            None => Ok(()),
        }
    }

    /// Each kept attack class resampled to `per_class_target`; background
    /// resampled to match the attack total (1:1).
    pub fn binary<T: Clone, R: Rng>(&self, samples: &[AggregatedSample<T>], rng: &mut R) -> Result<Vec<AggregatedSample<T>>> {
        let groups = group_by_label(samples);
        self.check_omitted(&groups)?;
        let background = groups.get(&ClassLabel::Background).ok_or(Error::MissingClass(ClassLabel::Background))?;
        let attacks: Vec<(&ClassLabel, &Vec<usize>)> = groups
            .iter()
            .filter(|(l, _)| l.is_attack() && !self.omitted.contains(l))
            .collect();
        if attacks.is_empty() {
            return Err(Error::invalid("no attack class left to train on"));
        }
        let mut picked = resample(background, self.per_class_target * attacks.len(), rng);
        for (_, pool) in attacks {
            picked.extend(resample(pool, self.per_class_target, rng));
        }
        Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
    }

    /// Every present (non-omitted) class resampled to `per_class_target`.
    pub fn multiclass<T: Clone, R: Rng>(&self, samples: &[AggregatedSample<T>], rng: &mut R) -> Result<Vec<AggregatedSample<T>>> {
        let groups = group_by_label(samples);
        self.check_omitted(&groups)?;
        if groups.is_empty() {
            return Err(Error::invalid("cannot balance an empty sample set"));
        }
        let mut picked = Vec::new();
        for (label, pool) in &groups {
            if !self.omitted.contains(label) {
                picked.extend(resample(pool, self.per_class_target, rng));
            }
        }
        Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
    }
}

/// Binary recipe with the default 1000-per-class target.
pub fn balance_binary<T: Clone>(
    samples: &[AggregatedSample<T>],
    omitted: &BTreeSet<ClassLabel>,
    seed: u64,
) -> Result<Vec<AggregatedSample<T>>> {
    let recipe = BalanceRecipe { omitted: omitted.clone(), ..Default::default() };
    recipe.binary(samples, &mut substream(seed, STREAM_BALANCE))
}

/// Multiclass recipe with the default 1000-per-class target.
pub fn balance_multiclass<T: Clone>(samples: &[AggregatedSample<T>], seed: u64) -> Result<Vec<AggregatedSample<T>>> {
    BalanceRecipe::default().multiclass(samples, &mut substream(seed, STREAM_BALANCE))
}
