use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{protocol_class, Result, RunMode, Scenario, TrainError};
use crate::io::DatasetManifest;
use crate::synth::derive_seed;

/// Frame indices (into the manifest) of each partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub kind: Scenario,
    pub seeds: Vec<u64>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ScenarioSplit {
    /// Distinct scenario seeds present in `part`.
    pub fn seeds_in(manifest: &DatasetManifest, part: &[usize]) -> Vec<u64> {
        let mut s: Vec<u64> = part.iter().map(|&i| manifest.frames[i].scenario_seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Largest-remainder apportionment: `share · n_c` per class, rounded so the
/// total is `round(share · Σ n_c)` and no class moves more than one unit
/// from its exact quota.
fn apportion(counts: &[usize], share: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (share * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&n| share * n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // stable sort keeps class order as the tie-break
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut missing = target.saturating_sub(out.iter().sum());
    for &c in order.iter().cycle().take(counts.len() * 2) {
        if missing == 0 {
            break;
        }
        if out[c] < counts[c] {
            out[c] += 1;
            missing -= 1;
        }
    }
    out
}

/// Stratified 70/15/15 split. `keys[i]` is the class of item `i`; returns
/// positions into `keys` for train, val and test. Every class lands in all
/// three partitions.
pub fn split_70_15_15<K: Ord + Clone + std::fmt::Debug>(keys: &[K], seed: u64) -> Result<[Vec<usize>; 3]> {
    let mut classes: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        classes.entry(k.clone()).or_default().push(i);
    }
    if let Some((k, v)) = classes.iter().find(|(_, v)| v.len() < 3) {
        return Err(TrainError::SmallClass { class: format!("{k:?}"), count: v.len() });
    }
    let counts: Vec<usize> = classes.values().map(Vec::len).collect();
    // rounding the joint holdout once keeps train within one frame of its
    // quota; odd holdouts alternate their extra frame between val and test
    let held = apportion(&counts, 0.30);
    let mut odd = 0usize;
    let (mut val, mut test) = (Vec::with_capacity(counts.len()), Vec::with_capacity(counts.len()));
    for &h in &held {
        let extra = h % 2 == 1 && {
            odd += 1;
            odd % 2 == 1
        };
        let v = h / 2 + usize::from(extra);
        val.push(v);
        test.push(h - v);
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, (_, mut members)) in classes.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, c as u64]));
        members.shuffle(&mut rng);
        let n = members.len();
        let v = val[c].max(1);
        let t = test[c].max(1).min(n - v - 1);
        parts[1].extend_from_slice(&members[..v]);
        parts[2].extend_from_slice(&members[v..v + t]);
        parts[0].extend_from_slice(&members[v + t..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Selects the frames of a scenario and splits them.
///
/// TTSD takes exactly one scenario seed, TTMD pools two or more. Only frames
/// of the run's protocols are kept. With `max_per_class`, each
/// (device, protocol) class is first subsampled to at most that many
/// frames, which lets TTSD and TTMD runs train on equally sized sets.
pub fn build_scenario(
    manifest: &DatasetManifest,
    kind: Scenario,
    seeds: &[u64],
    mode: RunMode,
    split_seed: u64,
    max_per_class: Option<usize>,
) -> Result<ScenarioSplit> {
    match (kind, seeds.len()) {
        (Scenario::Ttsd, 1) => {}
        (Scenario::Ttsd, n) => return Err(TrainError::Seeds { kind: "ttsd", need: "exactly 1", got: n }),
        (Scenario::Ttmd, n) if n < 2 => return Err(TrainError::Seeds { kind: "ttmd", need: "at least 2", got: n }),
        _ => {}
    }
    if let Some(&s) = seeds.iter().find(|s| !manifest.scenarios.contains(s)) {
        return Err(TrainError::UnknownSeed(s));
    }
    let protocols = mode.protocols();
    let mut eligible: Vec<usize> = (0..manifest.frames.len())
        .filter(|&i| {
            let r = &manifest.frames[i];
            seeds.contains(&r.scenario_seed) && protocols.contains(&manifest.protocol_of(r))
        })
        .collect();
    if eligible.is_empty() {
        return Err(TrainError::NoFrames);
    }
    let class_of = |i: usize| {
        let r = &manifest.frames[i];
        (r.device, protocol_class(manifest.protocol_of(r)))
    };

    if let Some(cap) = max_per_class {
        let mut by_class: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for &i in &eligible {
            by_class.entry(class_of(i)).or_default().push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[split_seed, 0x5ca1e]));
        eligible = by_class
            .into_values()
            .flat_map(|mut v| {
                if v.len() > cap {
                    v.shuffle(&mut rng);
                    v.truncate(cap);
                }
                v
            })
            .collect();
        eligible.sort_unstable();
    }

    let keys: Vec<(usize, usize)> = eligible.iter().map(|&i| class_of(i)).collect();
    let [tr, va, te] = split_70_15_15(&keys, split_seed)?;
    let pick = |pos: Vec<usize>| pos.into_iter().map(|p| eligible[p]).collect();
    Ok(ScenarioSplit { kind, seeds: seeds.to_vec(), train: pick(tr), val: pick(va), test: pick(te) })
}
