//! Offline transition datasets: collection from tabular MDPs, deterministic
//! splitting, the anchor-neighborhood drop used by the uncertainty study, and
//! JSON-lines persistence.
//!
//! Discrete states and actions are stored as length-1 integer-valued vectors
//! so the tabular and continuous code paths share one representation.

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::rng::stream_rng;

/// Shape of the state/action spaces a dataset lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceDescriptor {
    Tabular { n_states: usize, n_actions: usize },
    Continuous { state_dim: usize, action_dim: usize },
}

impl SpaceDescriptor {
    pub fn state_dim(&self) -> usize {
        match self {
            SpaceDescriptor::Tabular { .. } => 1,
            SpaceDescriptor::Continuous { state_dim, .. } => *state_dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            SpaceDescriptor::Tabular { .. } => 1,
            SpaceDescriptor::Continuous { action_dim, .. } => *action_dim,
        }
    }
}

/// A single environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn tabular(s: usize, a: usize, r: f64, s_next: usize) -> Self {
        Self {
            s: vec![s as f64],
            a: vec![a as f64],
            r,
            s_next: vec![s_next as f64],
            done: false,
        }
    }

    /// State index for tabular-embedded transitions.
    pub fn s_index(&self) -> usize {
        debug_assert_eq!(self.s.len(), 1);
        self.s[0] as usize
    }

    pub fn a_index(&self) -> usize {
        debug_assert_eq!(self.a.len(), 1);
        self.a[0] as usize
    }

    pub fn s_next_index(&self) -> usize {
        debug_assert_eq!(self.s_next.len(), 1);
        self.s_next[0] as usize
    }
}

/// An immutable ordered collection of transitions plus its space descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub space: SpaceDescriptor,
}

impl OfflineDataset {
    pub fn new(transitions: Vec<Transition>, space: SpaceDescriptor) -> Result<Self> {
        let (sd, ad) = (space.state_dim(), space.action_dim());
        for (i, t) in transitions.iter().enumerate() {
            if t.s.len() != sd || t.s_next.len() != sd || t.a.len() != ad {
                return Err(Error::invalid(format!(
                    "transition {i} has arity ({}, {}), dataset expects ({sd}, {ad})",
                    t.s.len(),
                    t.a.len()
                )));
            }
            if !t.r.is_finite() {
                return Err(Error::invalid(format!("transition {i} has non-finite reward")));
            }
        }
        Ok(Self { transitions, space })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn tabular_sizes(&self) -> Result<(usize, usize)> {
        match self.space {
            SpaceDescriptor::Tabular { n_states, n_actions } => Ok((n_states, n_actions)),
            SpaceDescriptor::Continuous { .. } => {
                Err(Error::invalid("operation requires a tabular dataset"))
            }
        }
    }

    /// Reinterprets a loaded dataset as tabular with known space sizes.
    pub fn as_tabular(mut self, n_states: usize, n_actions: usize) -> Result<Self> {
        for (i, t) in self.transitions.iter().enumerate() {
            let ok = t.s.len() == 1
                && t.a.len() == 1
                && t.s[0].fract() == 0.0
                && t.a[0].fract() == 0.0
                && (0.0..n_states as f64).contains(&t.s[0])
                && (0.0..n_states as f64).contains(&t.s_next[0])
                && (0.0..n_actions as f64).contains(&t.a[0]);
            if !ok {
                return Err(Error::invalid(format!(
                    "transition {i} is not a valid ({n_states}, {n_actions}) tabular sample"
                )));
            }
        }
        self.space = SpaceDescriptor::Tabular { n_states, n_actions };
        Ok(self)
    }
}

/// Rolls `n_episodes` trajectories of length `horizon` under `policy`.
pub fn collect(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_episodes * horizon);
    for _ in 0..n_episodes {
        let mut s = mdp.sample_initial(&mut rng);
        for _ in 0..horizon {
            let a = policy.sample_action(s, &mut rng);
            let s2 = mdp.sample_next(s, a, &mut rng);
            transitions.push(Transition::tabular(s, a, mdp.reward[[s, a]], s2));
            s = s2;
        }
    }
    OfflineDataset::new(
        transitions,
        SpaceDescriptor::Tabular {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
        },
    )
}

/// Deterministic shuffled split; the first part holds round(ratio·n) transitions.
pub fn split(
    dataset: &OfflineDataset,
    ratio: f64,
    seed: u64,
) -> Result<(OfflineDataset, OfflineDataset)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    let n = dataset.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut StdRng::seed_from_u64(seed));
    let n_first = (ratio * n as f64).round() as usize;
    let first: Vec<Transition> = idx[..n_first]
        .iter()
        .map(|&i| dataset.transitions[i].clone())
        .collect();
    let second: Vec<Transition> = idx[n_first..]
        .iter()
        .map(|&i| dataset.transitions[i].clone())
        .collect();
    Ok((
        OfflineDataset::new(first, dataset.space)?,
        OfflineDataset::new(second, dataset.space)?,
    ))
}

fn within_box(t: &Transition, anchor: &Transition, radius: f64) -> bool {
    t.s.iter()
        .zip(anchor.s.iter())
        .all(|(x, y)| (x - y).abs() <= radius)
        && t.a
            .iter()
            .zip(anchor.a.iter())
            .all(|(x, y)| (x - y).abs() <= radius)
}

/// Indices of all transitions whose (s, a) lies elementwise within ±radius of
/// some anchor's (s, a).
pub fn neighborhood_candidates(
    dataset: &OfflineDataset,
    anchors: &[Transition],
    radius: f64,
) -> Vec<usize> {
    dataset
        .transitions
        .iter()
        .enumerate()
        .filter(|(_, t)| anchors.iter().any(|anchor| within_box(t, anchor, radius)))
        .map(|(i, _)| i)
        .collect()
}

/// Removes a fraction of the transitions near randomly chosen anchors.
///
/// Returns the remaining dataset, the anchors, and the candidate count. Two
/// independent RNG streams are derived from `seed`: stream 0 picks anchors,
/// stream 1 picks removals — so runs sharing a seed but differing in
/// `drop_ratio` use identical anchors and nested removal sets.
pub fn neighborhood_drop(
    dataset: &OfflineDataset,
    n_anchors: usize,
    radius: f64,
    drop_ratio: f64,
    seed: u64,
) -> Result<(OfflineDataset, Vec<Transition>, usize)> {
    if n_anchors > dataset.len() {
        return Err(Error::invalid(format!(
            "n_anchors={n_anchors} exceeds dataset size {}",
            dataset.len()
        )));
    }
    if !(0.0..=1.0).contains(&drop_ratio) {
        return Err(Error::invalid("drop_ratio must lie in [0,1]"));
    }
    if radius <= 0.0 {
        return Err(Error::invalid("radius must be positive"));
    }
    let mut anchor_rng = stream_rng(seed, 0);
    let anchor_idx = rand::seq::index::sample(&mut anchor_rng, dataset.len(), n_anchors);
    let anchors: Vec<Transition> = anchor_idx
        .iter()
        .map(|i| dataset.transitions[i].clone())
        .collect();

    let candidates = neighborhood_candidates(dataset, &anchors, radius);
    let n_drop = (drop_ratio * candidates.len() as f64).round() as usize;

    let mut order = candidates.clone();
    order.shuffle(&mut stream_rng(seed, 1));
    let dropped: std::collections::HashSet<usize> = order[..n_drop].iter().copied().collect();

    let remaining: Vec<Transition> = dataset
        .transitions
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, t)| t.clone())
        .collect();
    Ok((
        OfflineDataset::new(remaining, dataset.space)?,
        anchors,
        candidates.len(),
    ))
}

/// Empirical action frequencies per state; uniform rows for unvisited states.
pub fn estimate_behavior_policy(dataset: &OfflineDataset) -> Result<TabularPolicy> {
    let (n_states, n_actions) = dataset.tabular_sizes()?;
    let mut counts = ndarray::Array2::<f64>::zeros((n_states, n_actions));
    for t in &dataset.transitions {
        counts[[t.s_index(), t.a_index()]] += 1.0;
    }
    for s in 0..n_states {
        let total: f64 = counts.row(s).sum();
        if total > 0.0 {
            for a in 0..n_actions {
                counts[[s, a]] /= total;
            }
        } else {
            for a in 0..n_actions {
                counts[[s, a]] = 1.0 / n_actions as f64;
            }
        }
    }
    TabularPolicy::new(counts)
}

/// Writes one JSON object per transition.
pub fn save(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in &dataset.transitions {
        serde_json::to_writer(&mut file, t)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset.
///
/// The space descriptor is inferred: if every state and action is a length-1
/// non-negative integer vector the dataset is tabular (sizes taken from the
/// largest observed indices; use [`OfflineDataset::as_tabular`] when the true
/// sizes are known), otherwise continuous with dimensions from the first line.
pub fn load(path: &Path) -> Result<OfflineDataset> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut transitions = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        transitions.push(t);
    }
    if transitions.is_empty() {
        return OfflineDataset::new(
            transitions,
            SpaceDescriptor::Continuous {
                state_dim: 0,
                action_dim: 0,
            },
        );
    }
    let looks_tabular = transitions.iter().all(|t| {
        t.s.len() == 1
            && t.a.len() == 1
            && [t.s[0], t.a[0], t.s_next[0]]
                .iter()
                .all(|x| x.fract() == 0.0 && *x >= 0.0)
    });
    let space = if looks_tabular {
        let max_s = transitions
            .iter()
            .flat_map(|t| [t.s[0], t.s_next[0]])
            .fold(0.0f64, f64::max);
        let max_a = transitions.iter().map(|t| t.a[0]).fold(0.0f64, f64::max);
        SpaceDescriptor::Tabular {
            n_states: max_s as usize + 1,
            n_actions: max_a as usize + 1,
        }
    } else {
        SpaceDescriptor::Continuous {
            state_dim: transitions[0].s.len(),
            action_dim: transitions[0].a.len(),
        }
    };
    OfflineDataset::new(transitions, space)
}

/// Re-embeds a tabular gridworld dataset with 2-D (row, col) state vectors.
pub fn embed_grid_states(dataset: &OfflineDataset, width: usize) -> Result<OfflineDataset> {
    dataset.tabular_sizes()?;
    let embed = |s: &[f64]| -> Vec<f64> {
        let i = s[0] as usize;
        vec![(i / width) as f64, (i % width) as f64]
    };
    let transitions = dataset
        .transitions
        .iter()
        .map(|t| Transition {
            s: embed(&t.s),
            a: t.a.clone(),
            r: t.r,
            s_next: embed(&t.s_next),
            done: t.done,
        })
        .collect();
    OfflineDataset::new(
        transitions,
        SpaceDescriptor::Continuous {
            state_dim: 2,
            action_dim: 1,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{chain_mdp, random_mdp};
    use ndarray::prelude::*;

    #[test]
    fn collect_zero_episodes_is_empty() {
        let mdp = chain_mdp(4, 0.1, 0.9);
        let ds = collect(&mdp, &TabularPolicy::uniform(4, 2), 0, 5, 1).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn collect_deterministic_trajectory() {
        let mdp = chain_mdp(4, 0.0, 0.9); // slip 0: moves always succeed
        let always_right = TabularPolicy::greedy(&[1, 1, 1, 1], 2);
        let ds = collect(&mdp, &always_right, 1, 3, 99).unwrap();
        let seq: Vec<(usize, usize, usize)> = ds
            .transitions
            .iter()
            .map(|t| (t.s_index(), t.a_index(), t.s_next_index()))
            .collect();
        assert_eq!(seq, vec![(0, 1, 1), (1, 1, 2), (2, 1, 3)]);
        assert_eq!(ds.transitions[2].r, 0.0);
    }

    #[test]
    fn collect_frequencies_match_exact_occupancy() {
        let mdp = random_mdp(3, 2, 0.9, 5);
        let pol = TabularPolicy::random(3, 2, &mut StdRng::seed_from_u64(6));
        let (episodes, horizon) = (100, 10);
        let ds = collect(&mdp, &pol, episodes, horizon, 7).unwrap();
        assert_eq!(ds.len(), 1000);

        // exact occupancy: average over t of rho_t(s) * mu(a|s)
        let kernel = mdp.policy_kernel(&pol);
        let mut rho = mdp.rho0.clone();
        let mut occ = Array2::<f64>::zeros((3, 2));
        for _ in 0..horizon {
            for s in 0..3 {
                for a in 0..2 {
                    occ[[s, a]] += rho[s] * pol.probs[[s, a]] / horizon as f64;
                }
            }
            rho = rho.dot(&kernel);
        }

        // per-episode frequencies give honest i.i.d. standard errors
        let mut per_episode = vec![Array2::<f64>::zeros((3, 2)); episodes];
        for (e, chunk) in ds.transitions.chunks(horizon).enumerate() {
            for t in chunk {
                per_episode[e][[t.s_index(), t.a_index()]] += 1.0 / horizon as f64;
            }
        }
        for s in 0..3 {
            for a in 0..2 {
                let vals: Vec<f64> = per_episode.iter().map(|f| f[[s, a]]).collect();
                let mean = vals.iter().sum::<f64>() / episodes as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (episodes as f64 - 1.0);
                let se = (var / episodes as f64).sqrt();
                assert!(
                    (mean - occ[[s, a]]).abs() <= 3.0 * se + 1e-12,
                    "({s},{a}): mean {mean}, exact {}, se {se}",
                    occ[[s, a]]
                );
            }
        }
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let mdp = chain_mdp(4, 0.1, 0.9);
        let ds = collect(&mdp, &TabularPolicy::uniform(4, 2), 2, 5, 3).unwrap();
        let (a, b) = split(&ds, 0.9, 0).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));

        let two = OfflineDataset::new(ds.transitions[..2].to_vec(), ds.space).unwrap();
        let (a, b) = split(&two, 0.5, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn split_is_a_partition() {
        let mdp = random_mdp(4, 2, 0.9, 8);
        let ds = collect(&mdp, &TabularPolicy::uniform(4, 2), 4, 7, 11).unwrap();
        let (a, b) = split(&ds, 0.6, 123).unwrap();
        assert_eq!(a.len() + b.len(), ds.len());
        let key = |t: &Transition| {
            (
                t.s_index(),
                t.a_index(),
                t.s_next_index(),
                (t.r * 1e9) as i64,
            )
        };
        let mut union: Vec<_> = a.transitions.iter().chain(&b.transitions).map(key).collect();
        let mut orig: Vec<_> = ds.transitions.iter().map(key).collect();
        union.sort_unstable();
        orig.sort_unstable();
        assert_eq!(union, orig);
    }

    #[test]
    fn split_rejects_empty_and_bad_ratio() {
        let empty = OfflineDataset::new(
            vec![],
            SpaceDescriptor::Tabular {
                n_states: 2,
                n_actions: 2,
            },
        )
        .unwrap();
        assert!(split(&empty, 0.5, 0).is_err());
        let mdp = chain_mdp(3, 0.1, 0.9);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 1, 4, 0).unwrap();
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    fn toy_point(s: f64, a: f64) -> Transition {
        Transition {
            s: vec![s],
            a: vec![a],
            r: 0.0,
            s_next: vec![s],
            done: false,
        }
    }

    fn toy_dataset() -> OfflineDataset {
        let pts = [0.0, 0.5, 2.0];
        let mut transitions = Vec::new();
        for s in pts {
            for a in pts {
                transitions.push(toy_point(s, a));
            }
        }
        OfflineDataset::new(
            transitions,
            SpaceDescriptor::Continuous {
                state_dim: 1,
                action_dim: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn candidates_are_box_neighbors_of_the_anchor() {
        let ds = toy_dataset();
        let cands = neighborhood_candidates(&ds, &[toy_point(0.0, 0.0)], 0.8);
        // exactly the points with both coordinates in {0, 0.5}
        let expect: Vec<usize> = ds
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.s[0] <= 0.5 && t.a[0] <= 0.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(cands, expect);
        assert_eq!(cands.len(), 4);
    }

    #[test]
    fn candidate_sets_grow_with_radius() {
        let ds = toy_dataset();
        let anchor = [toy_point(0.5, 0.5)];
        let small = neighborhood_candidates(&ds, &anchor, 0.4);
        let large = neighborhood_candidates(&ds, &anchor, 1.6);
        assert!(small.iter().all(|i| large.contains(i)));
        assert!(large.len() > small.len());
    }

    #[test]
    fn drop_ratio_zero_keeps_everything() {
        let ds = toy_dataset();
        let (kept, anchors, n_cand) = neighborhood_drop(&ds, 2, 0.8, 0.0, 4).unwrap();
        assert_eq!(kept.len(), ds.len());
        assert_eq!(anchors.len(), 2);
        assert!(n_cand >= 2);
    }

    #[test]
    fn drop_ratio_one_removes_exactly_the_candidates() {
        let ds = toy_dataset();
        let seed = 9;
        let (kept, anchors, n_cand) = neighborhood_drop(&ds, 1, 0.8, 1.0, seed).unwrap();
        assert_eq!(kept.len(), ds.len() - n_cand);
        let cands = neighborhood_candidates(&ds, &anchors, 0.8);
        assert_eq!(cands.len(), n_cand);
        for (i, t) in ds.transitions.iter().enumerate() {
            let should_keep = !cands.contains(&i);
            assert_eq!(kept.transitions.contains(t), should_keep);
        }
    }

    #[test]
    fn drops_are_nested_across_ratios_with_shared_seed() {
        let mdp = random_mdp(4, 3, 0.9, 2);
        let ds = collect(&mdp, &TabularPolicy::uniform(4, 3), 20, 10, 5).unwrap();
        let seed = 31;
        let (kept_half, anchors_half, n1) = neighborhood_drop(&ds, 5, 0.8, 0.5, seed).unwrap();
        let (kept_full, anchors_full, n2) = neighborhood_drop(&ds, 5, 0.8, 1.0, seed).unwrap();
        assert_eq!(anchors_half, anchors_full);
        assert_eq!(n1, n2);
        assert_eq!(kept_half.len(), ds.len() - (0.5 * n1 as f64).round() as usize);
        assert_eq!(kept_full.len(), ds.len() - n1);
    }

    #[test]
    fn drop_rejects_too_many_anchors() {
        let ds = toy_dataset();
        assert!(neighborhood_drop(&ds, ds.len() + 1, 0.8, 0.5, 0).is_err());
    }

    #[test]
    fn behavior_estimate_recovers_deterministic_policy() {
        let mdp = chain_mdp(3, 0.2, 0.9);
        let right = TabularPolicy::greedy(&[1, 1, 1], 2);
        let ds = collect(&mdp, &right, 10, 5, 1).unwrap();
        let est = estimate_behavior_policy(&ds).unwrap();
        for s in 0..3 {
            if ds.transitions.iter().any(|t| t.s_index() == s) {
                assert_eq!(est.probs[[s, 1]], 1.0);
            }
        }
    }

    #[test]
    fn behavior_estimate_uses_uniform_fallback() {
        let ds = OfflineDataset::new(
            vec![Transition::tabular(0, 1, 0.0, 0)],
            SpaceDescriptor::Tabular {
                n_states: 3,
                n_actions: 2,
            },
        )
        .unwrap();
        let est = estimate_behavior_policy(&ds).unwrap();
        assert_eq!(est.probs[[1, 0]], 0.5);
        assert_eq!(est.probs[[2, 1]], 0.5);
        assert_eq!(est.probs[[0, 1]], 1.0);
    }

    #[test]
    fn behavior_estimate_is_consistent() {
        let mdp = random_mdp(3, 3, 0.9, 44);
        let mu = TabularPolicy::random(3, 3, &mut StdRng::seed_from_u64(45));
        let ds = collect(&mdp, &mu, 1000, 10, 46).unwrap();
        let est = estimate_behavior_policy(&ds).unwrap();
        let mut counts = vec![0.0; 3];
        for t in &ds.transitions {
            counts[t.s_index()] += 1.0;
        }
        for s in 0..3 {
            for a in 0..3 {
                let p = mu.probs[[s, a]];
                let se = (p * (1.0 - p) / counts[s]).sqrt();
                assert!(
                    (est.probs[[s, a]] - p).abs() <= 3.0 * se + 1e-9,
                    "state {s} action {a}"
                );
            }
        }
        // rows always sum to one
        for s in 0..3 {
            assert!((est.probs.row(s).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mdp = random_mdp(3, 2, 0.9, 12);
        let ds = collect(&mdp, &TabularPolicy::uniform(3, 2), 5, 6, 13).unwrap();
        save(&ds, &path).unwrap();
        let back = load(&path).unwrap().as_tabular(3, 2).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn empty_dataset_round_trips_through_an_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let ds = OfflineDataset::new(
            vec![],
            SpaceDescriptor::Continuous {
                state_dim: 0,
                action_dim: 0,
            },
        )
        .unwrap();
        save(&ds, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        let back = load(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&Transition::tabular(0, 0, 0.5, 1)).unwrap();
        let bad = r#"{"s":[0.0],"a":[0.0],"s_next":[1.0],"done":false}"#; // no "r"
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match load(&path) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains('r'), "msg: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn continuous_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cont.jsonl");
        let t = Transition {
            s: vec![0.123456789012345, -3.25],
            a: vec![0.5],
            r: -0.75,
            s_next: vec![1.0 / 3.0, 2.0_f64.sqrt()],
            done: true,
        };
        let ds = OfflineDataset::new(
            vec![t],
            SpaceDescriptor::Continuous {
                state_dim: 2,
                action_dim: 1,
            },
        )
        .unwrap();
        save(&ds, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn grid_embedding_maps_indices_to_coordinates() {
        let mdp = crate::mdp::gridworld_mdp(0.95);
        let ds = collect(&mdp, &TabularPolicy::uniform(25, 4), 3, 8, 2).unwrap();
        let emb = embed_grid_states(&ds, 5).unwrap();
        for (orig, new) in ds.transitions.iter().zip(&emb.transitions) {
            let i = orig.s_index();
            assert_eq!(new.s, vec![(i / 5) as f64, (i % 5) as f64]);
            assert_eq!(new.a, orig.a);
        }
    }

    #[test]
    fn dataset_validates_arity() {
        let t = Transition {
            s: vec![0.0, 1.0],
            a: vec![0.0],
            r: 0.0,
            s_next: vec![0.0, 1.0],
            done: false,
        };
        assert!(OfflineDataset::new(
            vec![t],
            SpaceDescriptor::Tabular {
                n_states: 2,
                n_actions: 2
            }
        )
        .is_err());
    }
}
