//! Bounded exemplar store.
//!
//! Two budget modes exist: a fixed number of exemplars per class, or a total
//! capacity |M| shared as ⌊|M| / classes seen⌋ per class. In total mode the
//! lists of older classes shrink as classes arrive. Herding lists are ranked,
//! so shrinking keeps a prefix; random lists are re-drawn from their own
//! contents with a seeded choice.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::rng_for;
use crate::scenario::Task;

const SELECT_STREAM: u64 = 11;
const SHRINK_STREAM: u64 = 12;

/// Norm floor used when normalising extractor features for herding.
pub const FEATURE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryBudget {
    /// Total capacity shared by all seen classes.
    Total(usize),
    /// Fixed number of exemplars per class.
    PerClass(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Herding,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarMemory {
    pub budget: MemoryBudget,
    pub selection: Selection,
    pub seed: u64,
    store: BTreeMap<usize, Vec<usize>>,
}

/// ⌊capacity / num_seen_classes⌋.
pub fn per_class_budget(capacity: usize, num_seen_classes: usize) -> Result<usize> {
    if num_seen_classes == 0 {
        return Err(Error::Parameter("per-class budget needs at least one seen class".into()));
    }
    Ok(capacity / num_seen_classes)
}

/// Greedy herding over the rows of `features` (row `i` belongs to
/// `class_examples[i]`). At each step picks the unselected example whose
/// addition brings the running mean of the selection closest to the class
/// mean. Ties go to the earliest position. Returns up to `k` indices in pick
/// order.
pub fn select_herding(class_examples: &[usize], features: &Matrix, k: usize) -> Result<Vec<usize>> {
    let n = class_examples.len();
    if features.rows() != n {
        return Err(Error::Dimension(format!(
            "{} feature rows for {n} examples",
            features.rows()
        )));
    }
    let k = if k > n {
        warn!("herding asked for {k} exemplars from {n} examples; taking all");
        n
    } else {
        k
    };
    if k == 0 {
        return Ok(Vec::new());
    }
    let d = features.cols();
    let mut mean = vec![0.0; d];
    for row in features.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut running = vec![0.0; d];
    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    for step in 0..k {
        let denom = (step + 1) as f64;
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let dist: f64 = features
                .row(i)
                .iter()
                .zip(&running)
                .zip(&mean)
                .map(|((f, s), m)| {
                    let diff = m - (s + f) / denom;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("k <= n leaves a candidate");
        taken[i] = true;
        for (s, f) in running.iter_mut().zip(features.row(i)) {
            *s += f;
        }
        picked.push(class_examples[i]);
    }
    Ok(picked)
}

impl ExemplarMemory {
    pub fn new(budget: MemoryBudget, selection: Selection, seed: u64) -> Self {
        Self {
            budget,
            selection,
            seed,
            store: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.store.len()
    }

    pub fn total(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn exemplars(&self, class: usize) -> &[usize] {
        self.store.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.store.keys().copied()
    }

    /// Every stored index, class by class.
    pub fn all_indices(&self) -> Vec<usize> {
        self.store.values().flatten().copied().collect()
    }

    pub fn dump(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.store
    }

    /// Budget per class once `num_seen_classes` classes are stored.
    pub fn budget_for(&self, num_seen_classes: usize) -> Result<usize> {
        match self.budget {
            MemoryBudget::Total(capacity) => per_class_budget(capacity, num_seen_classes),
            MemoryBudget::PerClass(k) => Ok(k),
        }
    }

    /// Adds the classes of `task`, shrinking older lists to the new budget
    /// first. `extractor` maps raw inputs to features and is only called in
    /// herding mode; features are L2-normalised before selection.
    pub fn update_after_task<F>(&mut self, train: &Dataset, task: &Task, extractor: F) -> Result<()>
    where
        F: Fn(&Matrix) -> Result<Matrix>,
    {
        if let Some(c) = task.classes.iter().find(|c| self.store.contains_key(c)) {
            return Err(Error::Contract(format!("class {c} is already in memory")));
        }
        let seen = self.store.len() + task.classes.len();
        let budget = self.budget_for(seen)?;

        for (&class, list) in self.store.iter_mut() {
            if list.len() <= budget {
                continue;
            }
            match self.selection {
                Selection::Herding => list.truncate(budget),
                Selection::Random => {
                    let mut rng = rng_for(self.seed, &[SHRINK_STREAM, class as u64, seen as u64]);
                    let mut keep = sample(&mut rng, list.len(), budget).into_vec();
                    keep.sort_unstable();
                    *list = keep.into_iter().map(|k| list[k]).collect();
                }
            }
        }

        let mut by_class: BTreeMap<usize, Vec<usize>> =
            task.classes.iter().map(|&c| (c, Vec::new())).collect();
        for &i in &task.examples {
            let label = train.label_of(i)?;
            by_class
                .get_mut(&label)
                .ok_or_else(|| Error::Contract(format!("example {i} is not in task {}", task.task_id)))?
                .push(i);
        }
        for (class, ids) in by_class {
            let chosen = match self.selection {
                Selection::Herding => {
                    if budget == 0 || ids.is_empty() {
                        Vec::new()
                    } else {
                        let features = extractor(&train.features_of(&ids)?)?.normalized_rows(FEATURE_EPS);
                        select_herding(&ids, &features, budget)?
                    }
                }
                Selection::Random => {
                    let k = budget.min(ids.len());
                    let mut rng = rng_for(self.seed, &[SELECT_STREAM, class as u64]);
                    sample(&mut rng, ids.len(), k).into_iter().map(|p| ids[p]).collect()
                }
            };
            self.store.insert(class, chosen);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use std::collections::BTreeSet;

    fn identity(x: &Matrix) -> Result<Matrix> {
        Ok(x.clone())
    }

    fn task(ds: &Dataset, id: usize, classes: Vec<usize>) -> Task {
        let examples = classes.iter().flat_map(|&c| ds.class_indices(c).iter().copied()).collect();
        Task {
            task_id: id,
            classes,
            examples,
        }
    }

    #[test]
    fn budget_floor_rule() {
        assert_eq!(per_class_budget(2000, 60).unwrap(), 33);
        assert_eq!(per_class_budget(2000, 100).unwrap(), 20);
        assert_eq!(per_class_budget(5, 10).unwrap(), 0);
        assert!(per_class_budget(10, 0).is_err());
    }

    #[test]
    fn herding_all_is_permutation() {
        let f = Matrix::from_rows(&[[0.0], [1.0], [5.0], [2.0]]).unwrap();
        let ids = [10, 11, 12, 13];
        let mut got = select_herding(&ids, &f, 4).unwrap();
        got.sort_unstable();
        assert_eq!(got, ids);
        // asking for more truncates
        assert_eq!(select_herding(&ids, &f, 9).unwrap().len(), 4);
    }

    #[test]
    fn herding_identical_features_keeps_input_order() {
        let f = Matrix::filled(5, 3, 0.7);
        assert_eq!(select_herding(&[4, 3, 9, 1, 0], &f, 3).unwrap(), vec![4, 3, 9]);
    }

    #[test]
    fn herding_first_pick_is_nearest_to_mean() {
        let xs = [-3.0, 0.5, 1.9, 4.0, 7.0];
        let f = Matrix::from_vec(5, 1, xs.to_vec()).unwrap();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let brute = (0..5)
            .min_by(|&a, &b| (xs[a] - mean).abs().total_cmp(&(xs[b] - mean).abs()))
            .unwrap();
        assert_eq!(select_herding(&[0, 1, 2, 3, 4], &f, 1).unwrap(), vec![brute]);
    }

    #[test]
    fn total_mode_shrinks_with_prefix_property() {
        let ds = generate_synthetic(10, 40, 3, 0.4, 1).unwrap();
        let mut mem = ExemplarMemory::new(MemoryBudget::Total(100), Selection::Herding, 0);
        mem.update_after_task(&ds, &task(&ds, 0, (0..5).collect()), identity).unwrap();
        assert!((0..5).all(|c| mem.exemplars(c).len() == 20));
        assert_eq!(mem.total(), 100);
        let before = mem.dump().clone();
        mem.update_after_task(&ds, &task(&ds, 1, (5..10).collect()), identity).unwrap();
        for c in 0..10 {
            assert_eq!(mem.exemplars(c).len(), 10);
        }
        for (c, old) in before {
            assert_eq!(mem.exemplars(c), &old[..10]);
        }
    }

    #[test]
    fn per_class_mode_never_shrinks() {
        let ds = generate_synthetic(6, 30, 3, 0.4, 1).unwrap();
        let mut mem = ExemplarMemory::new(MemoryBudget::PerClass(20), Selection::Herding, 0);
        mem.update_after_task(&ds, &task(&ds, 0, vec![0, 1]), identity).unwrap();
        let first = mem.exemplars(0).to_vec();
        mem.update_after_task(&ds, &task(&ds, 1, vec![2, 3, 4, 5]), identity).unwrap();
        assert_eq!(mem.exemplars(0), first.as_slice());
        assert!((0..6).all(|c| mem.exemplars(c).len() == 20));
    }

    #[test]
    fn random_mode_invariants_and_determinism() {
        let ds = generate_synthetic(9, 30, 3, 0.4, 1).unwrap();
        let run = || {
            let mut mem = ExemplarMemory::new(MemoryBudget::Total(45), Selection::Random, 3);
            for (t, classes) in [vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]].into_iter().enumerate() {
                mem.update_after_task(&ds, &task(&ds, t, classes), |_| unreachable!()).unwrap();
                assert!(mem.total() <= 45);
            }
            mem
        };
        let a = run();
        assert_eq!(a, run());
        let all = a.all_indices();
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), all.len());
        for c in a.classes() {
            assert_eq!(a.exemplars(c).len(), 5);
            assert!(a.exemplars(c).iter().all(|&i| ds.label_of(i).unwrap() == c));
        }
    }

    #[test]
    fn small_classes_store_what_exists() {
        let ds = generate_synthetic(2, 3, 2, 0.4, 1).unwrap();
        let mut mem = ExemplarMemory::new(MemoryBudget::PerClass(10), Selection::Herding, 0);
        mem.update_after_task(&ds, &task(&ds, 0, vec![0, 1]), identity).unwrap();
        assert_eq!(mem.exemplars(0).len(), 3);
    }

    #[test]
    fn rejects_repeated_class() {
        let ds = generate_synthetic(2, 3, 2, 0.4, 1).unwrap();
        let mut mem = ExemplarMemory::new(MemoryBudget::PerClass(1), Selection::Herding, 0);
        mem.update_after_task(&ds, &task(&ds, 0, vec![0]), identity).unwrap();
        assert!(mem.update_after_task(&ds, &task(&ds, 1, vec![0]), identity).is_err());
    }
}
