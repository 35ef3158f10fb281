//! Long-tailed class profiles and task sequences.
//!
//! A profile assigns sample counts to class *ranks*:
//! `counts[r] = max(1, round(n_max · ρ^(r / (C − 1))))`, rounding half up.
//! Builders then map ranks to concrete classes and split the classes into
//! tasks: a base task of `base_classes` classes followed by `num_tasks − 1`
//! tasks sharing the rest, with the earliest of them taking one extra class
//! when the split is uneven.
//!
//! - Ordered: tasks follow rank order, so the base task holds the most
//!   frequent classes and the last task the rarest.
//! - Shuffled: counts go to classes by one seeded permutation, task membership
//!   follows a second, independent permutation.
//! - Conventional: shuffled with ρ = 1.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_for;

const COUNT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const SUBSAMPLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub rho: f64,
    pub n_max: usize,
    /// Sample count per rank, rank 0 most frequent.
    pub counts: Vec<usize>,
}

impl ImbalanceProfile {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Ordered,
    Shuffled,
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub classes: Vec<usize>,
    /// Stable dataset indices of the task's training examples, ascending.
    pub examples: Vec<usize>,
}

/// An ordered list of tasks over a long-tailed (or balanced) training pool.
///
/// Serialises directly to the JSON manifest consumed by external trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub scenario_kind: ScenarioKind,
    pub seed: u64,
    /// Every used class in task order.
    pub class_order: Vec<usize>,
    /// Training examples kept per class after the long-tail cut.
    pub class_counts: BTreeMap<usize, usize>,
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Classes introduced by tasks `0..=t`, in task order.
    pub fn classes_through(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t].iter().flat_map(|task| task.classes.iter().copied()).collect()
    }

    /// Per-task sorted list of class counts.
    pub fn task_count_multisets(&self) -> Vec<Vec<usize>> {
        self.tasks
            .iter()
            .map(|t| {
                let mut v: Vec<usize> = t.classes.iter().map(|c| self.class_counts[c]).collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    /// Checks the structural invariants against the dataset the sequence was built from.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen_class = BTreeMap::new();
        let mut seen_example = std::collections::BTreeSet::new();
        for task in &self.tasks {
            for &c in &task.classes {
                if seen_class.insert(c, task.task_id).is_some() {
                    return Err(Error::Contract(format!("class {c} appears in two tasks")));
                }
            }
            let mut per_class = BTreeMap::new();
            for &i in &task.examples {
                let label = ds.label_of(i)?;
                if !task.classes.contains(&label) {
                    return Err(Error::Contract(format!(
                        "task {} holds example {i} of foreign class {label}",
                        task.task_id
                    )));
                }
                if !seen_example.insert(i) {
                    return Err(Error::Contract(format!("example {i} used twice")));
                }
                *per_class.entry(label).or_insert(0usize) += 1;
            }
            for &c in &task.classes {
                if per_class.get(&c).copied().unwrap_or(0) != self.class_counts[&c] {
                    return Err(Error::Contract(format!("class {c} count disagrees with class_counts")));
                }
            }
        }
        let ordered: Vec<usize> = self.tasks.iter().flat_map(|t| t.classes.iter().copied()).collect();
        if ordered != self.class_order {
            return Err(Error::Contract("class_order disagrees with task classes".into()));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub fn make_profile(num_classes: usize, n_max: usize, rho: f64) -> Result<ImbalanceProfile> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Parameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    if num_classes == 0 || n_max == 0 {
        return Err(Error::Parameter("num_classes and n_max must be at least 1".into()));
    }
    let counts = if num_classes == 1 {
        vec![n_max]
    } else {
        let last = (num_classes - 1) as f64;
        (0..num_classes)
            .map(|r| round_half_up(n_max as f64 * rho.powf(r as f64 / last)).clamp(1, n_max))
            .collect()
    };
    Ok(ImbalanceProfile { rho, n_max, counts })
}

/// Number of classes per task: the base task first, then an even split of
/// the remainder with the earliest tasks absorbing any excess.
pub fn task_sizes(num_classes: usize, num_tasks: usize, base_classes: usize) -> Result<Vec<usize>> {
    if num_tasks == 0 {
        return Err(Error::Parameter("num_tasks must be at least 1".into()));
    }
    if num_tasks == 1 {
        return Ok(vec![num_classes]);
    }
    if base_classes == 0 || base_classes >= num_classes {
        return Err(Error::Parameter(format!(
            "base_classes must lie in 1..{num_classes} for {num_tasks} tasks, got {base_classes}"
        )));
    }
    let rest = num_classes - base_classes;
    let later = num_tasks - 1;
    if rest < later {
        return Err(Error::Parameter(format!(
            "{rest} classes cannot fill {later} incremental tasks"
        )));
    }
    let (each, extra) = (rest / later, rest % later);
    let mut sizes = vec![base_classes];
    sizes.extend((0..later).map(|k| each + usize::from(k < extra)));
    Ok(sizes)
}

pub fn default_base_classes(num_classes: usize) -> usize {
    num_classes.div_ceil(2)
}

fn seeded_permutation(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng_for(seed, &[stream]));
    v
}

fn check_profile_fits(ds: &Dataset, profile: &ImbalanceProfile) -> Result<()> {
    if profile.num_classes() > ds.num_classes() {
        return Err(Error::Parameter(format!(
            "profile has {} classes but the dataset only {}",
            profile.num_classes(),
            ds.num_classes()
        )));
    }
    Ok(())
}

fn assemble(
    ds: &Dataset,
    kind: ScenarioKind,
    counts: BTreeMap<usize, usize>,
    class_order: Vec<usize>,
    num_tasks: usize,
    base_classes: usize,
    seed: u64,
) -> Result<TaskSequence> {
    let sizes = task_sizes(class_order.len(), num_tasks, base_classes)?;
    let mut kept = BTreeMap::new();
    for (&c, &n) in &counts {
        let pool = ds.class_indices(c);
        if pool.len() < n {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: n,
                available: pool.len(),
            });
        }
        let mut rng = rng_for(seed, &[SUBSAMPLE_STREAM, c as u64]);
        let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), n).into_iter().map(|k| pool[k]).collect();
        chosen.sort_unstable();
        kept.insert(c, chosen);
    }
    let mut tasks = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for (task_id, size) in sizes.into_iter().enumerate() {
        let classes = class_order[offset..offset + size].to_vec();
        offset += size;
        let mut examples: Vec<usize> = classes.iter().flat_map(|c| kept[c].iter().copied()).collect();
        examples.sort_unstable();
        tasks.push(Task {
            task_id,
            classes,
            examples,
        });
    }
    Ok(TaskSequence {
        scenario_kind: kind,
        seed,
        class_order,
        class_counts: counts,
        tasks,
    })
}

/// Classes ranked by a seeded permutation; tasks follow rank order.
pub fn build_ordered(
    ds: &Dataset,
    profile: &ImbalanceProfile,
    num_tasks: usize,
    base_classes: usize,
    seed: u64,
) -> Result<TaskSequence> {
    check_profile_fits(ds, profile)?;
    let ranked: Vec<usize> = seeded_permutation(ds.num_classes(), seed, ORDER_STREAM)
        .into_iter()
        .take(profile.num_classes())
        .collect();
    let counts = ranked.iter().copied().zip(profile.counts.iter().copied()).collect();
    assemble(ds, ScenarioKind::Ordered, counts, ranked, num_tasks, base_classes, seed)
}

pub fn build_shuffled(
    ds: &Dataset,
    profile: &ImbalanceProfile,
    num_tasks: usize,
    base_classes: usize,
    seed: u64,
) -> Result<TaskSequence> {
    build_shuffled_as(ds, profile, num_tasks, base_classes, seed, ScenarioKind::Shuffled)
}

fn build_shuffled_as(
    ds: &Dataset,
    profile: &ImbalanceProfile,
    num_tasks: usize,
    base_classes: usize,
    seed: u64,
    kind: ScenarioKind,
) -> Result<TaskSequence> {
    check_profile_fits(ds, profile)?;
    let used: Vec<usize> = seeded_permutation(ds.num_classes(), seed, COUNT_STREAM)
        .into_iter()
        .take(profile.num_classes())
        .collect();
    let counts: BTreeMap<usize, usize> = used.iter().copied().zip(profile.counts.iter().copied()).collect();
    let mut by_id: Vec<usize> = used;
    by_id.sort_unstable();
    let class_order = seeded_permutation(by_id.len(), seed, ORDER_STREAM)
        .into_iter()
        .map(|k| by_id[k])
        .collect();
    assemble(ds, kind, counts, class_order, num_tasks, base_classes, seed)
}

/// Balanced sequence over every class of `ds` with `per_class` examples each.
pub fn build_conventional(
    ds: &Dataset,
    num_tasks: usize,
    base_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<TaskSequence> {
    let profile = make_profile(ds.num_classes(), per_class, 1.0)?;
    build_shuffled_as(ds, &profile, num_tasks, base_classes, seed, ScenarioKind::Conventional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use proptest::prelude::*;

    #[test]
    fn profile_endpoints() {
        let p = make_profile(100, 500, 0.01).unwrap();
        assert_eq!(p.counts[0], 500);
        assert_eq!(p.counts[99], 5);
        assert_eq!(p.counts[50], 49);
        assert!(make_profile(100, 500, 1.0).unwrap().counts.iter().all(|&n| n == 500));
        assert_eq!(make_profile(1, 7, 0.5).unwrap().counts, vec![7]);
    }

    #[test]
    fn profile_rejects_rho() {
        for rho in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(make_profile(10, 10, rho), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn floor_of_one() {
        let p = make_profile(10, 10, 0.001).unwrap();
        assert_eq!(*p.counts.last().unwrap(), 1);
    }

    #[test]
    fn sizes_split_rule() {
        assert_eq!(task_sizes(100, 6, 50).unwrap(), vec![50, 10, 10, 10, 10, 10]);
        assert_eq!(task_sizes(20, 5, 10).unwrap(), vec![10, 3, 3, 2, 2]);
        assert_eq!(task_sizes(10, 1, 5).unwrap(), vec![10]);
        assert!(task_sizes(10, 6, 8).is_err());
        assert!(task_sizes(10, 2, 10).is_err());
        assert!(task_sizes(10, 0, 5).is_err());
        assert_eq!(default_base_classes(100), 50);
        assert_eq!(default_base_classes(7), 4);
    }

    fn dataset() -> Dataset {
        generate_synthetic(100, 500, 2, 0.5, 1).unwrap()
    }

    #[test]
    fn ordered_protocol_split() {
        let ds = dataset();
        let p = make_profile(100, 500, 0.01).unwrap();
        let seq = build_ordered(&ds, &p, 6, 50, 3).unwrap();
        let sizes: Vec<usize> = seq.tasks.iter().map(|t| t.classes.len()).collect();
        assert_eq!(sizes, vec![50, 10, 10, 10, 10, 10]);
        seq.validate(&ds).unwrap();
        for w in seq.tasks.windows(2) {
            let min_here = w[0].classes.iter().map(|c| seq.class_counts[c]).min().unwrap();
            let max_next = w[1].classes.iter().map(|c| seq.class_counts[c]).max().unwrap();
            assert!(min_here >= max_next);
        }
        let along: Vec<usize> = seq.class_order.iter().map(|c| seq.class_counts[c]).collect();
        assert!(along.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn single_task_holds_everything() {
        let ds = generate_synthetic(10, 100, 2, 0.5, 1).unwrap();
        let p = make_profile(10, 100, 0.1).unwrap();
        let seq = build_ordered(&ds, &p, 1, 5, 0).unwrap();
        assert_eq!(seq.num_tasks(), 1);
        assert_eq!(seq.tasks[0].classes.len(), 10);
        let mut counts: Vec<_> = seq.class_counts.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(counts, p.counts);
    }

    #[test]
    fn shuffled_preserves_count_multiset_and_depends_on_seed() {
        let ds = dataset();
        let p = make_profile(100, 500, 0.01).unwrap();
        let a = build_shuffled(&ds, &p, 6, 50, 1).unwrap();
        let b = build_shuffled(&ds, &p, 6, 50, 2).unwrap();
        a.validate(&ds).unwrap();
        let mut counts: Vec<_> = a.class_counts.values().copied().collect();
        counts.sort_unstable_by(|x, y| y.cmp(x));
        assert_eq!(counts, p.counts);
        assert_ne!(a.class_order, b.class_order);
        assert_eq!(a, build_shuffled(&ds, &p, 6, 50, 1).unwrap());
    }

    #[test]
    fn balanced_profiles_agree_across_builders() {
        let ds = generate_synthetic(10, 120, 2, 0.5, 1).unwrap();
        let p = make_profile(10, 100, 1.0).unwrap();
        let o = build_ordered(&ds, &p, 5, 2, 4).unwrap();
        let s = build_shuffled(&ds, &p, 5, 2, 4).unwrap();
        let c = build_conventional(&ds, 5, 2, 100, 4).unwrap();
        assert_eq!(o.task_count_multisets(), s.task_count_multisets());
        assert!(c.tasks.iter().all(|t| t.examples.len() == 200));
        assert_eq!(c.tasks, s.tasks);
        assert_eq!(c.class_order, s.class_order);
        assert_eq!(c.class_counts, s.class_counts);
        assert_eq!(c.scenario_kind, ScenarioKind::Conventional);
    }

    #[test]
    fn conventional_half_base() {
        let ds = generate_synthetic(100, 30, 2, 0.5, 1).unwrap();
        let c = build_conventional(&ds, 6, default_base_classes(100), 20, 0).unwrap();
        let sizes: Vec<usize> = c.tasks.iter().map(|t| t.classes.len()).collect();
        assert_eq!(sizes, vec![50, 10, 10, 10, 10, 10]);
    }

    #[test]
    fn too_few_examples() {
        let ds = generate_synthetic(10, 50, 2, 0.5, 1).unwrap();
        let p = make_profile(10, 100, 0.5).unwrap();
        assert!(matches!(
            build_ordered(&ds, &p, 2, 5, 0),
            Err(Error::InsufficientSamples { available: 50, .. })
        ));
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let ds = generate_synthetic(10, 50, 2, 0.5, 1).unwrap();
        let p = make_profile(10, 50, 0.1).unwrap();
        let seq = build_shuffled(&ds, &p, 3, 4, 9).unwrap();
        let json = serde_json::to_string(&seq).unwrap();
        let back: TaskSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, seq);
    }

    proptest! {
        #[test]
        fn profile_monotone_and_bounded(c in 1usize..150, n_max in 1usize..2000, rho in 0.0001f64..=1.0) {
            let p = make_profile(c, n_max, rho).unwrap();
            prop_assert_eq!(p.counts[0], n_max);
            let floor = round_half_up(n_max as f64 * rho).max(1);
            prop_assert!(p.counts.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(p.counts.iter().all(|&n| n >= floor.min(n_max) && n <= n_max));
            if c > 1 {
                prop_assert_eq!(*p.counts.last().unwrap(), floor);
            }
        }

        #[test]
        fn sequences_partition_classes(seed in 0u64..500, tasks in 1usize..6, ordered: bool) {
            let ds = generate_synthetic(12, 40, 2, 0.5, 3).unwrap();
            let p = make_profile(12, 40, 0.05).unwrap();
            let seq = if ordered {
                build_ordered(&ds, &p, tasks, 6, seed).unwrap()
            } else {
                build_shuffled(&ds, &p, tasks, 6, seed).unwrap()
            };
            prop_assert!(seq.validate(&ds).is_ok());
            let mut all: Vec<usize> = seq.class_order.clone();
            all.sort_unstable();
            prop_assert_eq!(all, (0..12).collect::<Vec<_>>());
        }
    }
}
