use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::schema::{Dataset, StreamRecord};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Records whose value in the split column belongs to `items`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub items: Vec<String>,
    pub records: Vec<StreamRecord>,
}

impl Group {
    /// Seeded `train_fraction` / rest split of the group's records.
    pub fn train_test(&self, train_fraction: f64, seed: u64) -> (Vec<StreamRecord>, Vec<StreamRecord>) {
        train_test_split(&self.records, train_fraction, seed)
    }
}

/// Shuffles the column's vocabulary with `seed` and deals it into
/// `n_groups` near-equal item sets (larger sets last).
pub fn partition_by_vocab(dataset: &Dataset, column: usize, n_groups: usize, seed: u64) -> Result<Vec<Group>> {
    let mut vocab = dataset.vocabulary(column);
    if n_groups == 0 || n_groups > vocab.len() {
        return Err(Error::invalid(format!(
            "cannot split {} items into {n_groups} groups",
            vocab.len()
        )));
    }
    vocab.shuffle(&mut seeded(seed));
    let base = vocab.len() / n_groups;
    let extra = vocab.len() % n_groups;
    let mut sets = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g >= n_groups - extra);
        sets.push(vocab[start..start + size].to_vec());
        start += size;
    }
    partition_by_items(dataset, column, &sets)
}

/// Partition with explicitly listed item sets; every value of the column
/// must belong to exactly one set.
pub fn partition_by_items(dataset: &Dataset, column: usize, sets: &[Vec<String>]) -> Result<Vec<Group>> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (g, set) in sets.iter().enumerate() {
        for item in set {
            if owner.insert(item.as_str(), g).is_some() {
                return Err(Error::config("groups", format!("item `{item}` listed twice")));
            }
        }
    }
    let mut groups: Vec<Group> = sets
        .iter()
        .map(|s| Group {
            items: s.clone(),
            records: Vec::new(),
        })
        .collect();
    for r in &dataset.records {
        let value = &r.categorical[column];
        let g = owner
            .get(value.as_str())
            .ok_or_else(|| Error::data(format!("item `{value}` belongs to no group")))?;
        groups[*g].records.push(r.clone());
    }
    Ok(groups)
}

pub fn train_test_split(records: &[StreamRecord], train_fraction: f64, seed: u64) -> (Vec<StreamRecord>, Vec<StreamRecord>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = (train_fraction * records.len() as f64).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect();
    (pick(&idx[..n_train]), pick(&idx[n_train..]))
}

/// Seeded split of `0..n` into an initialisation set (`fraction` of the
/// rows, rounded up) and the remaining stream, each in ascending order when
/// `keep_order` is set, shuffled otherwise.
pub fn init_split(n: usize, fraction: f64, seed: u64, keep_order: bool) -> (Vec<usize>, Vec<usize>) {
    let n_init = ((fraction * n as f64).ceil() as usize).min(n);
    if keep_order {
        return ((0..n_init).collect(), (n_init..n).collect());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let rest = idx.split_off(n_init);
    (idx, rest)
}

/// Consecutive chunks of `batch_size` records.
pub fn batches(records: &[StreamRecord], batch_size: usize) -> Vec<Vec<StreamRecord>> {
    records.chunks(batch_size.max(1)).map(<[StreamRecord]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::schema::{ColumnKind, ColumnSpec, Schema};
    use crate::likelihoods::Target;

    fn dataset(items: &[&str], copies: usize) -> Dataset {
        let schema = Schema::new(vec![
            ColumnSpec::new("c", ColumnKind::Categorical),
            ColumnSpec::new("y", ColumnKind::TargetClass),
        ])
        .unwrap();
        let records = (0..copies)
            .flat_map(|i| {
                items.iter().map(move |s| StreamRecord {
                    categorical: vec![s.to_string()],
                    numeric: vec![],
                    target: Target::Class(i % 2),
                    timestamp: None,
                })
            })
            .collect();
        Dataset {
            schema,
            class_labels: vec!["0".into(), "1".into()],
            records,
        }
    }

    #[test]
    fn eight_items_four_groups() {
        let d = dataset(&["a", "b", "c", "d", "e", "f", "g", "h"], 3);
        let groups = partition_by_vocab(&d, 0, 4, 1).unwrap();
        assert!(groups.iter().all(|g| g.items.len() == 2 && g.records.len() == 6));
        let total: usize = groups.iter().map(|g| g.records.len()).sum();
        assert_eq!(total, d.records.len());
        for (i, a) in groups.iter().enumerate() {
            for b in &groups[i + 1..] {
                assert!(a.items.iter().all(|x| !b.items.contains(x)));
            }
        }
    }

    #[test]
    fn nine_items_give_two_two_two_three() {
        let d = dataset(&["n", "a", "l", "p", "f", "c", "y", "s", "m"], 1);
        let sizes: Vec<usize> = partition_by_vocab(&d, 0, 4, 7).unwrap().iter().map(|g| g.items.len()).collect();
        assert_eq!(sizes, vec![2, 2, 2, 3]);
        assert!(partition_by_vocab(&d, 0, 10, 7).is_err());
    }

    #[test]
    fn two_to_one_split() {
        let d = dataset(&["a"], 30);
        let (train, test) = train_test_split(&d.records, 2.0 / 3.0, 3);
        assert_eq!((train.len(), test.len()), (20, 10));
        assert_eq!(train_test_split(&d.records, 2.0 / 3.0, 3), (train, test));
    }

    #[test]
    fn init_split_partitions_indices() {
        let (a, b) = init_split(10, 0.2, 4, false);
        assert_eq!((a.len(), b.len()), (2, 8));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(init_split(5, 0.4, 0, true), (vec![0, 1], vec![2, 3, 4]));
    }
}
