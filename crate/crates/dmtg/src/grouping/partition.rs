//! Hard assignments of tasks to groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GroupingError;

/// Assignment of each of N tasks to exactly one group. Empty groups are
/// allowed; labels are not required to be contiguous unless canonicalized.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    assignment: Vec<usize>,
}

impl Partition {
    /// Validates that every label is below `k`.
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self, GroupingError> {
        if assignment.is_empty() {
            return Err(GroupingError::EmptyAssignment);
        }
        for (task, &label) in assignment.iter().enumerate() {
            if label >= k {
                return Err(GroupingError::LabelOutOfRange { task, label, k });
            }
        }
        Ok(Partition { assignment })
    }

    /// No label check; for callers that construct canonical labelings.
    pub fn from_labels(assignment: Vec<usize>) -> Self {
        Partition { assignment }
    }

    pub fn all_in_one(n: usize) -> Self {
        Partition {
            assignment: vec![0; n],
        }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, task: usize) -> usize {
        self.assignment[task]
    }

    pub fn labels(&self) -> &[usize] {
        &self.assignment
    }

    /// Relabels groups by first occurrence, e.g. `[2,2,0]` becomes `[0,0,1]`.
    pub fn canonical(&self) -> Partition {
        let mut map: Vec<Option<usize>> = vec![None; self.assignment.iter().max().map_or(0, |m| m + 1)];
        let mut next = 0;
        let assignment = self
            .assignment
            .iter()
            .map(|&label| {
                *map[label].get_or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect();
        Partition { assignment }
    }

    /// Equality up to group relabeling.
    pub fn is_equivalent(&self, other: &Partition) -> bool {
        self.assignment.len() == other.assignment.len() && self.canonical() == other.canonical()
    }

    /// Member task ids per non-empty group, ordered by first occurrence.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let canon = self.canonical();
        let n_groups = canon.assignment.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_groups];
        for (task, &g) in canon.assignment.iter().enumerate() {
            groups[g].push(task);
        }
        groups
    }

    /// Number of non-empty groups.
    pub fn num_groups(&self) -> usize {
        self.groups().len()
    }
}

impl fmt::Display for Partition {
    /// Canonical text form, e.g. `0|0|1|2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.assignment.iter().map(|g| g.to_string()).collect();
        write!(f, "{}", parts.join("|"))
    }
}

impl FromStr for Partition {
    type Err = GroupingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let assignment = s
            .split('|')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| GroupingError::BadPartitionString(s.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if assignment.is_empty() {
            return Err(GroupingError::EmptyAssignment);
        }
        Ok(Partition { assignment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_relabels_by_first_occurrence() {
        let p = Partition::from_labels(vec![2, 2, 0, 1]);
        assert_eq!(p.canonical().labels(), &[0, 0, 1, 2]);
    }

    #[test]
    fn equivalence_ignores_labels() {
        let a = Partition::from_labels(vec![0, 0, 1]);
        let b = Partition::from_labels(vec![1, 1, 0]);
        assert!(a.is_equivalent(&b));
        let c = Partition::from_labels(vec![0, 1, 1]);
        assert!(!a.is_equivalent(&c));
    }

    #[test]
    fn empty_groups_are_allowed() {
        // all tasks on group 1 of k=3: groups 0 and 2 stay empty
        let p = Partition::new(vec![1, 1, 1], 3).unwrap();
        assert_eq!(p.num_groups(), 1);
    }

    #[test]
    fn label_bound_is_enforced() {
        assert!(matches!(
            Partition::new(vec![0, 3], 3),
            Err(GroupingError::LabelOutOfRange { task: 1, label: 3, k: 3 })
        ));
    }

    #[test]
    fn display_and_parse_round_trip() {
        let p = Partition::from_labels(vec![0, 0, 1, 2]);
        assert_eq!(p.to_string(), "0|0|1|2");
        let back: Partition = "0|0|1|2".parse().unwrap();
        assert_eq!(back, p);
    }
}
