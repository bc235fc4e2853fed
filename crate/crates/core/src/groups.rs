//! Partitions of the component indices into groups.

use crate::error::{MicaError, Result};

/// An ordered partition `(p_1, ..., p_m)` of `p` components together with the
/// component-to-group map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupStructure {
    sizes: Vec<usize>,
    assignment: Vec<usize>,
}

impl GroupStructure {
    pub fn new(sizes: Vec<usize>, assignment: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(MicaError::InvalidGroups(format!("bad sizes {sizes:?}")));
        }
        if sizes.iter().sum::<usize>() != assignment.len() {
            return Err(MicaError::InvalidGroups(format!(
                "sizes {sizes:?} do not sum to p = {}",
                assignment.len()
            )));
        }
        let mut counts = vec![0usize; sizes.len()];
        for &g in &assignment {
            if g >= sizes.len() {
                return Err(MicaError::InvalidGroups(format!("group index {g} out of range")));
            }
            counts[g] += 1;
        }
        if counts != sizes {
            return Err(MicaError::InvalidGroups(format!(
                "assignment counts {counts:?} disagree with sizes {sizes:?}"
            )));
        }
        Ok(Self { sizes, assignment })
    }

    /// Groups laid out contiguously: the first `sizes[0]` components form
    /// group 0, and so on.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
            .collect();
        Self::new(sizes.to_vec(), assignment)
    }

    pub fn singletons(p: usize) -> Self {
        Self {
            sizes: vec![1; p],
            assignment: (0..p).collect(),
        }
    }

    /// Canonical structure from unordered member lists: groups sorted by
    /// descending size, then by smallest member.
    pub fn from_components(p: usize, mut components: Vec<Vec<usize>>) -> Result<Self> {
        for c in components.iter_mut() {
            c.sort_unstable();
        }
        components.retain(|c| !c.is_empty());
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let mut assignment = vec![usize::MAX; p];
        for (g, members) in components.iter().enumerate() {
            for &k in members {
                if k >= p || assignment[k] != usize::MAX {
                    return Err(MicaError::InvalidGroups(format!("member {k} invalid or repeated")));
                }
                assignment[k] = g;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(MicaError::InvalidGroups("components do not cover all indices".into()));
        }
        Self::new(components.iter().map(Vec::len).collect(), assignment)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_singletons(&self) -> bool {
        self.sizes.iter().all(|&s| s == 1)
    }

    /// Members of group `g` in increasing order.
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.p()).filter(|&k| self.assignment[k] == g).collect()
    }

    pub fn all_members(&self) -> Vec<Vec<usize>> {
        (0..self.group_count()).map(|g| self.members(g)).collect()
    }

    /// Column order that makes each group contiguous, groups in index order.
    pub fn contiguous_order(&self) -> Vec<usize> {
        self.all_members().into_iter().flatten().collect()
    }

    /// Whether the group sizes, compared in canonical (descending) order,
    /// match.
    pub fn same_sizes(&self, other: &GroupStructure) -> bool {
        let mut a = self.sizes.clone();
        let mut b = other.sizes.clone();
        a.sort_unstable_by(|x, y| y.cmp(x));
        b.sort_unstable_by(|x, y| y.cmp(x));
        a == b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(GroupStructure::new(vec![2, 1], vec![0, 1, 0]).is_ok());
        assert!(GroupStructure::new(vec![2, 1], vec![0, 1, 1]).is_err());
        assert!(GroupStructure::new(vec![2, 0, 1], vec![0, 0, 2]).is_err());
        assert!(GroupStructure::new(vec![3], vec![0, 0]).is_err());
    }

    #[test]
    fn canonical_order() {
        let g = GroupStructure::from_components(5, vec![vec![4], vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(g.sizes(), &[2, 2, 1]);
        assert_eq!(g.assignment(), &[0, 1, 0, 1, 2]);
        assert_eq!(g.contiguous_order(), vec![0, 2, 1, 3, 4]);
        let c = GroupStructure::contiguous(&[3, 2, 1]).unwrap();
        assert_eq!(c.assignment(), &[0, 0, 0, 1, 1, 2]);
        assert!(c.same_sizes(&GroupStructure::contiguous(&[1, 3, 2]).unwrap()));
    }
}
