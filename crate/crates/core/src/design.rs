//! Test design: which items are administered at which occasion, and how
//! replicated items share difficulty parameters.

use crate::error::{Error, Result};

/// Maps every (occasion, item) cell to one of `D` distinct difficulty
/// parameters. Replicated items (the same content administered at two
/// occasions) point at the same difficulty index, which is what places all
/// occasions on a common ability scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemDesign {
    /// `difficulty[t][j]` = 0-based difficulty index of item `j` at occasion `t`.
    difficulty: Vec<Vec<usize>>,
    n_difficulties: usize,
}

impl ItemDesign {
    /// Builds a design from the per-occasion difficulty assignment.
    ///
    /// Difficulty indices are 0-based and must jointly cover `0..D` with no
    /// gaps; every cell maps to exactly one index by construction of the input.
    pub fn new(difficulty: Vec<Vec<usize>>) -> Result<Self> {
        if difficulty.is_empty() {
            return Err(Error::InvalidDesign("design has no occasions".into()));
        }
        if difficulty.iter().any(|row| row.is_empty()) {
            return Err(Error::InvalidDesign(
                "every occasion must administer at least one item".into(),
            ));
        }
        let n_difficulties = difficulty
            .iter()
            .flat_map(|row| row.iter())
            .copied()
            .max()
            .map_or(0, |d| d + 1);
        let mut seen = vec![false; n_difficulties];
        for row in &difficulty {
            for &d in row {
                seen[d] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDesign(format!(
                "difficulty index {} is never referenced by any (occasion, item)",
                missing + 1
            )));
        }
        Ok(Self {
            difficulty,
            n_difficulties,
        })
    }

    /// Design with no replicated items: every cell gets its own difficulty.
    pub fn unlinked(items_per_occasion: &[usize]) -> Result<Self> {
        let mut next = 0;
        let difficulty = items_per_occasion
            .iter()
            .map(|&j| {
                (0..j)
                    .map(|_| {
                        let d = next;
                        next += 1;
                        d
                    })
                    .collect()
            })
            .collect();
        Self::new(difficulty)
    }

    /// Builds a design from 1-based `(occasion, item, difficulty_id)` triples,
    /// the serialized CSV form. Items at each occasion must be 1..J_t, each
    /// exactly once.
    pub fn from_triples(triples: &[(usize, usize, usize)]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::InvalidDesign("design has no rows".into()));
        }
        let n_occasions = triples.iter().map(|&(t, _, _)| t).max().unwrap_or(0);
        if triples.iter().any(|&(t, _, _)| t == 0) {
            return Err(Error::InvalidDesign("occasion indices are 1-based".into()));
        }
        let mut per_occ: Vec<Vec<Option<usize>>> = vec![Vec::new(); n_occasions];
        for &(t, j, d) in triples {
            if j == 0 || d == 0 {
                return Err(Error::InvalidDesign(
                    "item and difficulty indices are 1-based".into(),
                ));
            }
            let row = &mut per_occ[t - 1];
            if row.len() < j {
                row.resize(j, None);
            }
            if row[j - 1].is_some() {
                return Err(Error::InvalidDesign(format!(
                    "duplicate design cell (occasion {t}, item {j})"
                )));
            }
            row[j - 1] = Some(d - 1);
        }
        let mut difficulty = Vec::with_capacity(n_occasions);
        for (t, row) in per_occ.into_iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (j, cell) in row.into_iter().enumerate() {
                match cell {
                    Some(d) => out.push(d),
                    None => {
                        return Err(Error::InvalidDesign(format!(
                            "missing design cell (occasion {}, item {})",
                            t + 1,
                            j + 1
                        )))
                    }
                }
            }
            difficulty.push(out);
        }
        Self::new(difficulty)
    }

    /// 1-based `(occasion, item, difficulty_id)` triples, the CSV row order.
    pub fn to_triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (t, row) in self.difficulty.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                out.push((t + 1, j + 1, d + 1));
            }
        }
        out
    }

    /// Number of occasions T.
    pub fn n_occasions(&self) -> usize {
        self.difficulty.len()
    }

    /// Number of items J_t administered at 0-based occasion `t`.
    pub fn items_at(&self, t: usize) -> usize {
        self.difficulty[t].len()
    }

    /// Per-occasion item counts.
    pub fn items_per_occasion(&self) -> Vec<usize> {
        self.difficulty.iter().map(|row| row.len()).collect()
    }

    /// 0-based difficulty index of item `j` at occasion `t`.
    pub fn difficulty_index(&self, t: usize, j: usize) -> usize {
        self.difficulty[t][j]
    }

    /// Number of distinct difficulty parameters D.
    pub fn n_difficulties(&self) -> usize {
        self.n_difficulties
    }

    /// Total number of administered item cells across occasions.
    pub fn total_items(&self) -> usize {
        self.difficulty.iter().map(|row| row.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicated_items_share_one_difficulty() {
        // occasion 2 repeats the second item of occasion 1
        let design = ItemDesign::new(vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(design.n_difficulties(), 3);
        assert_eq!(design.difficulty_index(0, 1), design.difficulty_index(1, 0));
    }

    #[test]
    fn unreferenced_difficulty_rejected() {
        let err = ItemDesign::new(vec![vec![0, 2]]).unwrap_err();
        assert!(matches!(err, Error::InvalidDesign(_)));
    }

    #[test]
    fn triples_round_trip() {
        let design = ItemDesign::new(vec![vec![0, 1, 2], vec![2, 3]]).unwrap();
        let triples = design.to_triples();
        let rebuilt = ItemDesign::from_triples(&triples).unwrap();
        assert_eq!(design, rebuilt);
    }

    #[test]
    fn missing_cell_in_triples_rejected() {
        // item 2 of occasion 1 missing
        let err = ItemDesign::from_triples(&[(1, 1, 1), (1, 3, 2)]).unwrap_err();
        assert!(err.to_string().contains("occasion 1, item 2"));
    }

    #[test]
    fn unlinked_counts() {
        let design = ItemDesign::unlinked(&[28, 30, 39]).unwrap();
        assert_eq!(design.n_difficulties(), 97);
        assert_eq!(design.total_items(), 97);
        assert_eq!(design.items_per_occasion(), vec![28, 30, 39]);
    }
}
