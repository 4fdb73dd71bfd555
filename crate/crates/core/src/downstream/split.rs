use serde::Serialize;

use crate::corpus::{LearningSequence, MIN_SEQUENCE_LEN};

/// Leave-one-out split of one student's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LooSplit {
    pub student: usize,
    pub train: Vec<usize>,
    pub val: usize,
    pub test: usize,
}

impl LooSplit {
    /// Everything before the test item.
    pub fn history(&self) -> Vec<usize> {
        let mut h = self.train.clone();
        h.push(self.val);
        h
    }

    pub fn full(&self) -> Vec<usize> {
        let mut h = self.history();
        h.push(self.test);
        h
    }
}

/// Splits every sequence of at least [`MIN_SEQUENCE_LEN`] items; output is
/// ordered by student.
pub fn loo_split(sequences: &[LearningSequence]) -> Vec<LooSplit> {
    let mut out: Vec<LooSplit> = sequences
        .iter()
        .filter(|s| s.len() >= MIN_SEQUENCE_LEN)
        .map(|s| {
            let n = s.len();
            LooSplit {
                student: s.student,
                train: s.items[..n - 2].to_vec(),
                val: s.items[n - 2],
                test: s.items[n - 1],
            }
        })
        .collect();
    out.sort_by_key(|s| s.student);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(student: usize, items: &[usize]) -> LearningSequence {
        LearningSequence {
            student,
            items: items.to_vec(),
        }
    }

    #[test]
    fn last_two_are_held_out() {
        let s = loo_split(&[seq(0, &[1, 2, 3, 4, 5])]);
        assert_eq!(s[0].train, [1, 2, 3]);
        assert_eq!((s[0].val, s[0].test), (4, 5));
        assert_eq!(s[0].full(), [1, 2, 3, 4, 5]);
    }

    #[test]
    fn order_independent_and_filters_short() {
        let a = [seq(1, &[1, 2, 3, 4, 5, 6]), seq(0, &[9, 8, 7, 6, 5]), seq(2, &[1, 2])];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(loo_split(&a), loo_split(&b));
        assert_eq!(loo_split(&a).len(), 2);
    }
}
