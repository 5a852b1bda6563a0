//! Word and insertion error rates from minimal edit-distance alignments.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl AlignmentCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn matches(&self) -> usize {
        self.ref_len - self.substitutions - self.deletions
    }

    pub fn hyp_len(&self) -> usize {
        self.matches() + self.substitutions + self.insertions
    }

    /// `(S+D+I) / max(N, 1)` as a fraction.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.ref_len.max(1) as f64
    }

    /// `I / max(N, 1)` as a fraction.
    pub fn ier(&self) -> f64 {
        self.insertions as f64 / self.ref_len.max(1) as f64
    }
}

impl Add for AlignmentCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl AddAssign for AlignmentCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for AlignmentCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn wer(c: &AlignmentCounts) -> f64 {
    c.wer()
}

pub fn ier(c: &AlignmentCounts) -> f64 {
    c.ier()
}

// (edits, insertions, deletions, substitutions), compared lexicographically.
type Cost = (usize, usize, usize, usize);

fn step(c: Cost, ins: usize, del: usize, sub: usize) -> Cost {
    (c.0 + ins + del + sub, c.1 + ins, c.2 + del, c.3 + sub)
}

/// Unit-cost Levenshtein alignment. Among minimal alignments the one with
/// the fewest insertions wins, then the fewest deletions.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> AlignmentCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut prev: Vec<Cost> = (0..=m).map(|j| (j, j, 0, 0)).collect();
    let mut cur = vec![(0, 0, 0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0, i, 0);
        for j in 1..=m {
            let diag = if reference[i - 1] == hyp[j - 1] {
                prev[j - 1]
            } else {
                step(prev[j - 1], 0, 0, 1)
            };
            let del = step(prev[j], 0, 1, 0);
            let ins = step(cur[j - 1], 1, 0, 0);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (_, insertions, deletions, substitutions) = prev[m];
    AlignmentCounts {
        substitutions,
        deletions,
        insertions,
        ref_len: n,
    }
}

/// Pooled counts for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub set: String,
    pub counts: AlignmentCounts,
    pub utterances: usize,
}

/// Machine-readable form of a [`CorpusReport`]; rates are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub set: String,
    pub wer: f64,
    pub ier: f64,
    pub s: usize,
    pub d: usize,
    pub i: usize,
    pub n: usize,
}

impl CorpusReport {
    pub fn wer(&self) -> f64 {
        self.counts.wer()
    }

    pub fn ier(&self) -> f64 {
        self.counts.ier()
    }

    /// `NAME\tWER% (IER%)\tS D I N`.
    pub fn line(&self) -> String {
        let c = &self.counts;
        format!(
            "{}\t{:.2}% ({:.2}%)\t{} {} {} {}",
            self.set,
            100.0 * c.wer(),
            100.0 * c.ier(),
            c.substitutions,
            c.deletions,
            c.insertions,
            c.ref_len
        )
    }

    pub fn record(&self) -> ReportRecord {
        let c = &self.counts;
        ReportRecord {
            set: self.set.clone(),
            wer: 100.0 * c.wer(),
            ier: 100.0 * c.ier(),
            s: c.substitutions,
            d: c.deletions,
            i: c.insertions,
            n: c.ref_len,
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(&self.record()).expect("report serializes")
    }
}

/// Sums alignment counts over all pairs before dividing.
pub fn corpus_report<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(
    set: &str,
    pairs: impl IntoIterator<Item = (R, H)>,
) -> CorpusReport {
    let mut counts = AlignmentCounts::default();
    let mut utterances = 0;
    for (r, h) in pairs {
        counts += align(r.as_ref(), h.as_ref());
        utterances += 1;
    }
    CorpusReport {
        set: set.to_string(),
        counts,
        utterances,
    }
}

/// Splits on whitespace; the comparison unit is the word.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
