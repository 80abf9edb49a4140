/// Minimal edit script counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EditSummary {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    pub cer: f64,
}

impl EditSummary {
    pub fn total_edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein distance with a full backtrace so the edit counts
/// realize a minimal script. Ties in the backtrace are broken in the fixed
/// order substitution, deletion, insertion.
///
/// An empty reference yields CER 0 when the hypothesis is also empty and
/// `+∞` otherwise (insertions against nothing).
pub fn levenshtein<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditSummary {
    let n = reference.len();
    let m = hypothesis.len();
    // d[i][j]: edits to turn reference[..i] into hypothesis[..j].
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + sub_cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut ins) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + sub_cost {
                subs += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            dels += 1;
            i -= 1;
            continue;
        }
        ins += 1;
        j -= 1;
    }

    let cer = if n == 0 {
        if m == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (subs + dels + ins) as f64 / n as f64
    };
    EditSummary {
        substitutions: subs,
        deletions: dels,
        insertions: ins,
        reference_length: n,
        cer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn identical_sequences() {
        let s = levenshtein(&chars("abc"), &chars("abc"));
        assert_eq!(s.total_edits(), 0);
        assert_eq!(s.cer, 0.0);
    }

    #[test]
    fn single_substitution() {
        let s = levenshtein(&chars("abc"), &chars("axc"));
        assert_eq!((s.substitutions, s.deletions, s.insertions), (1, 0, 0));
        assert!((s.cer - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_deletion() {
        let s = levenshtein(&chars("abc"), &chars(""));
        assert_eq!((s.substitutions, s.deletions, s.insertions), (0, 3, 0));
        assert_eq!(s.cer, 1.0);
    }

    #[test]
    fn empty_reference() {
        assert_eq!(levenshtein::<char>(&[], &[]).cer, 0.0);
        assert_eq!(levenshtein(&[], &chars("ab")).cer, f64::INFINITY);
        assert_eq!(levenshtein(&[], &chars("ab")).insertions, 2);
    }

    #[test]
    fn counts_match_distance_on_small_exhaustive_set() {
        // Counts must always realize the DP distance.
        let alphabet = ['a', 'b'];
        let mut words = vec![String::new()];
        for len in 1..=3 {
            let mut next = Vec::new();
            for w in words.iter().filter(|w| w.len() == len - 1) {
                for c in alphabet {
                    next.push(format!("{w}{c}"));
                }
            }
            words.extend(next);
        }
        for a in &words {
            for b in &words {
                let s = levenshtein(&chars(a), &chars(b));
                let dist = strsim_distance(&chars(a), &chars(b));
                assert_eq!(s.total_edits(), dist, "{a} vs {b}");
            }
        }
    }

    // Independent DP without backtrace, for cross-checking.
    fn strsim_distance(a: &[char], b: &[char]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        let mut cur = vec![0; b.len() + 1];
        for i in 1..=a.len() {
            cur[0] = i;
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                cur[j] = (prev[j - 1] + c).min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        prev[b.len()]
    }

    #[test]
    fn triangle_inequality_holds() {
        let words = ["", "a", "ab", "ba", "aab", "bba", "abab"];
        for x in &words {
            for y in &words {
                for z in &words {
                    let xy = levenshtein(&chars(x), &chars(y)).total_edits();
                    let yz = levenshtein(&chars(y), &chars(z)).total_edits();
                    let xz = levenshtein(&chars(x), &chars(z)).total_edits();
                    assert!(xz <= xy + yz, "{x} {y} {z}");
                }
            }
        }
    }
}
