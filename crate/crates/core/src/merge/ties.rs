//! TIES: trim each task vector to its largest magnitudes, elect a sign per
//! element, and merge only the contributions that agree with it.
//!
//! Coefficients weight both the sign election and the merge, so with
//! normalized coefficients the disjoint merge is a weighted mean.

use std::cmp::Ordering;

use crate::store::TensorBuffer;

/// Number of elements kept at `density`: `ceil(density * n)`, with products
/// within 1e-9 relative of an integer snapped to it first (0.55 * 100 is not
/// exactly 55 in binary).
pub fn kept_count(density: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = density * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Keeps the `kept_count(density, n)` largest-magnitude entries; ties at the
/// threshold go to the lower flat index.
pub fn trim_in_place(values: &mut [f64], density: f64) {
    let n = values.len();
    let k = kept_count(density, n);
    if k >= n {
        return;
    }
    let by_rank = |&a: &usize, &b: &usize| -> Ordering { values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)) };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.select_nth_unstable_by(k - 1, by_rank);
    let mut keep = vec![false; n];
    for &i in &idx[..k] {
        keep[i] = true;
    }
    for (v, kept) in values.iter_mut().zip(keep) {
        if !kept {
            *v = 0.0;
        }
    }
}

/// Magnitude cut shared by every tensor of one task: entries whose magnitude
/// exceeds `magnitude` survive, plus the first `equal_quota` entries equal to
/// it in flat order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalCut {
    pub magnitude: f64,
    pub equal_quota: usize,
}

const DIGIT_BITS: u32 = 16;
const DIGITS: u32 = 64 / DIGIT_BITS;

/// Exact k-th largest magnitude over data that arrives in repeated streaming
/// passes. Magnitudes are ranked by their IEEE bit patterns, which order
/// non-negative finite values correctly; each pass fixes one 16-bit digit.
#[derive(Debug, Clone)]
pub struct RadixSelect {
    rank: usize,
    prefix: u64,
    level: u32,
    hist: Vec<usize>,
}

impl RadixSelect {
    /// Selects the `rank`-th largest magnitude (1-based).
    pub fn new(rank: usize) -> Self {
        assert!(rank >= 1, "rank is 1-based");
        RadixSelect {
            rank,
            prefix: 0,
            level: 0,
            hist: vec![0; 1 << DIGIT_BITS],
        }
    }

    pub const PASSES: u32 = DIGITS;

    pub fn observe(&mut self, values: &[f64]) {
        let shift = 64 - DIGIT_BITS * (self.level + 1);
        let known = 64 - DIGIT_BITS * self.level;
        for v in values {
            let key = v.abs().to_bits();
            if self.level == 0 || key >> known == self.prefix >> known {
                self.hist[((key >> shift) & 0xFFFF) as usize] += 1;
            }
        }
    }

    /// Closes a pass. Returns the cut once every digit is fixed.
    pub fn finish_pass(&mut self) -> Option<GlobalCut> {
        assert!(self.level < DIGITS, "selection already complete");
        let shift = 64 - DIGIT_BITS * (self.level + 1);
        let mut above = 0;
        let mut digit = 0;
        for d in (0..self.hist.len()).rev() {
            if above + self.hist[d] >= self.rank {
                digit = d;
                break;
            }
            above += self.hist[d];
        }
        self.rank -= above;
        self.prefix |= (digit as u64) << shift;
        self.level += 1;
        self.hist.iter_mut().for_each(|h| *h = 0);
        (self.level == DIGITS).then(|| GlobalCut {
            magnitude: f64::from_bits(self.prefix),
            equal_quota: self.rank,
        })
    }
}

/// Applies a global cut to one tensor, consuming the tie quota in flat order.
pub fn apply_global_cut(values: &mut [f64], cut: GlobalCut, quota: &mut usize) {
    for v in values {
        let m = v.abs();
        if m > cut.magnitude {
            continue;
        }
        if m == cut.magnitude && *quota > 0 {
            *quota -= 1;
            continue;
        }
        *v = 0.0;
    }
}

pub fn ties_trim(tv: &TensorBuffer, density: f64) -> TensorBuffer {
    let mut out = tv.clone();
    trim_in_place(&mut out.values, density);
    out
}

#[inline]
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Per-element sign of `Σ_t λ_t v_t`, summed in task order; an exact zero
/// sum elects 0.
pub fn elect_sign(trimmed: &[&[f64]], lambdas: &[f64]) -> Vec<i8> {
    assert_eq!(trimmed.len(), lambdas.len());
    let n = trimmed.first().map_or(0, |v| v.len());
    (0..n)
        .map(|e| {
            let s = trimmed.iter().zip(lambdas).fold(0.0, |acc, (v, l)| acc + l * v[e]);
            sign(s)
        })
        .collect()
}

pub fn ties_elect_sign(trimmed: &[&TensorBuffer], lambdas: &[f64]) -> Vec<i8> {
    let views: Vec<&[f64]> = trimmed.iter().map(|t| t.values.as_slice()).collect();
    elect_sign(&views, lambdas)
}

/// Writes `Σ λ_t v_t` over the tasks whose sign matches the elected one into
/// `out` (overwriting). Elements with elected sign 0 get 0.
pub fn disjoint_merge_into(trimmed: &[&[f64]], signs: &[i8], lambdas: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    disjoint_merge_add(trimmed, signs, lambdas, out);
}

/// Like [`disjoint_merge_into`] but adds the merged vector onto `out`, so a
/// base tensor can be turned into the merged tensor without a scratch buffer.
pub fn disjoint_merge_add(trimmed: &[&[f64]], signs: &[i8], lambdas: &[f64], out: &mut [f64]) {
    assert_eq!(trimmed.len(), lambdas.len());
    for (e, o) in out.iter_mut().enumerate() {
        let s = signs[e];
        if s == 0 {
            continue;
        }
        let acc = trimmed
            .iter()
            .zip(lambdas)
            .filter(|(v, _)| sign(v[e]) == s)
            .fold(0.0, |acc, (v, l)| acc + l * v[e]);
        *o += acc;
    }
}

pub fn ties_disjoint_merge(trimmed: &[&TensorBuffer], signs: &[i8], lambdas: &[f64]) -> TensorBuffer {
    let first = trimmed.first().expect("at least one task");
    let views: Vec<&[f64]> = trimmed.iter().map(|t| t.values.as_slice()).collect();
    let mut out = TensorBuffer::zeros(first.name.clone(), first.shape.clone());
    disjoint_merge_into(&views, signs, lambdas, &mut out.values);
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tb(values: Vec<f64>) -> TensorBuffer {
        let n = values.len();
        TensorBuffer::new("w", vec![n], values).unwrap()
    }

    #[test]
    fn trim_examples() {
        assert_eq!(
            ties_trim(&tb(vec![0.9, -0.1, 0.5, 0.05]), 0.5).values,
            vec![0.9, 0.0, 0.5, 0.0]
        );
        let v = vec![0.3, -0.2, 0.1];
        assert_eq!(ties_trim(&tb(v.clone()), 1.0).values, v);
        let twenty: Vec<f64> = (1..=20)
            .map(|i| i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let kept = ties_trim(&tb(twenty), 0.55)
            .values
            .iter()
            .filter(|x| **x != 0.0)
            .count();
        assert_eq!(kept, 11);
    }

    #[test]
    fn kept_count_snaps_binary_noise() {
        assert_eq!(kept_count(0.55, 20), 11);
        assert_eq!(kept_count(0.55, 100), 55);
        assert_eq!(kept_count(0.55, 3), 2);
        assert_eq!(kept_count(1e-9, 5), 1);
        assert_eq!(kept_count(1.0, 7), 7);
    }

    #[test]
    fn trim_ties_keep_lower_index() {
        assert_eq!(
            ties_trim(&tb(vec![1.0, -1.0, 1.0, 0.5]), 0.5).values,
            vec![1.0, -1.0, 0.0, 0.0]
        );
        assert_eq!(
            ties_trim(&tb(vec![0.5, 1.0, -1.0, 1.0]), 0.25).values,
            vec![0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn sign_election_examples() {
        let col = |vals: &[f64]| -> Vec<Vec<f64>> { vals.iter().map(|v| vec![*v]).collect() };
        let c = col(&[0.3, -0.1, 0.2]);
        let views: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        assert_eq!(elect_sign(&views, &[1.0, 1.0, 1.0]), vec![1]);

        let c = col(&[-1.0, 1.0]);
        let views: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        assert_eq!(elect_sign(&views, &[1.0, 1.0]), vec![0]);

        let c = col(&[-0.5, 0.1]);
        let views: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        assert_eq!(elect_sign(&views, &[0.1, 0.9]), vec![1]);
    }

    #[test]
    fn disjoint_merge_examples() {
        let (a, b, c) = (tb(vec![0.3]), tb(vec![-0.1]), tb(vec![0.2]));
        let lambdas = [1.0 / 6.0, 1.0 / 3.0, 0.5];
        let signs = ties_elect_sign(&[&a, &b, &c], &lambdas);
        assert_eq!(signs, vec![1]);
        let out = ties_disjoint_merge(&[&a, &b, &c], &signs, &lambdas);
        // (1/6)(0.3) + (1/2)(0.2)
        assert!((out.values[0] - 0.15).abs() < 1e-15);

        let zero = ties_disjoint_merge(&[&tb(vec![-1.0]), &tb(vec![1.0])], &[0], &[1.0, 1.0]);
        assert_eq!(zero.values, vec![0.0]);

        let single = tb(vec![0.4, 0.0, -2.0]);
        let s = ties_elect_sign(&[&single], &[0.7]);
        let out = ties_disjoint_merge(&[&single], &s, &[0.7]);
        assert_eq!(out.values, vec![0.7 * 0.4, 0.0, 0.7 * -2.0]);
    }

    #[test]
    fn same_signs_give_weighted_mean() {
        let vs = [
            tb(vec![1.0, -2.0, 0.5]),
            tb(vec![3.0, -1.0, 0.25]),
            tb(vec![2.0, -6.0, 1.0]),
        ];
        let refs: Vec<&TensorBuffer> = vs.iter().collect();
        let l = [1.0 / 3.0; 3];
        let s = ties_elect_sign(&refs, &l);
        let out = ties_disjoint_merge(&refs, &s, &l);
        for e in 0..3 {
            let mean = vs.iter().map(|v| v.values[e]).sum::<f64>() / 3.0;
            assert!((out.values[e] - mean).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn trim_keeps_exactly_k_largest(values in prop::collection::vec(-10.0f64..10.0, 1..200), density in 0.01f64..=1.0) {
            let mut v = values.clone();
            trim_in_place(&mut v, density);
            let k = kept_count(density, values.len());
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
            for (rank, &i) in order.iter().enumerate() {
                if rank < k {
                    prop_assert_eq!(v[i], values[i]);
                } else {
                    prop_assert_eq!(v[i], 0.0);
                }
            }
        }

        #[test]
        fn global_cut_matches_trim_of_the_concatenation(
            chunks in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![-2.0, -0.5, 0.0, 0.25, 0.5, 1.0, 3.0]), 1..30), 1..6),
            density in 0.01f64..=1.0,
        ) {
            let flat: Vec<f64> = chunks.concat();
            let mut want = flat.clone();
            trim_in_place(&mut want, density);

            let k = kept_count(density, flat.len());
            let mut sel = RadixSelect::new(k);
            let mut cut = None;
            for _ in 0..RadixSelect::PASSES {
                for c in &chunks {
                    sel.observe(c);
                }
                cut = sel.finish_pass();
            }
            let cut = cut.unwrap();
            let mut quota = cut.equal_quota;
            let mut got = Vec::new();
            for c in &chunks {
                let mut c = c.clone();
                apply_global_cut(&mut c, cut, &mut quota);
                got.extend(c);
            }
            prop_assert_eq!(quota, 0);
            prop_assert_eq!(got, want);
        }
    }
}
