//! Error-free transformations used where two algebraically equal routes must
//! agree far below plain `f64` rounding noise.

#[inline]
pub(crate) fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bp = s - a;
    let e = (a - (s - bp)) + (b - bp);
    (s, e)
}

#[inline]
pub(crate) fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Dot product evaluated as if in twice the working precision (Ogita, Rump
/// and Oishi's `Dot2`).
pub fn dot2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot2: length mismatch");
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (p, pe) = two_prod(x, y);
        let (s, se) = two_sum(sum, p);
        sum = s;
        comp += pe + se;
    }
    sum + comp
}

/// `Dot2` of `a` against a vector carried as an unevaluated sum `hi + lo`.
pub fn dot2_split(a: &[f64], hi: &[f64], lo: &[f64]) -> f64 {
    assert!(
        a.len() == hi.len() && a.len() == lo.len(),
        "dot2_split: length mismatch"
    );
    let mut sum = 0.0;
    let mut comp = 0.0;
    for ((&x, &h), &l) in a.iter().zip(hi).zip(lo) {
        let (p, pe) = two_prod(x, h);
        let (s, se) = two_sum(sum, p);
        sum = s;
        comp += pe + se + x * l;
    }
    sum + comp
}

/// Plain sequential dot product in element order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn sq_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot2_recovers_cancelled_terms() {
        let a = [1e16, 1.0, -1e16];
        let b = [1.0, 1.0, 1.0];
        assert_eq!(dot(&a, &b), 0.0);
        assert_eq!(dot2(&a, &b), 1.0);
    }

    #[test]
    fn dot_matches_hand_sum() {
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
        assert_eq!(sq_norm(&[3.0, 4.0]), 25.0);
    }
}
