//! Segment tree over Y with (min, max, drawdown, drawup) summaries and the
//! usual max_right / min_left searches for monotone predicates.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Summary {
    pub min: f64,
    pub max: f64,
    /// max Y_c - Y_d over c < d
    pub dd: f64,
    /// max Y_d - Y_c over c < d
    pub du: f64,
}

const ID: Summary = Summary { min: f64::INFINITY, max: f64::NEG_INFINITY, dd: f64::NEG_INFINITY, du: f64::NEG_INFINITY };

fn op(l: Summary, r: Summary) -> Summary {
    Summary {
        min: l.min.min(r.min),
        max: l.max.max(r.max),
        dd: l.dd.max(r.dd).max(l.max - r.min),
        du: l.du.max(r.du).max(r.max - l.min),
    }
}

pub(crate) struct SegTree {
    n: usize,
    size: usize,
    d: Vec<Summary>,
}

impl SegTree {
    pub fn new(y: &[f64]) -> Self {
        let n = y.len();
        let size = n.next_power_of_two().max(1);
        let mut d = vec![ID; 2 * size];
        for (i, &v) in y.iter().enumerate() {
            d[size + i] = Summary { min: v, max: v, dd: f64::NEG_INFINITY, du: f64::NEG_INFINITY };
        }
        for i in (1..size).rev() {
            d[i] = op(d[2 * i], d[2 * i + 1]);
        }
        Self { n, size, d }
    }

    /// Summary of [l, r).
    #[allow(dead_code)]
    pub fn prod(&self, mut l: usize, mut r: usize) -> Summary {
        let (mut sl, mut sr) = (ID, ID);
        l += self.size;
        r += self.size;
        while l < r {
            if l & 1 == 1 {
                sl = op(sl, self.d[l]);
                l += 1;
            }
            if r & 1 == 1 {
                r -= 1;
                sr = op(self.d[r], sr);
            }
            l >>= 1;
            r >>= 1;
        }
        op(sl, sr)
    }

    /// Largest r with f([l, r)) true; f must be monotone and f(ID) true.
    pub fn max_right<F: Fn(&Summary) -> bool>(&self, l: usize, f: F) -> usize {
        if l >= self.n {
            return self.n;
        }
        let mut l = l + self.size;
        let mut sm = ID;
        loop {
            while l % 2 == 0 {
                l >>= 1;
            }
            if !f(&op(sm, self.d[l])) {
                while l < self.size {
                    l *= 2;
                    let t = op(sm, self.d[l]);
                    if f(&t) {
                        sm = t;
                        l += 1;
                    }
                }
                return (l - self.size).min(self.n);
            }
            sm = op(sm, self.d[l]);
            l += 1;
            if l & l.wrapping_neg() == l {
                break;
            }
        }
        self.n
    }

    /// Smallest l with f([l, r)) true.
    pub fn min_left<F: Fn(&Summary) -> bool>(&self, r: usize, f: F) -> usize {
        if r == 0 {
            return 0;
        }
        let mut r = r + self.size;
        let mut sm = ID;
        loop {
            r -= 1;
            while r > 1 && r % 2 == 1 {
                r >>= 1;
            }
            if !f(&op(self.d[r], sm)) {
                while r < self.size {
                    r = 2 * r + 1;
                    let t = op(self.d[r], sm);
                    if f(&t) {
                        sm = t;
                        r -= 1;
                    }
                }
                return r + 1 - self.size;
            }
            sm = op(self.d[r], sm);
            if r & r.wrapping_neg() == r {
                break;
            }
        }
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(y: &[f64], l: usize, r: usize) -> Summary {
        let mut s = ID;
        for &v in &y[l..r] {
            s = op(s, Summary { min: v, max: v, dd: f64::NEG_INFINITY, du: f64::NEG_INFINITY });
        }
        s
    }

    #[test]
    fn searches_match_naive() {
        let y: Vec<f64> = (0..37).map(|i| ((i * 7919) % 23) as f64 - 11.0).collect();
        let t = SegTree::new(&y);
        for l in 0..=y.len() {
            for r in l..=y.len() {
                assert_eq!(t.prod(l, r), naive(&y, l, r));
            }
            for thr in [-5.0, 0.0, 3.0, 12.0, 40.0] {
                let r = t.max_right(l, |s| s.dd <= thr);
                assert!(naive(&y, l, r).dd <= thr);
                assert!(r == y.len() || naive(&y, l, r + 1).dd > thr);
                let q = t.min_left(l, |s| s.max < thr);
                assert!(naive(&y, q, l).max < thr);
                assert!(q == 0 || naive(&y, q - 1, l).max >= thr);
            }
        }
    }
}
