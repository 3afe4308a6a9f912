//! Coarse random walk of the χ increments, elongations, the constructive
//! localization of the first interface, exceptional-set scans and the
//! two-sided stopping times.

pub mod bounds;
mod segtree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{chi_alpha, FieldRealization, XTable};
use segtree::{SegTree, Summary};

/// Bilateral walk. `y[i]` is Y at index `lo + i`; Y_0 = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    lo: i64,
    y: Vec<f64>,
}

impl WalkPath {
    /// `chi[j]` is χ(first + j). The covered Y range is first-1 ..= first+len-1,
    /// which must contain 0.
    pub fn from_increments(first: i64, chi: &[f64]) -> Result<Self> {
        let lo = first - 1;
        let hi = first - 1 + chi.len() as i64;
        if lo > 0 || hi < 0 {
            return Err(Error::OutOfRange(format!("increments {first}..{hi} do not straddle 0")));
        }
        let mut y = vec![0.0; chi.len() + 1];
        let zero = (-lo) as usize;
        // α ≥ 1: Y_α = Σ_{1..α} χ
        let mut s = 0.0;
        for i in zero + 1..y.len() {
            s += chi[i - 1];
            y[i] = s;
        }
        // α ≤ -1: Y_α = -Σ_{α+1..0} χ
        let mut s = 0.0;
        for i in (0..zero).rev() {
            s += chi[i];
            y[i] = -s;
        }
        Ok(Self { lo, y })
    }

    /// Symmetric range -k..=k with χ(α) for α = -k+1..=k.
    pub fn symmetric(k: i64, chi: &[f64]) -> Result<Self> {
        if chi.len() as i64 != 2 * k {
            return Err(Error::Domain(format!("need {} increments, got {}", 2 * k, chi.len())));
        }
        Self::from_increments(-k + 1, chi)
    }

    /// Direct Y values on lo..=lo+len-1; Y_0 must be 0.
    pub fn from_y(lo: i64, y: Vec<f64>) -> Result<Self> {
        let hi = lo + y.len() as i64 - 1;
        if lo > 0 || hi < 0 || y[(-lo) as usize] != 0.0 {
            return Err(Error::Domain("Y must cover 0 with Y_0 = 0".into()));
        }
        Ok(Self { lo, y })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.y.len() as i64 - 1
    }

    pub fn y(&self, alpha: i64) -> f64 {
        self.y[(alpha - self.lo) as usize]
    }

    pub fn y_checked(&self, alpha: i64) -> Result<f64> {
        if alpha < self.lo || alpha > self.hi() {
            return Err(Error::OutOfRange(format!("index {alpha} outside [{}, {}]", self.lo, self.hi())));
        }
        Ok(self.y(alpha))
    }

    /// χ(α) = Y_α - Y_{α-1}.
    pub fn chi(&self, alpha: i64) -> f64 {
        self.y(alpha) - self.y(alpha - 1)
    }

    /// Y((a, b]).
    pub fn increment(&self, a: i64, b: i64) -> f64 {
        self.y(b) - self.y(a)
    }

    pub fn negated(&self) -> Self {
        Self { lo: self.lo, y: self.y.iter().map(|v| -v).collect() }
    }

    pub fn max_abs_chi(&self) -> f64 {
        self.y.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    /// α, χ, Y rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,chi,Y\n");
        for a in self.lo..=self.hi() {
            let c = if a > self.lo { self.chi(a) } else { f64::NAN };
            s.push_str(&format!("{a},{c},{}\n", self.y(a)));
        }
        s
    }
}

/// The walk of χ(α), α = -k+1..=k, built from a field realization that
/// covers sites (-k·M·N, k·M·N].
pub fn walk_from_field(h: &FieldRealization, k: i64, blocks_per_alpha: usize, sites_per_block: usize, gamma: f64, table: &XTable) -> Result<WalkPath> {
    let chi = (-k + 1..=k)
        .map(|a| chi_alpha(h, a, blocks_per_alpha, sites_per_block, gamma, table))
        .collect::<Result<Vec<_>>>()?;
    WalkPath::symmetric(k, &chi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElongationParams {
    pub f_star: f64,
    pub f: f64,
    pub eps: f64,
    pub rho: f64,
    pub a: f64,
    pub q: f64,
    /// δ̃ for the near-tie sets; ρ^{2+a} by default.
    pub delta_tilde: f64,
}

impl ElongationParams {
    pub fn new(f_star: f64, f: f64, eps: f64, rho: f64, a: f64, q: f64) -> Result<Self> {
        let p = Self { f_star, f, eps, rho, a, q, delta_tilde: rho.powf(2.0 + a) };
        p.validate()?;
        Ok(p)
    }

    /// ρ = ε^{1/(4(2+a))}, f = ε^{1/4}.
    pub fn coupled(f_star: f64, eps: f64, a: f64, q: f64) -> Result<Self> {
        let rho = eps.powf(1.0 / (4.0 * (2.0 + a)));
        Self::new(f_star, eps.powf(0.25), eps, rho, a, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_star > 0.0) {
            return Err(Error::Domain("F* must be positive".into()));
        }
        if !(self.f > 0.0 && self.f < self.f_star / 4.0) {
            return Err(Error::Domain(format!("need 0 < f < F*/4, got f = {}, F*/4 = {}", self.f, self.f_star / 4.0)));
        }
        if !(self.eps > 0.0 && self.rho > 0.0 && self.q > 0.0 && self.a > 0.0 && self.delta_tilde > 0.0) {
            return Err(Error::Domain("eps, rho, a, Q, delta_tilde must be positive".into()));
        }
        Ok(())
    }

    /// K = Q/ε, required to be an integer.
    pub fn half_range(&self) -> Result<i64> {
        let r = self.q / self.eps;
        if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 * r {
            return Err(Error::Divisibility(format!("Q/eps = {r} is not a positive integer")));
        }
        Ok(r.round() as i64)
    }

    /// ρ/ε in walk steps.
    pub fn rho_steps(&self) -> f64 {
        self.rho / self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElongationClass {
    Positive,
    Negative,
    None,
}

impl ElongationClass {
    pub fn sign(self) -> i8 {
        match self {
            Self::Positive => 1,
            Self::Negative => -1,
            Self::None => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elongation {
    /// (a, b]
    pub a: i64,
    pub b: i64,
    pub sign: i8,
}

/// Running max drawdown and max drawup of Y over a..=b, pairs c < d.
fn draw_extents(path: &WalkPath, a: i64, b: i64) -> (f64, f64) {
    let mut runmax = path.y(a);
    let mut runmin = runmax;
    let mut dd = f64::NEG_INFINITY;
    let mut du = f64::NEG_INFINITY;
    for d in a + 1..=b {
        let yd = path.y(d);
        dd = dd.max(runmax - yd);
        du = du.max(yd - runmin);
        runmax = runmax.max(yd);
        runmin = runmin.min(yd);
    }
    (dd, du)
}

fn class_from(rise: f64, dd: f64, du: f64, f_star: f64, f: f64) -> ElongationClass {
    let hi = 2.0 * f_star + f;
    let lo = 2.0 * f_star - f;
    if rise >= hi && dd <= lo {
        ElongationClass::Positive
    } else if rise <= -hi && du <= lo {
        ElongationClass::Negative
    } else {
        ElongationClass::None
    }
}

/// Classify (a, b] in O(b - a).
pub fn classify_elongation(path: &WalkPath, a: i64, b: i64, f_star: f64, f: f64) -> Result<ElongationClass> {
    if a >= b || a < path.lo() || b > path.hi() {
        return Err(Error::OutOfRange(format!("interval ({a}, {b}] not inside [{}, {}]", path.lo(), path.hi())));
    }
    let (dd, du) = draw_extents(path, a, b);
    Ok(class_from(path.increment(a, b), dd, du, f_star, f))
}

/// All-subinterval scan, O((b-a)^2). Reference for the classifier.
pub fn classify_elongation_brute(path: &WalkPath, a: i64, b: i64, f_star: f64, f: f64) -> Result<ElongationClass> {
    if a >= b || a < path.lo() || b > path.hi() {
        return Err(Error::OutOfRange(format!("interval ({a}, {b}] not inside [{}, {}]", path.lo(), path.hi())));
    }
    let mut min_sub = f64::INFINITY;
    let mut max_sub = f64::NEG_INFINITY;
    for c in a..b {
        for d in c + 1..=b {
            let v = path.increment(c, d);
            min_sub = min_sub.min(v);
            max_sub = max_sub.max(v);
        }
    }
    let total = path.increment(a, b);
    let hi = 2.0 * f_star + f;
    let lo = 2.0 * f_star - f;
    Ok(if total >= hi && min_sub >= -lo {
        ElongationClass::Positive
    } else if total <= -hi && max_sub <= lo {
        ElongationClass::Negative
    } else {
        ElongationClass::None
    })
}

/// First and last partner index of each sign found by one directional scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Scan {
    first_pos: Option<i64>,
    last_pos: Option<i64>,
    first_neg: Option<i64>,
    last_neg: Option<i64>,
}

impl Scan {
    fn first(&self, sign: i8) -> Option<i64> {
        if sign > 0 { self.first_pos } else { self.first_neg }
    }
    fn last(&self, sign: i8) -> Option<i64> {
        if sign > 0 { self.last_pos } else { self.last_neg }
    }
}

/// Elongation maps over [lo, hi] of a path. Drawdown and drawup are monotone
/// in the interval, so each map is a pair of O(log n) segment-tree searches.
pub struct ElongationIndex<'p> {
    path: &'p WalkPath,
    lo: i64,
    hi: i64,
    f_star: f64,
    f: f64,
    tree: SegTree,
    fwd: Vec<Option<Scan>>,
    bwd: Vec<Option<Scan>>,
}

impl<'p> ElongationIndex<'p> {
    /// Maps restricted to [lo, hi] (both within the path).
    pub fn new(path: &'p WalkPath, lo: i64, hi: i64, f_star: f64, f: f64) -> Result<Self> {
        if lo < path.lo() || hi > path.hi() || lo > hi {
            return Err(Error::OutOfRange(format!("range [{lo}, {hi}] not inside the path")));
        }
        let n = (hi - lo + 1) as usize;
        let ys: Vec<f64> = (lo..=hi).map(|x| path.y(x)).collect();
        Ok(Self { path, lo, hi, f_star, f, tree: SegTree::new(&ys), fwd: vec![None; n], bwd: vec![None; n] })
    }

    pub fn for_params(path: &'p WalkPath, p: &ElongationParams) -> Result<Self> {
        let k = p.half_range()?;
        Self::new(path, -k, k, p.f_star, p.f)
    }

    pub fn range(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    fn in_range(&self, x: i64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn forward(&mut self, a: i64) -> Scan {
        let ia = (a - self.lo) as usize;
        if let Some(s) = self.fwd[ia] {
            return s;
        }
        let (up, down) = (2.0 * self.f_star + self.f, 2.0 * self.f_star - self.f);
        let ya = self.path.y(a);
        let t = &self.tree;
        let n = (self.hi - self.lo + 1) as usize;
        let at = |i: usize| self.lo + i as i64;
        let mut s = Scan::default();
        // b ranges over (a, r) where the drawdown stays ≤ 2F*-f
        let r = t.max_right(ia, |q| q.dd <= down);
        let hit = |q: &Summary| !(q.max - ya >= up);
        let first = t.max_right(ia + 1, hit);
        if first < r && first < n {
            s.first_pos = Some(at(first));
            let l = t.min_left(r, hit);
            s.last_pos = Some(at(l - 1));
        }
        let r = t.max_right(ia, |q| q.du <= down);
        let hit = |q: &Summary| !(q.min - ya <= -up);
        let first = t.max_right(ia + 1, hit);
        if first < r && first < n {
            s.first_neg = Some(at(first));
            let l = t.min_left(r, hit);
            s.last_neg = Some(at(l - 1));
        }
        self.fwd[ia] = Some(s);
        s
    }

    /// For a < b; `first` is the largest a, `last` the smallest.
    fn backward(&mut self, b: i64) -> Scan {
        let ib = (b - self.lo) as usize;
        if let Some(s) = self.bwd[ib] {
            return s;
        }
        let (up, down) = (2.0 * self.f_star + self.f, 2.0 * self.f_star - self.f);
        let yb = self.path.y(b);
        let t = &self.tree;
        let at = |i: usize| self.lo + i as i64;
        let mut s = Scan::default();
        // a ranges over [l, b) where the drawdown of [a, b] stays ≤ 2F*-f
        let l = t.min_left(ib + 1, |q| q.dd <= down);
        let hit = |q: &Summary| !(yb - q.min >= up);
        let m = t.min_left(ib, hit);
        if m > l {
            s.first_pos = Some(at(m - 1));
            s.last_pos = Some(at(t.max_right(l, hit)));
        }
        let l = t.min_left(ib + 1, |q| q.du <= down);
        let hit = |q: &Summary| !(yb - q.max <= -up);
        let m = t.min_left(ib, hit);
        if m > l {
            s.first_neg = Some(at(m - 1));
            s.last_neg = Some(at(t.max_right(l, hit)));
        }
        self.bwd[ib] = Some(s);
        s
    }

    /// b₋(a): smallest b with (a, b] an elongation of either sign.
    pub fn b_minus(&mut self, a: i64) -> Option<i64> {
        if !self.in_range(a) {
            return None;
        }
        let s = self.forward(a);
        min_opt(s.first_pos, s.first_neg)
    }

    /// b₊(a): largest such b.
    pub fn b_plus(&mut self, a: i64) -> Option<i64> {
        if !self.in_range(a) {
            return None;
        }
        let s = self.forward(a);
        max_opt(s.last_pos, s.last_neg)
    }

    /// a₊(b): largest a with (a, b] an elongation.
    pub fn a_plus(&mut self, b: i64) -> Option<i64> {
        if !self.in_range(b) {
            return None;
        }
        let s = self.backward(b);
        max_opt(s.first_pos, s.first_neg)
    }

    /// a₋(b): smallest such a.
    pub fn a_minus(&mut self, b: i64) -> Option<i64> {
        if !self.in_range(b) {
            return None;
        }
        let s = self.backward(b);
        min_opt(s.last_pos, s.last_neg)
    }

    /// Smallest b with (a, b] an elongation of the given sign.
    pub fn first_end(&mut self, a: i64, sign: i8) -> Option<i64> {
        if !self.in_range(a) {
            return None;
        }
        self.forward(a).first(sign)
    }

    /// Largest a with (a, b] an elongation of the given sign.
    pub fn last_start(&mut self, b: i64, sign: i8) -> Option<i64> {
        if !self.in_range(b) {
            return None;
        }
        self.backward(b).first(sign)
    }

    /// Largest b with (a, b] an elongation of the given sign.
    pub fn last_end(&mut self, a: i64, sign: i8) -> Option<i64> {
        if !self.in_range(a) {
            return None;
        }
        self.forward(a).last(sign)
    }

    pub fn classify(&self, a: i64, b: i64) -> Result<ElongationClass> {
        classify_elongation(self.path, a, b, self.f_star, self.f)
    }

    /// Is there any elongation inside the range?
    pub fn any(&mut self) -> bool {
        (self.lo..self.hi).any(|a| self.b_minus(a).is_some())
    }

    /// Longest alternating chain of disjoint elongations a₁<b₁≤a₂<… inside
    /// [from, to], capped at `cap`, by earliest-end greedy for each starting sign.
    pub fn chain_right(&mut self, from: i64, to: i64, cap: usize) -> usize {
        let mut best = 0;
        for start in [1i8, -1] {
            let (mut cur, mut sign, mut count) = (from, start, 0);
            while count < cap {
                let mut end: Option<i64> = None;
                let mut a = cur;
                while a < to && end.map_or(true, |e| a < e) {
                    if let Some(b) = self.first_end(a, sign).filter(|&b| b <= to) {
                        end = min_opt(end, Some(b));
                    }
                    a += 1;
                }
                let Some(e) = end else { break };
                count += 1;
                cur = e;
                sign = -sign;
            }
            best = best.max(count);
        }
        best
    }

    /// Mirror of `chain_right`: from ≥ b₁ > a₁ ≥ b₂ > … ≥ to, latest-start greedy.
    pub fn chain_left(&mut self, from: i64, to: i64, cap: usize) -> usize {
        let mut best = 0;
        for start in [1i8, -1] {
            let (mut cur, mut sign, mut count) = (from, start, 0);
            while count < cap {
                let mut st: Option<i64> = None;
                let mut b = cur;
                while b > to && st.map_or(true, |s| b > s) {
                    if let Some(a) = self.last_start(b, sign).filter(|&a| a >= to) {
                        st = max_opt(st, Some(a));
                    }
                    b -= 1;
                }
                let Some(s) = st else { break };
                count += 1;
                cur = s;
                sign = -sign;
            }
            best = best.max(count);
        }
        best
    }
}

fn min_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn max_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// First index of the maximum of `sign * Y` on [a, b].
fn first_argmax(path: &WalkPath, a: i64, b: i64, sign: f64) -> i64 {
    let mut best = a;
    let mut v = sign * path.y(a);
    for x in a + 1..=b {
        let w = sign * path.y(x);
        if w > v {
            v = w;
            best = x;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalizationMode {
    /// ω ∈ P₁(f,3,Q) ∪ P₂″(f,Q) is exceptional, as in the theorem's Ω.
    Strict,
    /// Exceptional only when a step of the construction breaks down.
    Constructive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationOptions {
    pub mode: LocalizationMode,
    /// Breaking points beyond α*₋₁, α*₀, α*₁ on each side (at most 5).
    pub extra: usize,
    /// Extra shrink of J at each end, macroscopic units (the R₁ margin).
    pub r1: f64,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        Self { mode: LocalizationMode::Strict, extra: 0, r1: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakingPoint {
    /// j in α*_j.
    pub label: i64,
    pub alpha: i64,
    /// +1 for a maximum of Y, -1 for a minimum.
    pub kind: i8,
}

/// Named auxiliary indices of the construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionIndices {
    pub a0: Option<i64>,
    pub b0: Option<i64>,
    pub a_m1: Option<i64>,
    pub b_m1: Option<i64>,
    pub a1: Option<i64>,
    pub b1: Option<i64>,
    pub a_m2: Option<i64>,
    pub b_m2: Option<i64>,
    /// a₋(b₀), b₊(α*₀), a₋(α*₀).
    pub a_minus_b0: Option<i64>,
    pub b_plus_alpha0: Option<i64>,
    pub a_minus_alpha0: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationOutput {
    pub alpha_stars: Vec<BreakingPoint>,
    /// Contiguous elongations with alternating signs around J.
    pub chain: Vec<Elongation>,
    pub indices: ConstructionIndices,
    /// J in walk indices (open).
    pub j_steps: Option<(i64, i64)>,
    /// J and I in macroscopic units (α ↦ εα).
    pub j_interval: Option<(f64, f64)>,
    pub i_interval: Option<(f64, f64)>,
    pub tau: Option<i8>,
    /// τ taken from the whole of J because I holds no walk step.
    pub tau_from_j: bool,
    /// Sign of (a₀, b₀].
    pub first_sign: Option<i8>,
    /// α*₀ = 0, the tie the first-index rule resolves.
    pub alpha0_at_origin: bool,
    pub exceptional: Option<String>,
    pub flags: Option<ExceptionalFlags>,
}

impl LocalizationOutput {
    fn failed(indices: ConstructionIndices, stars: Vec<BreakingPoint>, first_sign: Option<i8>, why: String) -> Self {
        Self {
            alpha_stars: stars,
            chain: vec![],
            indices,
            j_steps: None,
            j_interval: None,
            i_interval: None,
            tau: None,
            tau_from_j: false,
            first_sign,
            alpha0_at_origin: false,
            exceptional: Some(why),
            flags: None,
        }
    }

    pub fn is_exceptional(&self) -> bool {
        self.exceptional.is_some()
    }

    pub fn alpha_star(&self, label: i64) -> Option<i64> {
        self.alpha_stars.iter().find(|p| p.label == label).map(|p| p.alpha)
    }
}

/// One step left from a breaking point `p` where an elongation of sign
/// `sigma` ends (p = b₀ for the first step). Returns (b', a', new point).
fn step_left(ix: &mut ElongationIndex, path: &WalkPath, p: i64, sigma: i8) -> std::result::Result<(i64, i64, i64, i64), String> {
    let lo = ix.range().0;
    let mut found = None;
    let mut b = p - 1;
    while b > lo {
        if let Some(a) = ix.last_start(b, -sigma) {
            found = Some((b, a));
            break;
        }
        b -= 1;
    }
    let (bn, an) = found.ok_or_else(|| format!("no elongation of sign {} ends left of {p}", -sigma))?;
    let am = ix.a_minus(p).ok_or_else(|| format!("a-({p}) undefined"))?;
    if bn < am {
        return Err(format!("claim fails at {p}: b = {bn} < a-({p}) = {am}"));
    }
    Ok((bn, an, am, first_argmax(path, am, bn, -(sigma as f64))))
}

/// One step right from `p` where an elongation of sign `sigma` starts.
/// Returns (a', b', b₊(p), new point).
fn step_right(ix: &mut ElongationIndex, path: &WalkPath, p: i64, sigma: i8) -> std::result::Result<(i64, i64, i64, i64), String> {
    let hi = ix.range().1;
    let mut found = None;
    let mut a = p + 1;
    while a < hi {
        if let Some(b) = ix.first_end(a, -sigma) {
            found = Some((a, b));
            break;
        }
        a += 1;
    }
    let (an, bn) = found.ok_or_else(|| format!("no elongation of sign {} starts right of {p}", -sigma))?;
    let bp = ix.b_plus(p).ok_or_else(|| format!("b+({p}) undefined"))?;
    if an > bp {
        return Err(format!("claim fails at {p}: a = {an} > b+({p}) = {bp}"));
    }
    Ok((an, bn, bp, first_argmax(path, an, bp, sigma as f64)))
}

/// The constructive localization of the interface nearest the origin.
pub fn construct_localization(path: &WalkPath, params: &ElongationParams, opts: &LocalizationOptions) -> Result<LocalizationOutput> {
    params.validate()?;
    if opts.extra > 5 {
        return Err(Error::Domain("at most 5 extra breaking points per side".into()));
    }
    let k = params.half_range()?;
    if path.lo() > -k || path.hi() < k {
        return Err(Error::OutOfRange(format!("path does not cover [-{k}, {k}]")));
    }
    let mut ix = ElongationIndex::new(path, -k, k, params.f_star, params.f)?;
    let flags = match opts.mode {
        LocalizationMode::Strict => Some(exceptional_flags_with(&mut ix, path, params, 3)?),
        LocalizationMode::Constructive => None,
    };
    let mut out = construct_with(&mut ix, path, params, opts);
    if opts.mode == LocalizationMode::Constructive && out.exceptional.is_none() {
        // outside the theorem's Ω the chain has to be checked explicitly
        for e in &out.chain {
            if ix.classify(e.a, e.b)?.sign() != e.sign {
                out.exceptional = Some(format!("({}, {}] is not an elongation of sign {}", e.a, e.b, e.sign));
                break;
            }
        }
    }
    if let Some(fl) = flags {
        // the theorem's Ω restriction takes precedence over claim failures
        if fl.p1[2] {
            out.exceptional = Some("in P1(f,3,Q)".into());
        } else if fl.p2_double_prime {
            out.exceptional = Some(if fl.p2_prime { "in P2'(f,Q)".into() } else { "max |chi| > f".into() });
        }
        let mut fl = fl;
        fill_construction_flags(&mut fl, path, params, &out);
        out.flags = Some(fl);
    }
    Ok(out)
}

fn construct_with(ix: &mut ElongationIndex, path: &WalkPath, params: &ElongationParams, opts: &LocalizationOptions) -> LocalizationOutput {
    let (_, k) = ix.range();
    let mut idx = ConstructionIndices::default();
    let mut stars = Vec::new();
    // a₀ = first a ≥ 0 with b₋(a) < ∞
    let mut a0 = None;
    for a in 0..k {
        if let Some(b) = ix.b_minus(a) {
            a0 = Some((a, b));
            break;
        }
    }
    let Some((a0, b0)) = a0 else {
        return LocalizationOutput::failed(idx, stars, None, "no elongation starts in [0, Q/eps]".into());
    };
    idx.a0 = Some(a0);
    idx.b0 = Some(b0);
    let s = match ix.classify(a0, b0) {
        Ok(c) => c.sign(),
        Err(e) => return LocalizationOutput::failed(idx, stars, None, e.to_string()),
    };
    let first_sign = Some(s);

    // α*₀: first minimizer of sY on [a₋(b₀), b₋₁]
    let (bm1, am1, amb0, alpha0) = match step_left(ix, path, b0, s) {
        Ok(v) => v,
        Err(e) => return LocalizationOutput::failed(idx, stars, first_sign, format!("claim 1: {e}")),
    };
    idx.b_m1 = Some(bm1);
    idx.a_m1 = Some(am1);
    idx.a_minus_b0 = Some(amb0);
    stars.push(BreakingPoint { label: 0, alpha: alpha0, kind: -s });

    // α*₁: first maximizer of sY on [a₁, b₊(α*₀)]
    let (a1, b1, bpa0, alpha1) = match step_right(ix, path, alpha0, s) {
        Ok(v) => v,
        Err(e) => return LocalizationOutput::failed(idx, stars, first_sign, format!("claim 2: {e}")),
    };
    idx.a1 = Some(a1);
    idx.b1 = Some(b1);
    idx.b_plus_alpha0 = Some(bpa0);
    stars.push(BreakingPoint { label: 1, alpha: alpha1, kind: s });

    let mut chain;
    let (jl, jr, j_sign);
    if alpha0 < 0 {
        chain = vec![
            Elongation { a: am1, b: alpha0, sign: -s },
            Elongation { a: alpha0, b: alpha1, sign: s },
            Elongation { a: alpha1, b: b1, sign: -s },
        ];
        (jl, jr, j_sign) = (alpha0, alpha1, s);
    } else {
        let (bm2, am2, ama0, alpham1) = match step_left(ix, path, alpha0, -s) {
            Ok(v) => v,
            Err(e) => return LocalizationOutput::failed(idx, stars, first_sign, format!("claim 3: {e}")),
        };
        idx.b_m2 = Some(bm2);
        idx.a_m2 = Some(am2);
        idx.a_minus_alpha0 = Some(ama0);
        stars.insert(0, BreakingPoint { label: -1, alpha: alpham1, kind: s });
        if alpham1 >= 0 {
            return LocalizationOutput::failed(idx, stars, first_sign, format!("alpha*_-1 = {alpham1} is not negative"));
        }
        chain = vec![
            Elongation { a: am2, b: alpham1, sign: s },
            Elongation { a: alpham1, b: alpha0, sign: -s },
            Elongation { a: alpha0, b: alpha1, sign: s },
            Elongation { a: alpha1, b: b1, sign: -s },
        ];
        (jl, jr, j_sign) = (alpham1, alpha0, -s);
    }
    if !(jl < 0 && 0 < jr) && !(jl < 0 && jr == 0 && alpha0 == 0) {
        return LocalizationOutput::failed(idx, stars, first_sign, format!("origin not inside J = ({jl}, {jr})"));
    }

    // optional continuation on both sides
    let mut right = (alpha1, -s);
    for _ in 0..opts.extra {
        match step_right(ix, path, right.0, right.1) {
            Ok((_, b, _, p)) => {
                let label = stars.last().map(|x| x.label).unwrap_or(0) + 1;
                if let Some(last) = chain.last_mut() {
                    last.b = p;
                }
                chain.push(Elongation { a: p, b, sign: -right.1 });
                stars.push(BreakingPoint { label, alpha: p, kind: right.1 });
                right = (p, -right.1);
            }
            Err(_) => break,
        }
    }
    let first = stars[0];
    // an elongation ending at a maximum of Y is positive
    let mut left = (first.alpha, first.kind);
    for _ in 0..opts.extra {
        match step_left(ix, path, left.0, left.1) {
            Ok((_, a, _, p)) => {
                chain[0].a = p;
                chain.insert(0, Elongation { a, b: p, sign: -left.1 });
                let label = stars[0].label - 1;
                stars.insert(0, BreakingPoint { label, alpha: p, kind: -left.1 });
                left = (p, -left.1);
            }
            Err(_) => break,
        }
    }

    let eps = params.eps;
    let j_interval = (eps * jl as f64, eps * jr as f64);
    let shrink = params.rho + opts.r1;
    let (il, ir) = (j_interval.0 + shrink, j_interval.1 - shrink);
    let i_interval = if il < ir { Some((il, ir)) } else { None };
    // α-blocks ((α-1)ε, αε] fully inside I
    let (mut tau, mut tau_from_j) = (None, false);
    if let Some((il, ir)) = i_interval {
        let first_block = (il / eps).ceil() as i64 + 1;
        let last_block = (ir / eps).floor() as i64;
        if first_block <= last_block {
            let sum = path.increment(first_block - 1, last_block);
            tau = Some(if sum > 0.0 { 1 } else if sum < 0.0 { -1 } else { 0 });
        }
    }
    if tau.is_none() {
        tau = Some(j_sign);
        tau_from_j = true;
    }
    LocalizationOutput {
        alpha_stars: stars,
        chain,
        indices: idx,
        j_steps: Some((jl, jr)),
        j_interval: Some(j_interval),
        i_interval,
        tau,
        tau_from_j,
        first_sign,
        alpha0_at_origin: alpha0 == 0,
        exceptional: None,
        flags: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalFlags {
    pub p0: bool,
    /// p1[k-1]: in P₁(f,k,Q).
    pub p1: Vec<bool>,
    pub p2_prime: bool,
    pub max_chi_exceeds_f: bool,
    pub p2_double_prime: bool,
    /// Near-ties around α*₀, α*₁, α*₋₁ (None when the point was not built).
    pub p2_alpha0: Option<bool>,
    pub p2_alpha1: Option<bool>,
    pub p2_alpha_m1: Option<bool>,
    pub p3: Option<bool>,
    /// Longest alternating chains found in [0, K] and [-K, 0], capped at
    /// the largest k examined.
    pub chain_right: usize,
    pub chain_left: usize,
}

/// Definitional scan of the exceptional sets, P₁ for k = 1..=k_max.
pub fn exceptional_membership(path: &WalkPath, params: &ElongationParams, k_max: usize) -> Result<ExceptionalFlags> {
    params.validate()?;
    let k = params.half_range()?;
    if path.lo() > -k || path.hi() < k {
        return Err(Error::OutOfRange(format!("path does not cover [-{k}, {k}]")));
    }
    let mut ix = ElongationIndex::new(path, -k, k, params.f_star, params.f)?;
    let mut fl = exceptional_flags_with(&mut ix, path, params, k_max.max(1))?;
    let out = construct_with(&mut ix, path, params, &LocalizationOptions { mode: LocalizationMode::Constructive, extra: 0, r1: 0.0 });
    fill_construction_flags(&mut fl, path, params, &out);
    Ok(fl)
}

fn exceptional_flags_with(ix: &mut ElongationIndex, path: &WalkPath, params: &ElongationParams, k_max: usize) -> Result<ExceptionalFlags> {
    let (lo, hi) = ix.range();
    let p0 = !ix.any();
    let cap = k_max.max(3);
    let cr = ix.chain_right(0, hi, cap);
    let cl = ix.chain_left(0, lo, cap);
    let p1 = (1..=cap).map(|k| !(cr >= k && cl >= k)).collect();
    let p2p = p2_prime_scan(path, lo, hi, params.f_star, params.f);
    let mut mx = 0.0f64;
    for a in lo + 1..=hi {
        mx = mx.max(path.chi(a).abs());
    }
    let big = mx > params.f;
    Ok(ExceptionalFlags {
        p0,
        p1,
        p2_prime: p2p,
        max_chi_exceeds_f: big,
        p2_double_prime: p2p || big,
        p2_alpha0: None,
        p2_alpha1: None,
        p2_alpha_m1: None,
        p3: None,
        chain_right: cr,
        chain_left: cl,
    })
}

fn near_tie(path: &WalkPath, from: i64, to: i64, at: i64, rho_steps: f64, dt: f64) -> bool {
    let ya = path.y(at);
    (from.min(to)..=to.max(from)).any(|x| ((x - at).abs() as f64) > rho_steps && (path.y(x) - ya).abs() <= dt)
}

fn fill_construction_flags(fl: &mut ExceptionalFlags, path: &WalkPath, params: &ElongationParams, out: &LocalizationOutput) {
    let r = params.rho_steps();
    let dt = params.delta_tilde;
    let ind = &out.indices;
    let a0s = out.alpha_star(0);
    let a1s = out.alpha_star(1);
    let am1s = out.alpha_star(-1);
    if let (Some(al), Some(a), Some(b)) = (a0s, ind.a_m1, ind.b0) {
        fl.p2_alpha0 = Some(near_tie(path, a, b, al, r, dt));
    }
    if let (Some(al), Some(a), Some(b)) = (a1s, ind.a0, ind.b1) {
        fl.p2_alpha1 = Some(near_tie(path, a, b, al, r, dt));
    }
    if let (Some(al), Some(a), Some(b), Some(z)) = (am1s, ind.a_m2, ind.b_m1, a0s) {
        fl.p2_alpha_m1 = Some(z > 0 && near_tie(path, a, b, al, r, dt));
    }
    if let Some(z) = a0s {
        let near = |x: i64| (x as f64).abs() <= 2.0 * r;
        fl.p3 = Some(near(z) || am1s.map(near).unwrap_or(false));
    }
}

/// Is there α₁<α₂<α₃<α₄ in [lo, hi] with |Y₁-Y₃| ∨ |Y₂-Y₄| ≤ 3f,
/// ||Y₁-Y₂| - 2F*| ≤ 3f and Y inside [Y₁∧Y₂ - 3f, Y₁∨Y₂ + 3f] on [α₁, α₄]?
pub fn p2_prime_scan(path: &WalkPath, lo: i64, hi: i64, f_star: f64, f: f64) -> bool {
    let t = 3.0 * f;
    let width = 2.0 * f_star + 3.0 * t;
    for a1 in lo..=hi {
        let y1 = path.y(a1);
        let (mut mn, mut mx) = (y1, y1);
        for a2 in a1 + 1..=hi {
            let y2 = path.y(a2);
            mn = mn.min(y2);
            mx = mx.max(y2);
            if mx - mn > width {
                break;
            }
            if ((y1 - y2).abs() - 2.0 * f_star).abs() > t {
                continue;
            }
            let (bl, bh) = (y1.min(y2) - t, y1.max(y2) + t);
            if mn < bl || mx > bh {
                continue;
            }
            // earliest α₃ with |Y₃-Y₁| ≤ 3f, then any α₄ with |Y₄-Y₂| ≤ 3f, band kept
            let mut seen3 = false;
            for a in a2 + 1..=hi {
                let y = path.y(a);
                if y < bl || y > bh {
                    break;
                }
                if seen3 && (y - y2).abs() <= t {
                    return true;
                }
                if !seen3 && (y - y1).abs() <= t {
                    seen3 = true;
                }
            }
        }
    }
    false
}

/// O(n⁴) reference for `p2_prime_scan`.
pub fn p2_prime_brute(path: &WalkPath, lo: i64, hi: i64, f_star: f64, f: f64) -> bool {
    let t = 3.0 * f;
    for a1 in lo..=hi {
        for a2 in a1 + 1..=hi {
            let (y1, y2) = (path.y(a1), path.y(a2));
            if ((y1 - y2).abs() - 2.0 * f_star).abs() > t {
                continue;
            }
            for a3 in a2 + 1..=hi {
                if (y1 - path.y(a3)).abs() > t {
                    continue;
                }
                for a4 in a3 + 1..=hi {
                    if (y2 - path.y(a4)).abs() > t {
                        continue;
                    }
                    let (bl, bh) = (y1.min(y2) - t, y1.max(y2) + t);
                    if (a1..=a4).all(|x| (bl..=bh).contains(&path.y(x))) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeTrace {
    pub b: f64,
    /// τ₁, τ₂, … to the right.
    pub taus_right: Vec<i64>,
    /// τ₋₁, τ₋₂, … to the left.
    pub taus_left: Vec<i64>,
    pub signs_right: Vec<i8>,
    pub signs_left: Vec<i8>,
    /// i*₁, i*₂, …
    pub i_stars_right: Vec<i64>,
    /// i*₋₁, i*₋₂, …
    pub i_stars_left: Vec<i64>,
    pub truncated_right: bool,
    pub truncated_left: bool,
}

impl StoppingTimeTrace {
    /// τ_k for k in ℤ; τ₀ = 0.
    pub fn tau(&self, k: i64) -> Option<i64> {
        match k {
            0 => Some(0),
            k if k > 0 => self.taus_right.get(k as usize - 1).copied(),
            k => self.taus_left.get((-k) as usize - 1).copied(),
        }
    }

    /// S_k, k ≠ 0.
    pub fn sign(&self, k: i64) -> Option<i8> {
        match k {
            0 => None,
            k if k > 0 => self.signs_right.get(k as usize - 1).copied(),
            k => self.signs_left.get((-k) as usize - 1).copied(),
        }
    }

    /// Interval covered by S_i and its successor (the index after -1 is 1).
    pub fn pair_interval(&self, i: i64) -> Option<(i64, i64)> {
        if i >= 1 {
            Some((self.tau(i - 1)?, self.tau(i + 1)?))
        } else if i == -1 {
            Some((self.tau(-1)?, self.tau(1)?))
        } else {
            Some((self.tau(i)?, self.tau(i + 2)?))
        }
    }
}

fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Two-sided crossing times of |partial sum| ≥ b, up to `max_k` on each side.
pub fn stopping_trace(path: &WalkPath, b: f64, max_k: usize) -> Result<StoppingTimeTrace> {
    if !(b > 0.0) {
        return Err(Error::Domain("b must be positive".into()));
    }
    let mut tr = StoppingTimeTrace {
        b,
        taus_right: vec![],
        taus_left: vec![],
        signs_right: vec![],
        signs_left: vec![],
        i_stars_right: vec![],
        i_stars_left: vec![],
        truncated_right: false,
        truncated_left: false,
    };
    let mut prev = 0;
    while tr.taus_right.len() < max_k {
        let y0 = path.y(prev);
        match (prev + 1..=path.hi()).find(|&t| (path.y(t) - y0).abs() >= b) {
            Some(t) => {
                tr.signs_right.push(sgn(path.y(t) - y0));
                tr.taus_right.push(t);
                prev = t;
            }
            None => {
                tr.truncated_right = true;
                break;
            }
        }
    }
    let mut prev = 0;
    while tr.taus_left.len() < max_k {
        let y0 = path.y(prev);
        match (path.lo()..prev).rev().find(|&t| (y0 - path.y(t)).abs() >= b) {
            Some(t) => {
                tr.signs_left.push(sgn(y0 - path.y(t)));
                tr.taus_left.push(t);
                prev = t;
            }
            None => {
                tr.truncated_left = true;
                break;
            }
        }
    }
    tr.i_stars_right = i_stars_right(&tr.signs_right);
    tr.i_stars_left = i_stars_left(&tr);
    Ok(tr)
}

/// i*₁ = inf{i ≥ 1: S_i = S_{i+1}}, i*_{j+1} = inf{i ≥ i*_j + 2: S_i = S_{i+1} = -S_{i*_j}}.
pub fn i_stars_right(signs: &[i8]) -> Vec<i64> {
    let s = |i: i64| signs[i as usize - 1];
    let n = signs.len() as i64;
    let mut out = Vec::new();
    let mut i = 1;
    let mut want: Option<i8> = None;
    while i < n {
        if s(i) == s(i + 1) && want.map_or(true, |w| s(i) == w) {
            out.push(i);
            want = Some(-s(i));
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// Left chain: the successor of -1 is 1, of i ≤ -2 is i+1.
fn i_stars_left(tr: &StoppingTimeTrace) -> Vec<i64> {
    let mut out = Vec::new();
    let Some(&i1) = tr.i_stars_right.first() else { return out };
    let Some(s_i1) = tr.sign(i1) else { return out };
    let nl = tr.signs_left.len() as i64;
    let pair = |i: i64| -> Option<i8> {
        let a = tr.sign(i)?;
        let b = tr.sign(if i == -1 { 1 } else { i + 1 })?;
        if a == b { Some(a) } else { None }
    };
    let search = |from: i64, want: i8| -> Option<i64> {
        let mut i = from;
        while i >= -nl {
            if pair(i) == Some(want) {
                return Some(i);
            }
            i -= 1;
        }
        None
    };
    let first = if pair(-1) == Some(-s_i1) { Some(-1) } else { search(-2, -s_i1) };
    let Some(mut cur) = first else { return out };
    out.push(cur);
    while let Some(next) = tr.sign(cur).and_then(|sc| search(cur - 2, -sc)) {
        out.push(next);
        cur = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gauss_path(seed: u64, k: i64, sd: f64) -> WalkPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        let chi: Vec<f64> = (0..2 * k).map(|_| n.sample(&mut rng)).collect();
        WalkPath::symmetric(k, &chi).unwrap()
    }

    #[test]
    fn y_convention() {
        let p = WalkPath::from_increments(-2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        // χ(-2..=1) = 1,2,3,4
        assert_eq!(p.y(0), 0.0);
        assert_eq!(p.y(1), 4.0);
        assert_eq!(p.y(-1), -3.0);
        assert_eq!(p.y(-2), -5.0);
        assert_eq!(p.y(-3), -6.0);
        assert_eq!(p.increment(-3, 1), 10.0);
        assert_eq!(p.chi(-1), 2.0);
    }

    #[test]
    fn classifier_examples() {
        let p = WalkPath::from_increments(1, &[3.0, -1.0, 3.0]).unwrap();
        assert_eq!(classify_elongation(&p, 0, 3, 2.0, 0.5).unwrap(), ElongationClass::Positive);
        assert_eq!(classify_elongation_brute(&p, 0, 3, 2.0, 0.5).unwrap(), ElongationClass::Positive);
        let up = WalkPath::from_increments(1, &[1.0; 6]).unwrap();
        assert_eq!(classify_elongation(&up, 0, 6, 2.0, 0.5).unwrap(), ElongationClass::Positive);
        let flat = WalkPath::from_increments(1, &[0.0; 6]).unwrap();
        assert_eq!(classify_elongation(&flat, 0, 6, 2.0, 0.5).unwrap(), ElongationClass::None);
        assert!(classify_elongation(&flat, 0, 7, 2.0, 0.5).is_err());
    }

    #[test]
    fn classifier_matches_brute_force() {
        for seed in 0..30 {
            let p = gauss_path(seed, 40, 1.0);
            for a in -40..40 {
                for b in a + 1..=40 {
                    assert_eq!(
                        classify_elongation(&p, a, b, 1.5, 0.3).unwrap(),
                        classify_elongation_brute(&p, a, b, 1.5, 0.3).unwrap()
                    );
                }
            }
        }
    }

    fn maps_brute(p: &WalkPath, k: i64, fs: f64, f: f64) -> Vec<[Option<i64>; 4]> {
        (-k..=k)
            .map(|x| {
                let ends: Vec<i64> = (x + 1..=k).filter(|&b| classify_elongation_brute(p, x, b, fs, f).unwrap() != ElongationClass::None).collect();
                let starts: Vec<i64> = (-k..x).filter(|&a| classify_elongation_brute(p, a, x, fs, f).unwrap() != ElongationClass::None).collect();
                [ends.first().copied(), ends.last().copied(), starts.last().copied(), starts.first().copied()]
            })
            .collect()
    }

    #[test]
    fn boundary_maps_match_scan() {
        for seed in 0..10 {
            let p = gauss_path(100 + seed, 30, 1.0);
            let br = maps_brute(&p, 30, 1.0, 0.2);
            let mut ix = ElongationIndex::new(&p, -30, 30, 1.0, 0.2).unwrap();
            for (i, x) in (-30..=30).enumerate() {
                assert_eq!([ix.b_minus(x), ix.b_plus(x), ix.a_plus(x), ix.a_minus(x)], br[i], "x = {x}");
                if let Some(b) = ix.b_minus(x) {
                    let (am, ap) = (ix.a_minus(b).unwrap(), ix.a_plus(b).unwrap());
                    assert!(am <= x && x <= ap);
                }
                if let Some(a) = ix.a_plus(x) {
                    let (bm, bp) = (ix.b_minus(a).unwrap(), ix.b_plus(a).unwrap());
                    assert!(bm <= x && x <= bp);
                }
            }
        }
    }

    #[test]
    fn flat_path_has_no_maps_and_is_p0() {
        let p = WalkPath::symmetric(10, &[0.0; 20]).unwrap();
        let mut ix = ElongationIndex::new(&p, -10, 10, 1.0, 0.2).unwrap();
        for x in -10..=10 {
            assert!(ix.b_minus(x).is_none() && ix.a_plus(x).is_none());
        }
        let prm = ElongationParams::new(1.0, 0.2, 0.1, 0.1, 1.0, 1.0).unwrap();
        let fl = exceptional_membership(&p, &prm, 3).unwrap();
        assert!(fl.p0 && fl.p1.iter().all(|&x| x));
        let out = construct_localization(&p, &prm, &LocalizationOptions::default()).unwrap();
        assert!(out.is_exceptional());
    }

    #[test]
    fn planted_elongation_right_end() {
        // single rise of 3 over steps 5..=10, flat elsewhere
        let mut chi = vec![0.0; 40];
        for c in chi.iter_mut().skip(24).take(6) {
            *c = 0.5;
        }
        let p = WalkPath::symmetric(20, &chi).unwrap();
        // χ(α) at index α+19: rise on α = 5..=10
        let mut ix = ElongationIndex::new(&p, -20, 20, 1.2, 0.2).unwrap();
        // first a with an elongation is -20; for a = 4 the minimal end is 10
        assert_eq!(ix.b_minus(4), Some(10));
        assert_eq!(ix.first_end(4, 1), Some(10));
        assert_eq!(ix.first_end(4, -1), None);
    }

    /// Down-ramp of depth 2F*+2f on [-L, 0], up-ramp on [0, L], repeated.
    fn planted_v(l: i64, depth: f64) -> WalkPath {
        // zigzag with knots Y(jL) = 0 for even j, depth for odd j
        let k = 3 * l;
        let y = (-k..=k)
            .map(|a| {
                let x = a as f64 / l as f64;
                depth * (x - 2.0 * (x / 2.0).round()).abs()
            })
            .collect();
        WalkPath::from_y(-k, y).unwrap()
    }

    #[test]
    fn planted_v_localizes() {
        let (fs, f) = (1.0, 0.2);
        let p = planted_v(10, 2.0 * fs + 2.0 * f);
        let prm = ElongationParams::new(fs, f, 0.1, 0.3, 1.0, 3.0).unwrap();
        let opts = LocalizationOptions { mode: LocalizationMode::Constructive, extra: 0, r1: 0.0 };
        let out = construct_localization(&p, &prm, &opts).unwrap();
        assert!(out.exceptional.is_none(), "{:?}", out.exceptional);
        assert_eq!(out.alpha_star(0), Some(0));
        assert!(out.alpha0_at_origin);
        let (jl, jr) = out.j_steps.unwrap();
        assert!(jl < 0 && jr == 0 || jl < 0 && 0 < jr);
        // mirrored walk flips the sign, keeps the intervals
        let m = construct_localization(&p.negated(), &prm, &opts).unwrap();
        assert_eq!(m.j_steps, out.j_steps);
        assert_eq!(m.tau, out.tau.map(|t| -t));
        for e in &out.chain {
            assert_eq!(classify_elongation_brute(&p, e.a, e.b, fs, f).unwrap().sign(), e.sign);
        }
    }

    fn check_chain(p: &WalkPath, out: &LocalizationOutput, fs: f64, f: f64) {
        let ch = &out.chain;
        for w in ch.windows(2) {
            assert_eq!(w[0].b, w[1].a, "contiguity");
            assert_eq!(w[0].sign, -w[1].sign, "alternation");
        }
        for e in ch {
            assert_eq!(classify_elongation(p, e.a, e.b, fs, f).unwrap().sign(), e.sign, "{e:?}");
        }
        // first-extremum rule
        let z = out.alpha_star(0).unwrap();
        let ind = &out.indices;
        let s = out.first_sign.unwrap() as f64;
        let (lo, hi) = (ind.a_minus_b0.unwrap(), ind.b_m1.unwrap());
        for x in lo..=hi {
            assert!(s * p.y(x) >= s * p.y(z));
            if x < z {
                assert!(s * p.y(x) > s * p.y(z));
            }
        }
        let (jl, jr) = out.j_steps.unwrap();
        assert!(jl < 0 && jr >= 0);
    }

    #[test]
    fn localization_self_consistency() {
        // steps of size f keep max |χ| ≤ f; a large F*/f makes P₂′ rare enough
        let (fs, f) = (16.0, 1.0);
        let prm = ElongationParams::new(fs, f, 0.01, 0.05, 1.0, 30.0).unwrap();
        let k = prm.half_range().unwrap();
        let mut ok = 0;
        for seed in 0..400 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chi: Vec<f64> = (0..2 * k).map(|_| if rng.random::<bool>() { f } else { -f }).collect();
            let p = WalkPath::symmetric(k, &chi).unwrap();
            let out = construct_localization(&p, &prm, &LocalizationOptions { extra: 1, ..Default::default() }).unwrap();
            if out.exceptional.is_none() {
                ok += 1;
                check_chain(&p, &out, fs, f);
            }
        }
        assert!(ok > 0);
    }

    #[test]
    fn constructive_mode_chains_are_valid() {
        let (fs, f) = (2.0, 0.45);
        let prm = ElongationParams::new(fs, f, 0.01, 0.05, 1.0, 1.5).unwrap();
        let opts = LocalizationOptions { mode: LocalizationMode::Constructive, extra: 2, r1: 0.0 };
        let mut ok = 0;
        for seed in 0..300 {
            let p = gauss_path(seed, 150, 0.5);
            let out = construct_localization(&p, &prm, &opts).unwrap();
            if out.exceptional.is_none() {
                ok += 1;
                check_chain(&p, &out, fs, f);
            }
        }
        assert!(ok > 100);
    }

    #[test]
    fn p2_prime_scan_matches_brute() {
        let mut hits = 0;
        for seed in 0..60 {
            let p = gauss_path(500 + seed, 12, 1.0);
            let a = p2_prime_scan(&p, -12, 12, 1.0, 0.2);
            assert_eq!(a, p2_prime_brute(&p, -12, 12, 1.0, 0.2), "seed {seed}");
            hits += a as usize;
        }
        assert!(hits > 0 && hits < 60);
    }

    #[test]
    fn chains_match_exhaustive() {
        // exhaustive search for alternating disjoint chains on small paths
        fn best(els: &[(i64, i64, i8)], cur: i64, sign: i8) -> usize {
            els.iter()
                .filter(|e| e.0 >= cur && (sign == 0 || e.2 == sign))
                .map(|e| 1 + best(els, e.1, -e.2))
                .max()
                .unwrap_or(0)
        }
        for seed in 0..20 {
            let p = gauss_path(900 + seed, 12, 1.0);
            let mut els = vec![];
            let mut els_left = vec![];
            for a in -12..12 {
                for b in a + 1..=12 {
                    let c = classify_elongation(&p, a, b, 0.8, 0.1).unwrap().sign();
                    if c != 0 && a >= 0 {
                        els.push((a, b, c));
                    }
                    if c != 0 && b <= 0 {
                        els_left.push((-b, -a, c));
                    }
                }
            }
            let mut ix = ElongationIndex::new(&p, -12, 12, 0.8, 0.1).unwrap();
            assert_eq!(ix.chain_right(0, 12, 100), best(&els, 0, 0));
            assert_eq!(ix.chain_right(0, 12, 2), best(&els, 0, 0).min(2));
            assert_eq!(ix.chain_left(0, -12, 100), best(&els_left, 0, 0));
        }
    }

    #[test]
    fn p0_frequency_decreases_with_q() {
        let fs = 1.0;
        let mut last = 2.0;
        for q in [0.2, 0.5, 1.0] {
            let prm = ElongationParams::new(fs, 0.2, 0.01, 0.05, 1.0, q).unwrap();
            let k = prm.half_range().unwrap();
            let n = 200;
            let hits = (0..n)
                .filter(|&s| {
                    let p = gauss_path(7000 + s, k, 0.25);
                    let mut ix = ElongationIndex::for_params(&p, &prm).unwrap();
                    !ix.any()
                })
                .count() as f64
                / n as f64;
            assert!(hits <= last);
            last = hits;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn max_chi_flags_p2_double_prime() {
        let mut chi = vec![0.0; 20];
        chi[3] = 0.5;
        let p = WalkPath::symmetric(10, &chi).unwrap();
        let prm = ElongationParams::new(1.0, 0.2, 0.1, 0.1, 1.0, 1.0).unwrap();
        let fl = exceptional_membership(&p, &prm, 2).unwrap();
        assert!(fl.max_chi_exceeds_f && fl.p2_double_prime);
    }

    #[test]
    fn stopping_unit_steps() {
        let p = WalkPath::symmetric(10, &[1.0; 20]).unwrap();
        let tr = stopping_trace(&p, 1.0, 5).unwrap();
        assert_eq!(tr.taus_right, vec![1, 2, 3, 4, 5]);
        assert_eq!(tr.taus_left, vec![-1, -2, -3, -4, -5]);
        assert!(tr.signs_right.iter().chain(&tr.signs_left).all(|&s| s == 1));
        let fl = stopping_trace(&p.negated(), 1.0, 5).unwrap();
        assert_eq!(fl.taus_right, tr.taus_right);
        assert!(fl.signs_right.iter().all(|&s| s == -1));
        let tr = stopping_trace(&p, 1.0, 50).unwrap();
        assert!(tr.truncated_right && tr.taus_right.len() == 10);
    }

    #[test]
    fn i_star_chain_rules() {
        assert_eq!(i_stars_right(&[1, 1, -1, 1, -1, -1, 1, 1]), vec![1, 5, 7]);
        assert_eq!(i_stars_right(&[1, -1, 1, -1]), Vec::<i64>::new());
    }

    #[test]
    fn caught_elongations_from_stopping_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (fs, f) = (1.0, 0.2);
        let b = fs + f / 2.0;
        let mut checked = 0;
        for _ in 0..200 {
            let chi: Vec<f64> = (0..4000).map(|_| if rng.random::<bool>() { 0.05 } else { -0.05 }).collect();
            let p = WalkPath::symmetric(2000, &chi).unwrap();
            let tr = stopping_trace(&p, b, 12).unwrap();
            for &i in &tr.i_stars_right {
                let s = tr.sign(i).unwrap() as f64;
                let (l, r) = tr.pair_interval(i).unwrap();
                assert!(s * p.increment(l, r) >= 2.0 * fs + f - 1e-9);
                // Term5: Y over (α₁-1, α₂] ≥ -F* - f/2 for α₁ ≤ τ_i < α₂
                let ti = tr.tau(i).unwrap();
                for a1 in l + 1..=ti {
                    for a2 in ti + 1..=r {
                        assert!(s * p.increment(a1 - 1, a2) >= -fs - f / 2.0 - 1e-9);
                    }
                }
                checked += 1;
            }
            for w in tr.i_stars_right.windows(2) {
                assert_eq!(tr.sign(w[1]), tr.sign(w[0]).map(|x| -x));
            }
        }
        assert!(checked > 100);
    }

    proptest! {
        #[test]
        fn drawdown_equivalence(chi in proptest::collection::vec(-2.0f64..2.0, 2..40), fs in 0.5f64..3.0, fr in 0.01f64..0.24) {
            let p = WalkPath::from_increments(1, &chi).unwrap();
            let f = fr * fs;
            let n = chi.len() as i64;
            for a in 0..n {
                let c = classify_elongation(&p, a, n, fs, f).unwrap();
                prop_assert_eq!(c, classify_elongation_brute(&p, a, n, fs, f).unwrap());
            }
        }

        #[test]
        fn negation_swaps_signs(chi in proptest::collection::vec(-2.0f64..2.0, 2..30)) {
            let p = WalkPath::from_increments(1, &chi).unwrap();
            let m = p.negated();
            let n = chi.len() as i64;
            let a = classify_elongation(&p, 0, n, 1.0, 0.2).unwrap().sign();
            let b = classify_elongation(&m, 0, n, 1.0, 0.2).unwrap().sign();
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn stopping_crossings_reach_b(seed in 0u64..1000, b in 0.5f64..3.0) {
            let p = gauss_path(seed, 200, 0.4);
            let tr = stopping_trace(&p, b, 20).unwrap();
            for k in 1..=tr.taus_right.len() as i64 {
                let d = p.increment(tr.tau(k - 1).unwrap(), tr.tau(k).unwrap());
                prop_assert!(d.abs() >= b);
                prop_assert_eq!(sgn(d), tr.sign(k).unwrap());
            }
            for k in 1..=tr.taus_left.len() as i64 {
                prop_assert!(p.increment(tr.tau(-k).unwrap(), tr.tau(-k + 1).unwrap()).abs() >= b);
            }
        }
    }
}
