//! Multibody block potential V(m^{δ*}_I, h): exact evaluation by
//! enumeration of the constrained tilted block measures, and the polymer
//! (Mayer/Ursell) series with its certified geometric tail.

use crate::field::{decompose_block, plus_count, sample_field, FieldRealization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const MAX_JOINT: u64 = 50_000_000;
const MAX_CLUSTERS: u64 = 5_000_000;

/// J(r) = 1{|r| ≤ 1/2}; the slack absorbs roundoff in γ|i-j|.
fn kac_j(r: f64) -> f64 {
    if r.abs() <= 0.5 + 1e-12 {
        1.0
    } else {
        0.0
    }
}

/// ½ - δ* ≤ δ*|x-y| ≤ ½ + δ*.
pub fn in_window(x: i64, y: i64, delta_star: f64) -> bool {
    let d = delta_star * (x - y).abs() as f64;
    d >= 0.5 - delta_star - 1e-12 && d <= 0.5 + delta_star + 1e-12
}

/// U between two blocks of n spins each; block x holds sites ((x-1)n, xn].
pub fn pair_potential(sigma_x: &[i8], sigma_y: &[i8], x: i64, y: i64, gamma: f64, delta_star: f64) -> f64 {
    if !in_window(x, y, delta_star) {
        return 0.0;
    }
    let n = sigma_x.len() as i64;
    let jb = kac_j(delta_star * (x - y).abs() as f64);
    let mut u = 0.0;
    for (a, &si) in sigma_x.iter().enumerate() {
        let i = (x - 1) * n + 1 + a as i64;
        for (b, &sj) in sigma_y.iter().enumerate() {
            let j = (y - 1) * n + 1 + b as i64;
            u -= gamma * (kac_j(gamma * (i - j).abs() as f64) - jb) * (si * sj) as f64;
        }
    }
    u
}

/// Sum over connected graphs on {0..k} of Π f_ij, by the subset recursion
/// C(S) = Z(S) - Σ_{T ∋ min S, T ⊊ S} C(T) Z(S∖T).
pub fn connected_sum(k: usize, f: &[f64]) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let full = (1usize << k) - 1;
    let mut z = vec![1.0; full + 1];
    for s in 1..=full {
        let top = usize::BITS as usize - 1 - s.leading_zeros() as usize;
        let rest = s & !(1 << top);
        let mut p = z[rest];
        let mut r = rest;
        while r != 0 {
            let j = r.trailing_zeros() as usize;
            p *= 1.0 + f[top * k + j];
            r &= r - 1;
        }
        z[s] = p;
    }
    let mut c = vec![0.0; full + 1];
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s & !low;
        let mut acc = z[s];
        // proper subsets T of s containing low: T = low | sub, sub ⊊ rest
        let mut sub = rest;
        while sub != 0 {
            sub = (sub - 1) & rest;
            let t = low | sub;
            if t != s {
                acc -= c[t] * z[s & !t];
            }
            if sub == 0 {
                break;
            }
        }
        c[s] = acc;
    }
    c[full]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta_star: f64,
    /// block indices
    pub blocks: Vec<i64>,
    /// (m₁, m₂) per block: magnetization on B⁺ and on B⁻
    pub m: Vec<(f64, f64)>,
}

impl SystemSpec {
    pub fn n(&self) -> Result<usize> {
        crate::field::sites_per_block(self.gamma, self.delta_star)
    }

    /// (δ*)²/γ ≤ 1/(6e³β).
    pub fn convergent(&self) -> bool {
        self.delta_star * self.delta_star / self.gamma <= 1.0 / (6.0 * 3f64.exp() * self.beta)
    }

    pub fn s_bound(&self) -> f64 {
        6.0 * 3f64.exp() * self.beta * self.delta_star * self.delta_star / self.gamma
    }
}

#[derive(Debug, Clone)]
struct BlockMeasure {
    x: i64,
    /// admissible configurations (±1 per site) and their probabilities
    configs: Vec<Vec<i8>>,
    probs: Vec<f64>,
}

/// Blocks with their constrained tilted measures and the pair tables of U.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub spec: SystemSpec,
    pub n: usize,
    blocks: Vec<BlockMeasure>,
    /// U over config pairs for window pairs (a < b)
    tables: HashMap<(usize, usize), Vec<f64>>,
}

impl BlockSystem {
    pub fn new(spec: &SystemSpec, h: &FieldRealization) -> Result<Self> {
        let n = spec.n()?;
        if n > 12 {
            return Err(Error::SizeLimit(format!("block size {n} exceeds 12")));
        }
        if spec.m.len() != spec.blocks.len() {
            return Err(Error::Domain("one constraint per block is required".into()));
        }
        let mut seen = spec.blocks.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != spec.blocks.len() {
            return Err(Error::Domain("block indices must be distinct".into()));
        }
        let half = n / 2;
        let mut blocks = vec![];
        for (&x, &(m1, m2)) in spec.blocks.iter().zip(&spec.m) {
            let st = decompose_block(h, x, n)?;
            let k_plus = plus_count(half, m1)?;
            let k_minus = plus_count(half, m2)?;
            let start = (x - 1) * n as i64 + 1;
            let pos = |i: i64| (i - start) as usize;
            let mut in_plus = vec![false; n];
            for &i in &st.b_plus {
                in_plus[pos(i)] = true;
            }
            let mut tilt = vec![0.0; n];
            for &i in &st.d_set {
                tilt[pos(i)] = 2.0 * spec.beta * spec.theta * st.lambda as f64;
            }
            let mut configs = vec![];
            let mut logw = vec![];
            for mask in 0u32..(1 << n) {
                let s: Vec<i8> = (0..n).map(|k| if mask >> k & 1 == 1 { 1 } else { -1 }).collect();
                let kp = (0..n).filter(|&k| in_plus[k] && s[k] > 0).count();
                let km = (0..n).filter(|&k| !in_plus[k] && s[k] > 0).count();
                if kp == k_plus && km == k_minus {
                    logw.push((0..n).map(|k| tilt[k] * s[k] as f64).sum::<f64>());
                    configs.push(s);
                }
            }
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
            let tot: f64 = w.iter().sum();
            blocks.push(BlockMeasure { x, configs, probs: w.iter().map(|v| v / tot).collect() });
        }
        let mut tables = HashMap::new();
        for a in 0..blocks.len() {
            for b in a + 1..blocks.len() {
                let (ba, bb) = (&blocks[a], &blocks[b]);
                if !in_window(ba.x, bb.x, spec.delta_star) {
                    continue;
                }
                let mut t = Vec::with_capacity(ba.configs.len() * bb.configs.len());
                for ca in &ba.configs {
                    for cb in &bb.configs {
                        t.push(pair_potential(ca, cb, ba.x, bb.x, spec.gamma, spec.delta_star));
                    }
                }
                tables.insert((a, b), t);
            }
        }
        Ok(Self { spec: spec.clone(), n, blocks, tables })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn linked(&self, a: usize, b: usize) -> bool {
        let k = if a < b { (a, b) } else { (b, a) };
        self.tables.contains_key(&k)
    }

    fn u(&self, a: usize, ca: usize, b: usize, cb: usize) -> f64 {
        let (a, ca, b, cb) = if a < b { (a, ca, b, cb) } else { (b, cb, a, ca) };
        match self.tables.get(&(a, b)) {
            Some(t) => t[ca * self.blocks[b].configs.len() + cb],
            None => 0.0,
        }
    }

    /// Largest |U| over all window pairs and configurations.
    pub fn u_max(&self) -> f64 {
        self.tables.values().flat_map(|t| t.iter()).fold(0.0, |m, u| m.max(u.abs()))
    }

    /// Σ over joint configurations of `idx` of Π probabilities × g(configs).
    fn expect<F: FnMut(&[usize]) -> f64>(&self, idx: &[usize], mut g: F) -> Result<f64> {
        let sizes: Vec<usize> = idx.iter().map(|&a| self.blocks[a].configs.len()).collect();
        let total = sizes.iter().try_fold(1u64, |acc, &s| acc.checked_mul(s as u64)).unwrap_or(u64::MAX);
        if total > MAX_JOINT {
            return Err(Error::SizeLimit(format!("{total} joint block configurations")));
        }
        let mut c = vec![0usize; idx.len()];
        let mut sum = 0.0;
        loop {
            let p: f64 = idx.iter().zip(&c).map(|(&a, &ci)| self.blocks[a].probs[ci]).product();
            sum += p * g(&c);
            let mut k = 0;
            loop {
                if k == c.len() {
                    return Ok(sum);
                }
                c[k] += 1;
                if c[k] < sizes[k] {
                    break;
                }
                c[k] = 0;
                k += 1;
            }
        }
    }

    /// Blocks of R connected through window links.
    pub fn is_connected(&self, r: &[usize]) -> bool {
        if r.is_empty() {
            return false;
        }
        let mut seen = vec![false; r.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..r.len() {
                if !seen[j] && self.linked(r[i], r[j]) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// ρ(R) = E[Σ_{g connected on R} Π (e^{βU} - 1)] under the product of block
/// measures of R.
pub fn polymer_activity(r: &[usize], sys: &BlockSystem, r_max: usize) -> Result<f64> {
    if r.len() < 2 {
        return Err(Error::Domain("a polymer has at least two blocks".into()));
    }
    if r.len() > r_max {
        return Err(Error::SizeLimit(format!("polymer of {} blocks exceeds R_max = {r_max}", r.len())));
    }
    if r.iter().any(|&a| a >= sys.len()) {
        return Err(Error::OutOfRange("polymer block outside the system".into()));
    }
    if !sys.is_connected(r) {
        return Ok(0.0);
    }
    let k = r.len();
    let beta = sys.spec.beta;
    let mut f = vec![0.0; k * k];
    sys.expect(r, |c| {
        for i in 0..k {
            for j in i + 1..k {
                let v = (beta * sys.u(r[i], c[i], r[j], c[j])).exp_m1();
                f[i * k + j] = v;
                f[j * k + i] = v;
            }
        }
        connected_sum(k, &f)
    })
}

/// (1/β) log E[Π_{x<y} e^{βU}] by enumeration.
pub fn v_direct(sys: &BlockSystem) -> Result<f64> {
    if sys.len() > 6 {
        return Err(Error::SizeLimit(format!("{} blocks exceed 6", sys.len())));
    }
    let idx: Vec<usize> = (0..sys.len()).collect();
    let pairs: Vec<(usize, usize)> = sys.tables.keys().copied().collect();
    let beta = sys.spec.beta;
    let e = sys.expect(&idx, |c| {
        let u: f64 = pairs.iter().map(|&(a, b)| sys.u(a, c[a], b, c[b])).sum();
        (beta * u).exp_m1()
    })?;
    // E[e^{βU}] - 1 is accumulated directly; it is tiny at desk scale
    Ok(e.ln_1p() / beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polymer {
    pub blocks: Vec<usize>,
    pub activity: f64,
}

/// Every window-connected R with 2 ≤ |R| ≤ r_max and its activity.
pub fn polymers(sys: &BlockSystem, r_max: usize) -> Result<Vec<Polymer>> {
    let k = sys.len();
    if k >= usize::BITS as usize {
        return Err(Error::SizeLimit("too many blocks".into()));
    }
    let mut out = vec![];
    for mask in 1usize..(1 << k) {
        let sz = mask.count_ones() as usize;
        if sz < 2 || sz > r_max {
            continue;
        }
        let r: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        if !sys.is_connected(&r) {
            continue;
        }
        let activity = polymer_activity(&r, sys, r_max)?;
        out.push(Polymer { blocks: r, activity });
    }
    Ok(out)
}

/// Φᵀ of a family of polymers: connected graphs with bond -1 on overlap.
pub fn ursell(family: &[&[usize]]) -> f64 {
    let k = family.len();
    let mut f = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            if family[i].iter().any(|a| family[j].contains(a)) {
                f[i * k + j] = -1.0;
                f[j * k + i] = -1.0;
            }
        }
    }
    connected_sum(k, &f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEstimate {
    pub s: f64,
    /// 6e³β(δ*)²/γ
    pub bound: f64,
    pub ok: bool,
    pub margin: f64,
}

/// sup over blocks x of Σ_{R ∋ x} e^{|R|}|ρ(R)|.
pub fn s_from_polymers(sys: &BlockSystem, pols: &[Polymer]) -> SEstimate {
    let s = (0..sys.len())
        .map(|x| {
            pols.iter()
                .filter(|p| p.blocks.contains(&x))
                .map(|p| (p.blocks.len() as f64).exp() * p.activity.abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let bound = sys.spec.s_bound();
    SEstimate { s, bound, ok: s < bound, margin: bound - s }
}

pub fn s_estimate(sys: &BlockSystem, r_max: usize) -> Result<SEstimate> {
    Ok(s_from_polymers(sys, &polymers(sys, r_max)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub order: usize,
    pub value: f64,
    /// |𝒞|/β · S^order/(1-S)
    pub tail_bound: f64,
    pub s: f64,
    pub clusters: u64,
}

/// Ursell series truncated at `order` polymers.
pub fn v_series(sys: &BlockSystem, order: usize, r_max: usize) -> Result<SeriesValue> {
    if !sys.spec.convergent() {
        return Err(Error::ConvergenceCondition(format!(
            "(delta*)^2/gamma = {} exceeds 1/(6 e^3 beta) = {}",
            sys.spec.delta_star.powi(2) / sys.spec.gamma,
            1.0 / (6.0 * 3f64.exp() * sys.spec.beta)
        )));
    }
    if order == 0 {
        return Err(Error::Domain("order must be at least 1".into()));
    }
    let pols: Vec<Polymer> = polymers(sys, r_max)?.into_iter().filter(|p| p.activity != 0.0).collect();
    let s = s_from_polymers(sys, &pols).s;
    let np = pols.len() as u64;
    // multisets of size ≤ order out of np polymers
    let mut count = 0u64;
    for n in 1..=order as u64 {
        let mut c = 1u64;
        for i in 0..n {
            c = c.saturating_mul(np + i).saturating_div(i + 1);
        }
        count = count.saturating_add(c);
    }
    if count > MAX_CLUSTERS {
        return Err(Error::SizeLimit(format!("{count} polymer multisets at order {order}")));
    }
    let mut total = 0.0;
    let mut clusters = 0u64;
    let mut pick: Vec<usize> = vec![];
    fn rec(pols: &[Polymer], order: usize, start: usize, pick: &mut Vec<usize>, total: &mut f64, clusters: &mut u64) {
        if !pick.is_empty() {
            let fam: Vec<&[usize]> = pick.iter().map(|&i| pols[i].blocks.as_slice()).collect();
            let phi = ursell(&fam);
            if phi != 0.0 {
                let mut w = phi;
                let mut run = 1usize;
                for k in 0..pick.len() {
                    w *= pols[pick[k]].activity;
                    if k > 0 && pick[k] == pick[k - 1] {
                        run += 1;
                        w /= run as f64;
                    } else {
                        run = 1;
                    }
                }
                *total += w;
                *clusters += 1;
            }
        }
        if pick.len() == order {
            return;
        }
        for i in start..pols.len() {
            pick.push(i);
            rec(pols, order, i, pick, total, clusters);
            pick.pop();
        }
    }
    rec(&pols, order, 0, &mut pick, &mut total, &mut clusters);
    let beta = sys.spec.beta;
    let tail_bound = if s < 1.0 { sys.len() as f64 / beta * s.powi(order as i32) / (1.0 - s) } else { f64::INFINITY };
    Ok(SeriesValue { order, value: total / beta, tail_bound, s, clusters })
}

/// |V| ≤ |𝒞|·(1/β)·S/(1-S).
pub fn v_bound(sys: &BlockSystem, s: f64) -> f64 {
    if s < 1.0 {
        sys.len() as f64 / sys.spec.beta * s / (1.0 - s)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub empirical: f64,
    pub bound: f64,
    pub s: f64,
    pub ok: bool,
}

/// Half the change of V when h_site is flipped, against (1/β)S/(1-S) with S
/// the larger of the two fields' values.
pub fn lipschitz_check(spec: &SystemSpec, h: &FieldRealization, site: i64, r_max: usize) -> Result<LipschitzCheck> {
    if !spec.convergent() {
        return Err(Error::ConvergenceCondition("(delta*)^2/gamma exceeds 1/(6 e^3 beta)".into()));
    }
    let mut h2 = h.clone();
    let k = site - h.start;
    if k < 0 || k >= h.values.len() as i64 {
        return Err(Error::OutOfRange(format!("site {site} not in the field realization")));
    }
    h2.values[k as usize] *= -1;
    let a = BlockSystem::new(spec, h)?;
    let b = BlockSystem::new(spec, &h2)?;
    let s = s_estimate(&a, r_max)?.s.max(s_estimate(&b, r_max)?.s);
    let empirical = (v_direct(&a)? - v_direct(&b)?).abs() / 2.0;
    let bound = if s < 1.0 { s / (1.0 - s) / spec.beta } else { f64::INFINITY };
    Ok(LipschitzCheck { empirical, bound, s, ok: empirical <= bound })
}

/// A small system for checking the series: δ* = 1/4, γ = δ*/n, β at
/// `slack` times the convergence edge, θ = ½, random lattice magnetizations.
pub fn oracle_system(seed: u64, n: usize, blocks: Vec<i64>, slack: f64) -> Result<(SystemSpec, FieldRealization)> {
    if blocks.is_empty() || n < 2 || n % 2 != 0 {
        return Err(Error::Domain("need blocks and an even n >= 2".into()));
    }
    let delta_star = 0.25;
    let gamma = delta_star / n as f64;
    let beta = slack / (6.0 * 3f64.exp() * delta_star * delta_star / gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let m = blocks
        .iter()
        .map(|_| {
            let k1 = rng.random_range(0..=half);
            let k2 = rng.random_range(0..=half);
            (2.0 * k1 as f64 / half as f64 - 1.0, 2.0 * k2 as f64 / half as f64 - 1.0)
        })
        .collect();
    let lo = blocks.iter().min().expect("nonempty") - 1;
    let hi = blocks.iter().max().expect("nonempty");
    let h = sample_field(seed, lo * n as i64, ((hi - lo) as usize) * n + 1)?;
    Ok((SystemSpec { beta, theta: 0.5, gamma, delta_star, blocks, m }, h))
}
