//! Random field realizations, δ*-block decomposition, the exact block
//! cumulant 𝒢 and its Proposition PP splitting, X(x) and the walk
//! increments χ(α).

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cw_phase::PhaseConstants;
use crate::error::{Error, Result};
use crate::numeric::{bisect, ln_binomial, ln_cosh, log_sum_exp};

/// Site i uses bit (i + SITE_OFFSET) of the ChaCha8 stream of the seed, so
/// any index range is reproducible on its own.
const SITE_OFFSET: i128 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRealization {
    pub seed: u64,
    /// Microscopic index of `values[0]`.
    pub start: i64,
    pub values: Vec<i8>,
}

impl FieldRealization {
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    pub fn get(&self, i: i64) -> Option<i8> {
        if i < self.start || i >= self.end() {
            None
        } else {
            Some(self.values[(i - self.start) as usize])
        }
    }

    /// h -> -h.
    pub fn flipped(&self) -> Self {
        Self { seed: self.seed, start: self.start, values: self.values.iter().map(|v| -v).collect() }
    }

    /// Sites (a, b] (microscopic indices a+1..=b).
    pub fn slice(&self, a: i64, b: i64) -> Result<&[i8]> {
        if a + 1 < self.start || b > self.end() || b < a {
            return Err(Error::OutOfRange(format!("sites ({a}, {b}] not in the realization")));
        }
        Ok(&self.values[(a + 1 - self.start) as usize..(b + 1 - self.start) as usize])
    }
}

/// i.i.d. fair ±1 on sites start..start+n_sites.
pub fn sample_field(seed: u64, start: i64, n_sites: usize) -> Result<FieldRealization> {
    if n_sites == 0 {
        return Err(Error::Domain("n_sites must be positive".into()));
    }
    let first = start as i128 + SITE_OFFSET;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos((first / 32) as u128);
    let mut skip = (first % 32) as u32;
    let mut values = Vec::with_capacity(n_sites);
    while values.len() < n_sites {
        let w = rng.next_u32();
        for b in skip..32 {
            if values.len() == n_sites {
                break;
            }
            values.push(if (w >> b) & 1 == 1 { 1 } else { -1 });
        }
        skip = 0;
    }
    Ok(FieldRealization { seed, start, values })
}

/// δ*/γ as an even integer.
pub fn sites_per_block(gamma: f64, delta_star: f64) -> Result<usize> {
    if !(gamma > 0.0 && delta_star > gamma) {
        return Err(Error::Domain(format!("need 0 < gamma < delta*, got {gamma}, {delta_star}")));
    }
    let r = delta_star / gamma;
    if (r - r.round()).abs() > 1e-9 * r {
        return Err(Error::Divisibility(format!("delta*/gamma = {r} is not an integer")));
    }
    let r = r.round() as usize;
    if r % 2 != 0 {
        return Err(Error::Parity(format!("delta*/gamma = {r} must be even")));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub x: i64,
    pub lambda: i8,
    pub d_size: usize,
    /// |B^±(x)| = δ*γ⁻¹/2.
    pub half_size: usize,
    pub p: f64,
    pub b_plus: Vec<i64>,
    pub b_minus: Vec<i64>,
    pub d_set: Vec<i64>,
}

/// (λ, |D|) of a block from its field values.
pub fn lambda_and_d(values: &[i8]) -> (i8, usize) {
    let s: i64 = values.iter().map(|&v| v as i64).sum();
    (s.signum() as i8, (s.unsigned_abs() / 2) as usize)
}

/// Block x holds sites ((x-1)N, xN] with N = sites_per_block.
pub fn decompose_block(h: &FieldRealization, x: i64, sites_per_block: usize) -> Result<BlockStats> {
    if sites_per_block == 0 || sites_per_block % 2 != 0 {
        return Err(Error::Parity(format!("delta*/gamma = {sites_per_block} must be even")));
    }
    let nb = sites_per_block as i64;
    let a = (x - 1) * nb;
    let vals = h.slice(a, a + nb)?;
    let half = sites_per_block / 2;
    let (lambda, d_size) = lambda_and_d(vals);
    let idx = |pred: &dyn Fn(i8) -> bool| -> Vec<i64> {
        vals.iter().enumerate().filter(|(_, &v)| pred(v)).map(|(k, _)| a + 1 + k as i64).collect()
    };
    let a_plus = idx(&|v| v > 0);
    let a_minus = idx(&|v| v < 0);
    let (b_plus, b_minus, d_set) = match lambda {
        0 => (a_plus, a_minus, Vec::new()),
        _ => {
            let (maj, min) = if lambda > 0 { (a_plus, a_minus) } else { (a_minus, a_plus) };
            let b_lam = maj[..half].to_vec();
            let d: Vec<i64> = maj[half..].to_vec();
            let mut b_other = min;
            b_other.extend(&d);
            b_other.sort_unstable();
            if lambda > 0 {
                (b_lam, b_other, d)
            } else {
                (b_other, b_lam, d)
            }
        }
    };
    Ok(BlockStats { x, lambda, d_size, half_size: half, p: d_size as f64 / half as f64, b_plus, b_minus, d_set })
}

/// Number of +1 spins among n with magnetization m, if m is on the lattice.
pub fn plus_count(n: usize, m: f64) -> Result<usize> {
    let k = (1.0 + m) / 2.0 * n as f64;
    if !(-1.0..=1.0).contains(&m) || (k - k.round()).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("m = {m} is not a magnetization of {n} spins")));
    }
    Ok(k.round() as usize)
}

/// -(1/β) log E[e^{2βθλ Σ_D σ}] under the uniform measure on n spins with
/// n·m total, |D| = d of them tilted.
pub fn cumulant_g(lambda: i8, d: usize, n: usize, m: f64, beta: f64, theta: f64) -> Result<f64> {
    if d > n {
        return Err(Error::Domain(format!("|D| = {d} exceeds block half size {n}")));
    }
    let np = plus_count(n, m)?;
    if d == 0 || lambda == 0 {
        return Ok(0.0);
    }
    let a = 2.0 * beta * theta * lambda as f64;
    let terms: Vec<f64> = (0..=d)
        .map(|k| {
            ln_binomial(d as u64, k as i64) + ln_binomial((n - d) as u64, np as i64 - k as i64)
                + a * (2.0 * k as f64 - d as f64)
        })
        .collect();
    Ok(-(log_sum_exp(&terms) - ln_binomial(n as u64, np as i64)) / beta)
}

/// 𝒢 of a block at the pair m, on the component m_{(3+λ)/2}.
pub fn block_g(b: &BlockStats, m: (f64, f64), beta: f64, theta: f64) -> Result<f64> {
    let comp = if b.lambda >= 0 { m.1 } else { m.0 };
    cumulant_g(b.lambda, b.d_size, b.half_size, comp, beta, theta)
}

/// Closest point of {-1, -1+2/n, ..., 1}; ties go toward 0.
pub fn lattice_point(m: f64, n: usize) -> f64 {
    let step = 2.0 / n as f64;
    let j = (m + 1.0) / step;
    let lo = j.floor();
    let (a, b) = (-1.0 + lo * step, -1.0 + (lo + 1.0) * step);
    let (da, db) = ((m - a).abs(), (b - m).abs());
    let pick = if (da - db).abs() < 1e-12 {
        if a.abs() < b.abs() {
            a
        } else {
            b
        }
    } else if da < db {
        a
    } else {
        b
    };
    pick.clamp(-1.0, 1.0)
}

/// X(λ, |D|) = β(𝒢(Tm^{δ*}_β) - 𝒢(m^{δ*}_β)); depends only on (λ, |D|).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XTable {
    pub half_size: usize,
    pub beta: f64,
    pub theta: f64,
    pub m_lattice: (f64, f64),
    /// Indexed by |D| for λ = +1; λ = -1 is the negative.
    pub plus: Vec<f64>,
}

impl XTable {
    pub fn new(half_size: usize, c: &PhaseConstants) -> Result<Self> {
        let m = (lattice_point(c.m_beta_1, half_size), lattice_point(c.m_beta_2, half_size));
        let tm = (-m.1, -m.0);
        let plus = (0..=half_size)
            .map(|d| {
                let g_t = cumulant_g(1, d, half_size, tm.1, c.beta, c.theta)?;
                let g_m = cumulant_g(1, d, half_size, m.1, c.beta, c.theta)?;
                Ok(c.beta * (g_t - g_m))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { half_size, beta: c.beta, theta: c.theta, m_lattice: m, plus })
    }

    pub fn x(&self, lambda: i8, d: usize) -> f64 {
        lambda as f64 * self.plus[d]
    }

    /// X computed directly from 𝒢 for either sign (used to check the table).
    pub fn x_direct(&self, lambda: i8, d: usize) -> Result<f64> {
        let m = self.m_lattice;
        let tm = (-m.1, -m.0);
        let comp = |p: (f64, f64)| if lambda >= 0 { p.1 } else { p.0 };
        let g_t = cumulant_g(lambda, d, self.half_size, comp(tm), self.beta, self.theta)?;
        let g_m = cumulant_g(lambda, d, self.half_size, comp(m), self.beta, self.theta)?;
        Ok(self.beta * (g_t - g_m))
    }

    /// V at the lattice phase.
    pub fn v_lattice(&self) -> f64 {
        let t = (2.0 * self.beta * self.theta).tanh();
        ((1.0 + self.m_lattice.1 * t) / (1.0 - self.m_lattice.0 * t)).ln()
    }

    pub fn p_threshold(&self) -> f64 {
        (self.half_size as f64).powf(-0.25)
    }
}

pub fn x_of_block(b: &BlockStats, table: &XTable) -> f64 {
    table.x(b.lambda, b.d_size)
}

/// c(βθ) of the Gaussian-regime variance estimate.
pub fn c_beta_theta(beta: f64, theta: f64) -> f64 {
    let t = (2.0 * beta * theta).tanh();
    t * t * (1.0 + t * t).powi(2) / ((1.0 - t * t).powi(2) * (1.0 - t).powi(6))
}

/// Bound on |Ξ₁|.
pub fn xi1_bound(half_size: usize, beta: f64, theta: f64, m_beta_1: f64) -> f64 {
    let t = (2.0 * beta * theta).tanh();
    64.0 * beta * theta * (1.0 + beta * theta) / ((1.0 - m_beta_1).powi(2) * (1.0 - t))
        * (half_size as f64).powf(-0.25)
}

/// Bound on |Ξ₂|.
pub fn xi2_bound(half_size: usize, beta: f64, theta: f64) -> f64 {
    (half_size as f64).powf(-0.25) * (36.0 + 2.0 * c_beta_theta(beta, theta))
}

/// Bound on |φ̂|.
pub fn hat_phi_bound(half_size: usize, m: f64, beta: f64, theta: f64) -> f64 {
    let t = (2.0 * beta * theta).tanh();
    (half_size as f64).powf(-0.25) * 32.0 * beta * theta * (1.0 + beta * theta)
        / ((1.0 - m.abs()).powi(2) * (1.0 - t))
}

/// Bound on |ν₂ - ν₁|.
pub fn nu_gap_bound(p: f64, m: f64, beta: f64, theta: f64) -> f64 {
    4.0 * p * beta * theta / (1.0 - m * m)
}

/// Admissibility of the constrained magnetization with g₀(n) = n^{1/4}.
pub fn pp_admissible(half_size: usize, p: f64, m: f64, beta: f64, theta: f64) -> bool {
    let n = half_size as f64;
    let t = (2.0 * beta * theta).tanh();
    let thr = (n.powf(0.25) / n).max(16.0 * p * beta * theta / (1.0 - t));
    m.abs() <= 1.0 - thr
}

/// Lower and upper ends of the bracket for E[X²·1{p small}]·γ/δ*.
pub fn second_moment_bracket(v: f64, sites_per_block: usize) -> (f64, f64) {
    let e = (1.0 / sites_per_block as f64).powf(0.2);
    (v * v * (1.0 - e).powi(2), v * v * (1.0 + e).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GDecomposition {
    pub nu1: f64,
    pub nu2: f64,
    pub psi_log_ratio: f64,
    pub phi: f64,
    pub hat_phi: f64,
    /// -(1/β)·psi_log_ratio - φ/β.
    pub g_from_decomposition: f64,
}

/// log P[#plus = k] for d spins at chemical potential a and n-d at b.
fn ln_two_binomial_point(d: usize, a: f64, n: usize, b: f64, k: usize) -> f64 {
    let lq = |nu: f64| (nu - ln_cosh(nu) - std::f64::consts::LN_2, -nu - ln_cosh(nu) - std::f64::consts::LN_2);
    let (pa, qa) = lq(a);
    let (pb, qb) = lq(b);
    let terms: Vec<f64> = (0..=d.min(k))
        .filter(|&j| k - j <= n - d)
        .map(|j| {
            ln_binomial(d as u64, j as i64)
                + j as f64 * pa
                + (d - j) as f64 * qa
                + ln_binomial((n - d) as u64, (k - j) as i64)
                + (k - j) as f64 * pb
                + ((n - d) - (k - j)) as f64 * qb
        })
        .collect();
    log_sum_exp(&terms)
}

/// Grand-canonical splitting of 𝒢 for a block of half size n, |D| = d and
/// constrained magnetization m (|m| < 1).
pub fn pp_decompose(lambda: i8, d: usize, n: usize, m: f64, beta: f64, theta: f64) -> Result<GDecomposition> {
    if m.abs() >= 1.0 {
        return Err(Error::Domain(format!("|m| = {} must be < 1", m.abs())));
    }
    if d > n {
        return Err(Error::Domain(format!("|D| = {d} exceeds {n}")));
    }
    let np = plus_count(n, m)?;
    let p = d as f64 / n as f64;
    let a = 2.0 * lambda as f64 * beta * theta;
    let nu1 = m.atanh();
    let nu2 = if d == 0 || a == 0.0 {
        nu1
    } else {
        let f = |nu: f64| p * (nu + a).tanh() + (1.0 - p) * nu.tanh() - m;
        let w = a.abs() + 1.0;
        let r = bisect(f, nu1 - w, nu1 + w, 1e-15)
            .ok_or_else(|| Error::Bracketing(format!("nu2 for m={m}, p={p}, a={a}")))?;
        if f(r).abs() > 1e-12 {
            return Err(Error::Bracketing(format!("nu2 residual {:e}", f(r))));
        }
        r
    };
    let nf = n as f64;
    let phi = nf
        * ((nu1 - nu2) * m
            + p * (ln_cosh(nu2 + a) - ln_cosh(nu1))
            + (1.0 - p) * (ln_cosh(nu2) - ln_cosh(nu1)));
    let ln_psi2 = ln_two_binomial_point(d, nu2 + a, n, nu2, np);
    let ln_psi0 = ln_two_binomial_point(0, 0.0, n, nu1, np);
    let psi_log_ratio = ln_psi2 - ln_psi0;
    let t = (2.0 * beta * theta).tanh();
    let hat_phi = if d == 0 {
        0.0
    } else {
        phi / d as f64 - ln_cosh(2.0 * beta * theta) - (1.0 + lambda as f64 * m * t).ln()
    };
    Ok(GDecomposition {
        nu1,
        nu2,
        psi_log_ratio,
        phi,
        hat_phi,
        g_from_decomposition: -psi_log_ratio / beta - phi / beta,
    })
}

/// χ(α) = γ Σ X(x)·1{p(x) ≤ n^{-1/4}} over the blocks x ∈ ((α-1)M, αM].
pub fn chi_alpha(h: &FieldRealization, alpha: i64, blocks_per_alpha: usize, sites_per_block: usize, gamma: f64, table: &XTable) -> Result<f64> {
    if blocks_per_alpha == 0 {
        return Err(Error::Divisibility("epsilon/(gamma delta*) must be a positive integer".into()));
    }
    if sites_per_block != 2 * table.half_size {
        return Err(Error::Domain("X table built for a different block size".into()));
    }
    let m = blocks_per_alpha as i64;
    let nb = sites_per_block as i64;
    let thr = table.p_threshold();
    let mut s = 0.0;
    for x in (alpha - 1) * m + 1..=alpha * m {
        let a = (x - 1) * nb;
        let (lam, d) = lambda_and_d(h.slice(a, a + nb)?);
        if d as f64 / table.half_size as f64 <= thr {
            s += table.x(lam, d);
        }
    }
    Ok(gamma * s)
}

/// ε/(γδ*) as a positive integer.
pub fn blocks_per_alpha(epsilon: f64, gamma: f64, delta_star: f64) -> Result<usize> {
    let r = epsilon / (gamma * delta_star);
    if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 * r {
        return Err(Error::Divisibility(format!("epsilon/(gamma delta*) = {r} is not a positive integer")));
    }
    Ok(r.round() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughEstimate {
    /// 2θγΣ|D(x)|, the sup over σ.
    pub lhs: f64,
    /// 2θ(|I|√(γ/δ*) + √(64(p+2))·√(|I|γ log(1/γ))).
    pub intermediate: f64,
    /// 4θ|I|√(γ/δ*).
    pub bound: f64,
    pub holds: bool,
}

/// Checks the rough estimate on I = (a, b] (macroscopic) for integer power p.
pub fn rough_estimate_check(h: &FieldRealization, interval: (f64, f64), gamma: f64, delta_star: f64, theta: f64, p: u32) -> Result<RoughEstimate> {
    if 64.0 * (2.0 + p as f64) * delta_star * (1.0 / gamma).ln() > 1.0 {
        return Err(Error::Hypothesis(format!(
            "64(2+p) delta* log(1/gamma) = {} > 1",
            64.0 * (2.0 + p as f64) * delta_star * (1.0 / gamma).ln()
        )));
    }
    let nb = sites_per_block(gamma, delta_star)?;
    let xa = interval.0 / delta_star;
    let xb = interval.1 / delta_star;
    if (xa - xa.round()).abs() > 1e-9 || (xb - xb.round()).abs() > 1e-9 || xb <= xa {
        return Err(Error::Divisibility("interval is not a union of delta* blocks".into()));
    }
    let mut sum_d = 0usize;
    for x in xa.round() as i64 + 1..=xb.round() as i64 {
        let a = (x - 1) * nb as i64;
        sum_d += lambda_and_d(h.slice(a, a + nb as i64)?).1;
    }
    let len = interval.1 - interval.0;
    let lhs = 2.0 * theta * gamma * sum_d as f64;
    let r = (gamma / delta_star).sqrt();
    let intermediate = 2.0 * theta * (len * r + (64.0 * (p as f64 + 2.0)).sqrt() * (len * gamma * (1.0 / gamma).ln()).sqrt());
    let bound = 4.0 * theta * len * r;
    Ok(RoughEstimate { lhs, intermediate, bound, holds: lhs <= bound })
}

/// Bound on P[sup over `n_blocks` blocks of p > n^{-1/4}], or None when
/// n^{-1/2} log(n_blocks) > 1/32.
pub fn p_tail_bound(n_blocks: usize, half_size: usize) -> Option<f64> {
    let n = half_size as f64;
    if n.powf(-0.5) * (n_blocks as f64).ln() > 1.0 / 32.0 {
        None
    } else {
        Some((-(n.sqrt()) / 32.0).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStatistics {
    pub sites_per_block: usize,
    pub blocks: usize,
    /// Moments of the summand X(x)·1{p(x) small} of χ.
    pub mean_x: f64,
    pub sd_x: f64,
    /// |mean| < 4 sd/√blocks
    pub mean_ok: bool,
    /// E[X²·1{p small}]·γ/δ* with a 99% interval.
    pub second_moment: f64,
    pub second_moment_ci: (f64, f64),
    pub bracket: (f64, f64),
    pub bracket_overlap: bool,
    pub lambda_zero_fraction: f64,
}

/// Statistics of X over `n_blocks` consecutive blocks x = 1, 2, ...
pub fn field_statistics(seed: u64, n_blocks: usize, sites_per_block: usize, v: f64, table: &XTable) -> Result<FieldStatistics> {
    const CHUNK: usize = 4096;
    if n_blocks < 2 {
        return Err(Error::Domain("need at least two blocks".into()));
    }
    if sites_per_block != 2 * table.half_size {
        return Err(Error::Domain("X table built for a different block size".into()));
    }
    let thr = table.p_threshold();
    let chunks = n_blocks.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let nb = CHUNK.min(n_blocks - c * CHUNK);
            let h = sample_field(seed, (c * CHUNK * sites_per_block) as i64 + 1, nb * sites_per_block)?;
            let mut acc = [0.0f64; 4];
            for block in h.values.chunks(sites_per_block) {
                let (lam, d) = lambda_and_d(block);
                let x = if d as f64 / table.half_size as f64 <= thr { table.x(lam, d) } else { 0.0 };
                acc[0] += x;
                acc[1] += x * x;
                acc[2] += x.powi(4);
                acc[3] += (lam == 0) as u8 as f64;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tot = [0.0f64; 4];
    for a in parts {
        for k in 0..4 {
            tot[k] += a[k];
        }
    }
    let n = n_blocks as f64;
    let nb = sites_per_block as f64;
    let mean_x = tot[0] / n;
    let sd_x = (tot[1] / n - mean_x * mean_x).max(0.0).sqrt();
    let m2 = tot[1] / n;
    let sd2 = (tot[2] / n - m2 * m2).max(0.0).sqrt();
    let z = 2.5758293035489;
    let ci = ((m2 - z * sd2 / n.sqrt()) / nb, (m2 + z * sd2 / n.sqrt()) / nb);
    let bracket = second_moment_bracket(v, sites_per_block);
    Ok(FieldStatistics {
        sites_per_block,
        blocks: n_blocks,
        mean_x,
        sd_x,
        mean_ok: mean_x.abs() < 4.0 * sd_x / n.sqrt(),
        second_moment: m2 / nb,
        second_moment_ci: ci,
        bracket,
        bracket_overlap: ci.1 >= bracket.0 && ci.0 <= bracket.1,
        lambda_zero_fraction: tot[3] / n,
    })
}

pub fn blocks_to_csv(blocks: &[BlockStats], table: &XTable) -> String {
    let mut s = String::from("x,lambda,d,p,X\n");
    for b in blocks {
        s.push_str(&format!("{},{},{},{},{}\n", b.x, b.lambda, b.d_size, b.p, x_of_block(b, table)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cw_phase::{phase_constants, PhasePoint};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn consts() -> PhaseConstants {
        phase_constants(&PhasePoint::new(2.0, 0.1).unwrap()).unwrap()
    }

    /// Exhaustive sum over σ ∈ {±1}^n with the first d sites tilted.
    fn g_brute(lambda: i8, d: usize, n: usize, m: f64, beta: f64, theta: f64) -> f64 {
        let target = (m * n as f64).round() as i64;
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0u32..(1 << n) {
            let sum: i64 = (0..n).map(|i| if s >> i & 1 == 1 { 1 } else { -1 }).sum();
            if sum != target {
                continue;
            }
            let sd: i64 = (0..d).map(|i| if s >> i & 1 == 1 { 1 } else { -1 }).sum();
            num += (2.0 * beta * theta * lambda as f64 * sd as f64).exp();
            den += 1.0;
        }
        -(num / den).ln() / beta
    }

    #[test]
    fn field_statistics_small() {
        let c = phase_constants(&PhasePoint::new(2.0, 0.1).unwrap()).unwrap();
        let t = XTable::new(8, &c).unwrap();
        let st = field_statistics(3, 20_000, 16, c.v_const, &t).unwrap();
        assert!(st.mean_ok);
        // P[λ = 0] = C(16, 8)/2^16
        assert!((st.lambda_zero_fraction - 12870.0 / 65536.0).abs() < 0.01);
        assert!(st.second_moment_ci.0 < st.second_moment && st.second_moment < st.second_moment_ci.1);
        let again = field_statistics(3, 20_000, 16, c.v_const, &t).unwrap();
        assert_eq!(st, again);
    }

    #[test]
    fn field_is_reproducible_and_range_consistent() {
        let a = sample_field(7, -100, 1000).unwrap();
        let b = sample_field(7, -100, 1000).unwrap();
        assert_eq!(a, b);
        let c = sample_field(7, 37, 200).unwrap();
        for i in 37..237 {
            assert_eq!(a.get(i), c.get(i));
        }
        assert_eq!(a.flipped().flipped(), a);
        assert_ne!(sample_field(8, -100, 1000).unwrap(), a);
    }

    #[test]
    fn field_mean() {
        let f = sample_field(11, 0, 1_000_000).unwrap();
        let mean = f.values.iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.005, "{mean}");
    }

    #[test]
    fn decompose_examples() {
        let h = FieldRealization { seed: 0, start: 1, values: vec![1, 1, 1, 1, 1, -1, 1, -1] };
        let b = decompose_block(&h, 1, 4).unwrap();
        assert_eq!((b.lambda, b.d_size, b.p), (1, 2, 1.0));
        assert_eq!(b.b_plus, vec![1, 2]);
        assert_eq!(b.d_set, vec![3, 4]);
        let b = decompose_block(&h, 2, 4).unwrap();
        assert_eq!((b.lambda, b.d_size, b.p), (0, 0, 0.0));
        assert_eq!(b.b_plus, vec![5, 7]);
        assert!(decompose_block(&h, 1, 3).is_err());
        assert!(sites_per_block(1.0 / 16.0, 0.25).is_ok());
        assert!(sites_per_block(1.0 / 3.0, 1.0).is_err());
    }

    #[test]
    fn balanced_fraction_block_of_four() {
        let f = sample_field(3, 0, 4_000_000).unwrap();
        let zeros = f.values.chunks(4).filter(|c| lambda_and_d(c).0 == 0).count();
        let frac = zeros as f64 / 1e6;
        let exact = ln_binomial(4, 2).exp() / 16.0;
        assert_abs_diff_eq!(exact, 0.375, epsilon = 1e-12);
        assert!((frac - exact).abs() < 0.002, "{frac}");
    }

    #[test]
    fn cumulant_examples() {
        assert_eq!(cumulant_g(1, 0, 8, 0.5, 2.0, 0.1).unwrap(), 0.0);
        assert_abs_diff_eq!(cumulant_g(1, 3, 8, 0.5, 2.0, 0.0).unwrap(), 0.0, epsilon = 1e-14);
        let g = cumulant_g(1, 2, 8, 0.5, 2.0, 0.1).unwrap();
        assert_abs_diff_eq!(g, g_brute(1, 2, 8, 0.5, 2.0, 0.1), epsilon = 1e-10);
        assert!(matches!(cumulant_g(1, 2, 8, 0.3, 2.0, 0.1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn lattice_rounding() {
        let c = consts();
        assert_eq!((lattice_point(c.m_beta_1, 2), lattice_point(c.m_beta_2, 2)), (1.0, 1.0));
        assert_eq!((lattice_point(c.m_beta_1, 8), lattice_point(c.m_beta_2, 8)), (1.0, 1.0));
        assert_eq!((lattice_point(c.m_beta_1, 32), lattice_point(c.m_beta_2, 32)), (1.0, 0.9375));
        assert_eq!(lattice_point(0.125, 8), 0.0);
        assert_eq!(lattice_point(-0.125, 8), 0.0);
    }

    #[test]
    fn x_table_examples() {
        let c = consts();
        let t = XTable::new(8, &c).unwrap();
        assert_eq!(t.x(0, 0), 0.0);
        for d in 0..=8 {
            assert_abs_diff_eq!(t.x_direct(-1, d).unwrap(), -t.x(1, d), epsilon = 1e-12);
            // lattice phase (1, 1): X = λ|D|·4βθ exactly
            assert_abs_diff_eq!(t.x(1, d), d as f64 * 4.0 * c.beta * c.theta, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.v_lattice(), 4.0 * c.beta * c.theta, epsilon = 1e-12);
        let h = sample_field(5, 1, 1600).unwrap();
        let hf = h.flipped();
        for x in 1..=100 {
            let b = decompose_block(&h, x, 16).unwrap();
            let bf = decompose_block(&hf, x, 16).unwrap();
            assert_eq!(x_of_block(&b, &t), -x_of_block(&bf, &t));
        }
    }

    #[test]
    fn x_residual_within_printed_bounds() {
        let c = consts();
        for &n in &[8usize, 32, 128] {
            let t = XTable::new(n, &c).unwrap();
            let xi1 = xi1_bound(n, c.beta, c.theta, c.m_beta_1);
            let xi2 = xi2_bound(n, c.beta, c.theta);
            for d in 0..=n {
                if d as f64 / n as f64 > t.p_threshold() {
                    continue;
                }
                let r = (t.x(1, d) - d as f64 * t.v_lattice()).abs();
                assert!(r <= d as f64 * xi1 + xi2, "n={n} d={d} r={r}");
            }
        }
    }

    #[test]
    fn pp_examples() {
        let d0 = pp_decompose(1, 0, 12, 0.5, 2.0, 0.1).unwrap();
        assert_eq!(d0.nu1, d0.nu2);
        assert_abs_diff_eq!(d0.phi, 0.0, epsilon = 1e-14);
        let g = cumulant_g(1, 2, 12, 0.5, 2.0, 0.1).unwrap();
        let dec = pp_decompose(1, 2, 12, 0.5, 2.0, 0.1).unwrap();
        assert_abs_diff_eq!(dec.g_from_decomposition, g, epsilon = 1e-8);
        let p = 2.0 / 12.0;
        let a = 0.4;
        let res = p * (dec.nu2 + a).tanh() + (1.0 - p) * dec.nu2.tanh() - 0.5;
        assert!(res.abs() < 1e-12);
        assert!(dec.hat_phi.abs() <= hat_phi_bound(12, 0.5, 2.0, 0.1));
        assert!((dec.nu2 - dec.nu1).abs() <= nu_gap_bound(p, 0.5, 2.0, 0.1));
        assert!(pp_decompose(1, 2, 12, 1.0, 2.0, 0.1).is_err());
    }

    #[test]
    fn chi_examples() {
        let c = consts();
        let t = XTable::new(8, &c).unwrap();
        let balanced = FieldRealization { seed: 0, start: 1, values: (0..64).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect() };
        assert_eq!(chi_alpha(&balanced, 1, 4, 16, 1.0 / 64.0, &t).unwrap(), 0.0);
        let h = sample_field(9, 1, 64 * 40).unwrap();
        for a in 1..=10 {
            let x = chi_alpha(&h, a, 4, 16, 1.0 / 64.0, &t).unwrap();
            let y = chi_alpha(&h.flipped(), a, 4, 16, 1.0 / 64.0, &t).unwrap();
            assert_eq!(x, -y);
        }
        assert!(blocks_per_alpha(0.3, 1.0 / 64.0, 0.25).is_err());
        assert_eq!(blocks_per_alpha(1.0 / 64.0, 1.0 / 64.0, 0.25).unwrap(), 4);
    }

    #[test]
    fn chi_second_moment_bracket() {
        // δ*/γ = 16, ε/(γδ*) = 4
        let c = consts();
        let t = XTable::new(8, &c).unwrap();
        let (gamma, m) = (1.0 / 256.0, 4usize);
        let eps = m as f64 * gamma * 16.0 * gamma;
        let trials = 100_000;
        let h = sample_field(21, 1, trials * m * 16).unwrap();
        let mut s2 = 0.0;
        for a in 1..=trials as i64 {
            let x = chi_alpha(&h, a, m, 16, gamma, &t).unwrap();
            s2 += x * x;
        }
        let e2 = s2 / trials as f64 / eps;
        let (lo, hi) = second_moment_bracket(c.v_const, 16);
        assert!(e2 >= lo && e2 <= hi, "{e2} not in [{lo}, {hi}]");
    }

    #[test]
    fn rough_estimate_examples() {
        let (gamma, ds) = (2f64.powi(-15), 2f64.powi(-11));
        let bal = FieldRealization { seed: 0, start: 1, values: (0..16 * 64).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect() };
        let r = rough_estimate_check(&bal, (0.0, 64.0 * ds), gamma, ds, 0.1, 1).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
        let n_sites = (64.0 / gamma) as usize;
        let mut viol = 0;
        for seed in 0..20 {
            let h = sample_field(seed, 1, n_sites).unwrap();
            let r = rough_estimate_check(&h, (0.0, 64.0), gamma, ds, 0.1, 1).unwrap();
            assert!(r.lhs <= r.intermediate || !r.holds);
            viol += (!r.holds) as usize;
        }
        assert_eq!(viol, 0);
        assert!(matches!(
            rough_estimate_check(&bal, (0.0, 0.25), 1.0 / 64.0, 0.25, 0.1, 1),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn p_tail_hypothesis() {
        assert!(p_tail_bound(1000, 8).is_none());
        let b = p_tail_bound(2, 512).unwrap();
        assert_abs_diff_eq!(b, (-(512f64.sqrt()) / 32.0).exp(), epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cumulant_matches_enumeration(n in 2usize..=12, dfrac in 0.0f64..=1.0, kfrac in 0.0f64..=1.0, lam in prop::sample::select(vec![-1i8, 1])) {
            let d = ((n as f64) * dfrac).round() as usize;
            let k = ((n as f64) * kfrac).round() as usize;
            let m = 2.0 * k as f64 / n as f64 - 1.0;
            let g = cumulant_g(lam, d, n, m, 2.0, 0.1).unwrap();
            prop_assert!((g - g_brute(lam, d, n, m, 2.0, 0.1)).abs() < 1e-10);
        }

        #[test]
        fn pp_identity(n in 4usize..=40, dfrac in 0.0f64..=0.5, kfrac in 0.1f64..=0.9, lam in prop::sample::select(vec![-1i8, 1])) {
            let d = ((n as f64) * dfrac).round() as usize;
            let k = ((n as f64) * kfrac).round().clamp(1.0, n as f64 - 1.0) as usize;
            let m = 2.0 * k as f64 / n as f64 - 1.0;
            let dec = pp_decompose(lam, d, n, m, 2.0, 0.1).unwrap();
            let g = cumulant_g(lam, d, n, m, 2.0, 0.1).unwrap();
            prop_assert!((dec.g_from_decomposition - g).abs() < 1e-8);
        }
    }
}
