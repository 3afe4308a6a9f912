//! Microscopic spin system: Hamiltonian, exact enumeration of small
//! volumes, heat-bath dynamics with a sliding local field, δ*-block spins,
//! the η classifier and the end-to-end localization experiment.
//!
//! Every random draw is oriented by the local field sign h_i: a site takes
//! the value h_i when u < P(σ_i = h_i). Flipping h, the boundary and the
//! initial state together therefore flips the whole trajectory exactly.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::cw_phase::{phase_constants, PhasePoint};
use crate::error::{Error, Result};
use crate::field::{blocks_per_alpha, decompose_block, sample_field, sites_per_block, BlockStats, FieldRealization, XTable};
use crate::numeric::log_sum_exp;
use crate::walk::{construct_localization, walk_from_field, ElongationParams, LocalizationMode, LocalizationOptions};

pub const MAX_BRUTE_SITES: usize = 20;

/// ±1 spins on Λ, index k is site Λ.start + k.
pub type SpinConfig = Vec<i8>;

/// J_γ(r) ≠ 0 iff |r| ≤ range.
pub fn interaction_range(gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::Domain(format!("gamma must be in (0, 1/2], got {gamma}")));
    }
    Ok((0.5 / gamma + 1e-9).floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Free,
    /// σ̃ on the `range` sites left of Λ and the `range` sites right of it.
    Fixed { left: Vec<i8>, right: Vec<i8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSpec {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    /// h on Λ = field.start .. field.end().
    pub field: FieldRealization,
    pub boundary: Boundary,
}

impl GibbsSpec {
    pub fn new(beta: f64, theta: f64, gamma: f64, field: FieldRealization, boundary: Boundary) -> Result<Self> {
        let s = Self { beta, theta, gamma, field, boundary };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite() && self.theta.is_finite()) {
            return Err(Error::Domain(format!("bad (beta, theta) = ({}, {})", self.beta, self.theta)));
        }
        let r = interaction_range(self.gamma)?;
        if self.field.values.is_empty() {
            return Err(Error::Domain("empty volume".into()));
        }
        if let Boundary::Fixed { left, right } = &self.boundary {
            if left.len() != r || right.len() != r {
                return Err(Error::Domain(format!("boundary needs {r} sites per side, got {} and {}", left.len(), right.len())));
            }
            if left.iter().chain(right).any(|&s| s != 1 && s != -1) {
                return Err(Error::Domain("boundary spins must be ±1".into()));
            }
        }
        Ok(())
    }

    pub fn lo(&self) -> i64 {
        self.field.start
    }

    pub fn len(&self) -> usize {
        self.field.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.values.is_empty()
    }

    pub fn range(&self) -> usize {
        interaction_range(self.gamma).expect("validated")
    }

    /// h → -h and σ̃ → -σ̃.
    pub fn flipped(&self) -> Self {
        let boundary = match &self.boundary {
            Boundary::Free => Boundary::Free,
            Boundary::Fixed { left, right } => Boundary::Fixed { left: left.iter().map(|s| -s).collect(), right: right.iter().map(|s| -s).collect() },
        };
        Self { field: self.field.flipped(), boundary, ..self.clone() }
    }

    /// σ padded with the boundary (zeros for free bc).
    fn extended(&self, sigma: &[i8]) -> Vec<i8> {
        let r = self.range();
        let mut ext = Vec::with_capacity(sigma.len() + 2 * r);
        match &self.boundary {
            Boundary::Free => {
                ext.resize(r, 0);
                ext.extend_from_slice(sigma);
                ext.resize(sigma.len() + 2 * r, 0);
            }
            Boundary::Fixed { left, right } => {
                ext.extend_from_slice(left);
                ext.extend_from_slice(sigma);
                ext.extend_from_slice(right);
            }
        }
        ext
    }

    fn check_config(&self, sigma: &[i8]) -> Result<()> {
        if sigma.len() != self.len() {
            return Err(Error::Domain(format!("config has {} sites, volume has {}", sigma.len(), self.len())));
        }
        if sigma.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("spins must be ±1".into()));
        }
        Ok(())
    }
}

/// (Σ_{Λ×Λ} 1[|i-j| ≤ r] σσ, Σ hσ, Σ_{Λ×Λᶜ} 1[|i-j| ≤ r] σσ̃) on a padded config.
fn energy_terms(ext: &[i8], h: &[i8], r: usize) -> (i64, i64, i64) {
    let n = h.len();
    let (mut pair, mut fld, mut bnd) = (0i64, 0i64, 0i64);
    for i in 0..n {
        let idx = i + r;
        let s = ext[idx] as i64;
        fld += h[i] as i64 * s;
        for (j, &t) in ext.iter().enumerate().take(idx + r + 1).skip(idx - r) {
            if j >= r && j < r + n {
                pair += s * t as i64;
            } else {
                bnd += s * t as i64;
            }
        }
    }
    (pair, fld, bnd)
}

fn energy_from_terms(gamma: f64, theta: f64, (pair, fld, bnd): (i64, i64, i64)) -> f64 {
    -0.5 * gamma * pair as f64 - theta * fld as f64 - gamma * bnd as f64
}

/// H + W: -½ΣΣ J_γ σσ - θΣhσ - Σ_{i∈Λ, j∉Λ} J_γ σσ̃ (W = 0 for free bc).
pub fn hamiltonian(config: &[i8], spec: &GibbsSpec) -> Result<f64> {
    spec.validate()?;
    spec.check_config(config)?;
    let ext = spec.extended(config);
    Ok(energy_from_terms(spec.gamma, spec.theta, energy_terms(&ext, &spec.field.values, spec.range())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMeasure {
    pub n: usize,
    /// Bit k of the index set means σ_k = +1.
    pub probs: Vec<f64>,
    pub log_z: f64,
}

impl ExactMeasure {
    pub fn config(&self, idx: usize) -> SpinConfig {
        config_of(idx, self.n)
    }

    pub fn index(config: &[i8]) -> usize {
        config.iter().enumerate().fold(0, |acc, (k, &s)| if s > 0 { acc | (1 << k) } else { acc })
    }

    /// P(σ_k = +1).
    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for (idx, &p) in self.probs.iter().enumerate() {
            for (k, mk) in m.iter_mut().enumerate() {
                if idx >> k & 1 == 1 {
                    *mk += p;
                }
            }
        }
        m
    }

    pub fn tv(&self, other: &[f64]) -> f64 {
        0.5 * self.probs.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

fn config_of(idx: usize, n: usize) -> SpinConfig {
    (0..n).map(|k| if idx >> k & 1 == 1 { 1 } else { -1 }).collect()
}

/// μ(σ) ∝ exp(-β(H + W)) by full enumeration.
pub fn brute_force_measure(spec: &GibbsSpec) -> Result<ExactMeasure> {
    spec.validate()?;
    let n = spec.len();
    if n > MAX_BRUTE_SITES {
        return Err(Error::SizeLimit(format!("|Λ| = {n} > {MAX_BRUTE_SITES}")));
    }
    let r = spec.range();
    let logw: Vec<f64> = (0..1usize << n)
        .into_par_iter()
        .map(|idx| {
            let ext = spec.extended(&config_of(idx, n));
            -spec.beta * energy_from_terms(spec.gamma, spec.theta, energy_terms(&ext, &spec.field.values, r))
        })
        .collect();
    // sorted, so that measures with the same weight multiset share Z bit for bit
    let mut sorted = logw.clone();
    sorted.sort_by(f64::total_cmp);
    let log_z = log_sum_exp(&sorted);
    let probs = logw.iter().map(|w| (w - log_z).exp()).collect();
    Ok(ExactMeasure { n, probs, log_z })
}

/// Single-site heat bath on a padded configuration. The window sum over
/// |i-j| ≤ r slides along the sweep, so an update costs O(1).
#[derive(Debug, Clone)]
pub struct HeatBath {
    beta: f64,
    theta: f64,
    gamma: f64,
    r: usize,
    h: Vec<i8>,
    ext: Vec<i8>,
    energy: f64,
    rng: ChaCha8Rng,
    sweeps: u64,
}

impl HeatBath {
    pub fn new(spec: &GibbsSpec, init: &[i8], rng: ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        spec.check_config(init)?;
        let energy = hamiltonian(init, spec)?;
        Ok(Self {
            beta: spec.beta,
            theta: spec.theta,
            gamma: spec.gamma,
            r: spec.range(),
            h: spec.field.values.clone(),
            ext: spec.extended(init),
            energy,
            rng,
            sweeps: 0,
        })
    }

    pub fn config(&self) -> &[i8] {
        &self.ext[self.r..self.r + self.h.len()]
    }

    /// Incrementally maintained H + W.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn recomputed_energy(&self) -> f64 {
        energy_from_terms(self.gamma, self.theta, energy_terms(&self.ext, &self.h, self.r))
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Sum of σ over Λ.
    pub fn magnetization(&self) -> i64 {
        self.config().iter().map(|&s| s as i64).sum()
    }

    pub fn sweep(&mut self) {
        let (r, n) = (self.r, self.h.len());
        let mut w: i64 = self.ext[..=2 * r].iter().map(|&s| s as i64).sum();
        for i in 0..n {
            let idx = i + r;
            let old = self.ext[idx];
            let phi = self.gamma * (w - old as i64) as f64 + self.theta * self.h[i] as f64;
            let hi = self.h[i];
            let p = 0.5 * (1.0 + hi as f64 * (self.beta * phi).tanh());
            let new = if self.rng.random::<f64>() < p { hi } else { -hi };
            if new != old {
                let d = (new - old) as i64;
                self.energy -= d as f64 * phi;
                w += d;
                self.ext[idx] = new;
            }
            if i + 1 < n {
                w += self.ext[idx + r + 1] as i64 - self.ext[idx - r] as i64;
            }
        }
        self.sweeps += 1;
    }
}

impl Iterator for HeatBath {
    type Item = SpinConfig;

    fn next(&mut self) -> Option<SpinConfig> {
        self.sweep();
        Some(self.config().to_vec())
    }
}

/// Oriented fair draws: σ_i = ±h_i with probability ½ each.
fn fair_init(h: &[i8], rng: &mut ChaCha8Rng) -> SpinConfig {
    h.iter().map(|&hi| if rng.random::<f64>() < 0.5 { hi } else { -hi }).collect()
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Chain started from i.i.d. fair spins; iterate it for the config after
/// each sweep.
pub fn heat_bath_sample(spec: &GibbsSpec, seed: u64) -> Result<HeatBath> {
    let mut init_rng = sub_rng(seed, 0);
    let init = fair_init(&spec.field.values, &mut init_rng);
    HeatBath::new(spec, &init, sub_rng(seed, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerCheck {
    pub n: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    /// max_k |P_MC(σ_k = +1) - P(σ_k = +1)|
    pub marginal_tv: f64,
    /// TV of the empirical joint law (n ≤ 16 only).
    pub joint_tv: Option<f64>,
    /// Largest |incremental H - recomputed H| seen at the checkpoints.
    pub energy_drift: f64,
}

/// Heat bath against enumeration. Energy is re-checked every 10³ sweeps.
pub fn sampler_check(spec: &GibbsSpec, sweeps: usize, burn_in: usize, seed: u64) -> Result<SamplerCheck> {
    let exact = brute_force_measure(spec)?;
    let n = spec.len();
    let mut chain = heat_bath_sample(spec, seed)?;
    let mut drift: f64 = 0.0;
    for _ in 0..burn_in {
        chain.sweep();
    }
    let mut plus = vec![0u64; n];
    let mut joint = if n <= 16 { Some(vec![0u64; 1 << n]) } else { None };
    for t in 0..sweeps {
        chain.sweep();
        let c = chain.config();
        for (k, &s) in c.iter().enumerate() {
            plus[k] += (s > 0) as u64;
        }
        if let Some(j) = joint.as_mut() {
            j[ExactMeasure::index(c)] += 1;
        }
        if (t + 1) % 1000 == 0 {
            drift = drift.max((chain.energy() - chain.recomputed_energy()).abs());
        }
    }
    let marg = exact.marginals();
    let marginal_tv = plus.iter().zip(&marg).map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs()).fold(0.0, f64::max);
    let joint_tv = joint.map(|j| exact.tv(&j.iter().map(|&c| c as f64 / sweeps as f64).collect::<Vec<_>>()));
    Ok(SamplerCheck { n, sweeps, burn_in, marginal_tv, joint_tv, energy_drift: drift })
}

/// Largest |μ_h(σ) - μ_{-h}(-σ)| over all σ.
pub fn flip_covariance_defect(spec: &GibbsSpec) -> Result<f64> {
    let a = brute_force_measure(spec)?;
    let b = brute_force_measure(&spec.flipped())?;
    let full = (1usize << a.n) - 1;
    Ok(a.probs.iter().enumerate().map(|(idx, &p)| (p - b.probs[full ^ idx]).abs()).fold(0.0, f64::max))
}

/// Integer block sums; m^{δ*}(±, x) = s_± / half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpin {
    pub x: i64,
    pub lambda: i8,
    pub half: usize,
    pub s_plus: i64,
    pub s_minus: i64,
    pub s_d: i64,
    /// Σ_{A(x)} σ and Σ_{A(x)} hσ, summed directly.
    pub s_a: i64,
    pub s_ha: i64,
}

impl BlockSpin {
    pub fn m_plus(&self) -> f64 {
        self.s_plus as f64 / self.half as f64
    }

    pub fn m_minus(&self) -> f64 {
        self.s_minus as f64 / self.half as f64
    }

    pub fn m(&self) -> (f64, f64) {
        (self.m_plus(), self.m_minus())
    }

    /// (γ/δ*)Σ_A σ = ½(m⁺ + m⁻), scaled by δ*/γ.
    pub fn mean_identity(&self) -> bool {
        self.s_a == self.s_plus + self.s_minus
    }

    /// (γ/δ*)Σ_A hσ = ½(m⁺ - m⁻) + λ(2γ/δ*)Σ_D σ, scaled by δ*/γ.
    pub fn field_identity(&self) -> bool {
        self.s_ha == self.s_plus - self.s_minus + 2 * self.lambda as i64 * self.s_d
    }
}

/// δ*-blocks lying entirely inside Λ, decomposed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub sites_per_block: usize,
    pub lo: i64,
    pub blocks: Vec<BlockStats>,
}

impl BlockLayout {
    pub fn new(field: &FieldRealization, gamma: f64, delta_star: f64) -> Result<Self> {
        let nb = sites_per_block(gamma, delta_star)?;
        let nbi = nb as i64;
        let lo = field.start;
        let x_min = (lo - 1).div_euclid(nbi) + 1 + i64::from((lo - 1).rem_euclid(nbi) != 0);
        let x_max = (field.end() - 1).div_euclid(nbi);
        let blocks = (x_min..=x_max).map(|x| decompose_block(field, x, nb)).collect::<Result<Vec<_>>>()?;
        Ok(Self { sites_per_block: nb, lo, blocks })
    }

    pub fn observe(&self, field: &FieldRealization, config: &[i8]) -> Vec<BlockSpin> {
        let at = |i: i64| config[(i - self.lo) as usize] as i64;
        let nb = self.sites_per_block as i64;
        self.blocks
            .iter()
            .map(|b| {
                let a = (b.x - 1) * nb;
                let (mut s_a, mut s_ha) = (0, 0);
                for i in a + 1..=a + nb {
                    s_a += at(i);
                    s_ha += field.get(i).expect("block inside the field") as i64 * at(i);
                }
                BlockSpin {
                    x: b.x,
                    lambda: b.lambda,
                    half: b.half_size,
                    s_plus: b.b_plus.iter().map(|&i| at(i)).sum(),
                    s_minus: b.b_minus.iter().map(|&i| at(i)).sum(),
                    s_d: b.d_set.iter().map(|&i| at(i)).sum(),
                    s_a,
                    s_ha,
                }
            })
            .collect()
    }
}

/// Block spins of every δ*-block inside Λ.
pub fn block_observables(config: &[i8], spec: &GibbsSpec, delta_star: f64) -> Result<Vec<BlockSpin>> {
    spec.check_config(config)?;
    Ok(BlockLayout::new(&spec.field, spec.gamma, delta_star)?.observe(&spec.field, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaParams {
    pub delta_star: f64,
    pub delta: f64,
    pub zeta: f64,
    /// (m_{β,1}, m_{β,2}); m_{β,1} pairs with B⁺.
    pub m_beta: (f64, f64),
}

impl EtaParams {
    /// (blocks per unit, blocks per δ-block).
    pub fn counts(&self) -> Result<(usize, usize)> {
        let int = |v: f64, what: &str| -> Result<usize> {
            if !(v >= 1.0) || (v - v.round()).abs() > 1e-9 * v {
                return Err(Error::Divisibility(format!("{what} = {v} is not a positive integer")));
            }
            Ok(v.round() as usize)
        };
        let per_unit = int(1.0 / self.delta_star, "1/delta*")?;
        let k = int(self.delta / self.delta_star, "delta/delta*")?;
        if k < 2 || per_unit % k != 0 {
            return Err(Error::Divisibility(format!("need delta = k delta* with k >= 2 and 1/delta integer, got k = {k}")));
        }
        if !(self.zeta > 0.0 && self.zeta <= self.m_beta.1) {
            return Err(Error::Domain(format!("zeta must lie in (0, m_beta2 = {}], got {}", self.m_beta.1, self.zeta)));
        }
        Ok((per_unit, k))
    }
}

fn l1(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// η^{δ,ζ}(ℓ) for every unit block (ℓ-1, ℓ] fully covered by `spins`
/// (contiguous, increasing x).
pub fn eta(spins: &[BlockSpin], p: &EtaParams) -> Result<Vec<(i64, i8)>> {
    let (per_unit, k) = p.counts()?;
    let Some(first) = spins.first() else { return Ok(vec![]) };
    if spins.windows(2).any(|w| w[1].x != w[0].x + 1) {
        return Err(Error::Domain("block spins must be contiguous".into()));
    }
    let pu = per_unit as i64;
    let x0 = first.x;
    let x1 = x0 + spins.len() as i64 - 1;
    let l_min = (x0 - 1).div_euclid(pu) + 1 + i64::from((x0 - 1).rem_euclid(pu) != 0);
    let l_max = x1.div_euclid(pu);
    let tm = (-p.m_beta.1, -p.m_beta.0);
    let close = |blocks: &[BlockSpin], target: (f64, f64)| {
        blocks.chunks(k).all(|u| u.iter().map(|b| l1(b.m(), target)).sum::<f64>() / k as f64 <= p.zeta)
    };
    Ok((l_min..=l_max)
        .map(|l| {
            let s = ((l - 1) * pu + 1 - x0) as usize;
            let unit = &spins[s..s + per_unit];
            let v = if close(unit, p.m_beta) {
                1
            } else if close(unit, tm) {
                -1
            } else {
                0
            };
            (l, v)
        })
        .collect())
}

/// P[η(ℓ) = τ] under the uniform measure on the 1/γ sites of unit ℓ.
pub fn eta_probability_uniform(field: &FieldRealization, ell: i64, gamma: f64, p: &EtaParams, tau: i8) -> Result<f64> {
    let unit = (1.0 / gamma).round() as i64;
    if unit as usize > MAX_BRUTE_SITES {
        return Err(Error::SizeLimit(format!("1/gamma = {unit} sites > {MAX_BRUTE_SITES}")));
    }
    let a = (ell - 1) * unit;
    let sub = FieldRealization { seed: field.seed, start: a + 1, values: field.slice(a, a + unit)?.to_vec() };
    let layout = BlockLayout::new(&sub, gamma, p.delta_star)?;
    let n = unit as usize;
    let mut hits = 0u64;
    for idx in 0..1usize << n {
        let c = config_of(idx, n);
        let e = eta(&layout.observe(&sub, &c), p)?;
        if e.len() == 1 && e[0].1 == tau {
            hits += 1;
        }
    }
    Ok(hits as f64 / (1u64 << n) as f64)
}

/// Independent draws from the pure phase of sign `sign` on sites
/// [from, to): P(σ_i = +1) = (1 + m)/2 with m the phase magnetization of
/// the B^± set holding i. `h` must cover the blocks of those sites.
pub fn pure_phase_spins(h: &FieldRealization, from: i64, to: i64, sites_per_block: usize, m_beta: (f64, f64), sign: i8, rng: &mut ChaCha8Rng) -> Result<Vec<i8>> {
    let nb = sites_per_block as i64;
    let phase = if sign > 0 { m_beta } else { (-m_beta.1, -m_beta.0) };
    let mut cache: HashMap<i64, BlockStats> = HashMap::new();
    let mut out = Vec::with_capacity((to - from).max(0) as usize);
    for i in from..to {
        let x = (i - 1).div_euclid(nb) + 1;
        if !cache.contains_key(&x) {
            cache.insert(x, decompose_block(h, x, sites_per_block)?);
        }
        let b = &cache[&x];
        let m = if b.b_plus.binary_search(&i).is_ok() { phase.0 } else { phase.1 };
        let hi = h.get(i).ok_or_else(|| Error::OutOfRange(format!("site {i} not in the field")))?;
        let p = 0.5 * (1.0 + hi as f64 * m);
        out.push(if rng.random::<f64>() < p { hi } else { -hi });
    }
    Ok(out)
}

/// Integrated autocorrelation time with the usual self-consistent window.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for t in 1..n / 2 {
        let ct = series[..n - t].iter().zip(&series[t..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64;
        tau += 2.0 * ct / c0;
        if t as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta_star: f64,
    pub delta: f64,
    pub zeta: f64,
    pub f_star: f64,
    pub f: f64,
    pub eps: f64,
    pub rho: f64,
    pub a: f64,
    pub q: f64,
    /// Whole macroscopic units added on each side of I(ω).
    pub margin: i64,
    pub sweeps: usize,
    /// None: 10 × the integrated autocorrelation time of Σσ from a pilot run.
    pub burn_in: Option<usize>,
    pub pilot: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_seeds: usize,
    /// Also run the window with free bc.
    pub free_control: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            theta: 0.1,
            gamma: 1.0 / 16.0,
            delta_star: 0.25,
            delta: 0.5,
            zeta: 0.6,
            f_star: 0.14856,
            f: 0.03,
            eps: 1.0 / 16.0,
            rho: 0.5,
            a: 0.1,
            q: 16.0,
            margin: 1,
            sweeps: 2000,
            burn_in: None,
            pilot: 500,
            thin: 5,
            seed: 1,
            n_seeds: 80,
            free_control: true,
        }
    }
}

impl ExperimentConfig {
    pub fn eta_params(&self) -> Result<EtaParams> {
        let c = phase_constants(&PhasePoint::new(self.beta, self.theta)?)?;
        let p = EtaParams { delta_star: self.delta_star, delta: self.delta, zeta: self.zeta, m_beta: (c.m_beta_1, c.m_beta_2) };
        p.counts()?;
        Ok(p)
    }
}

/// A heat-bath window Λ = [lo, lo + n) and the units whose η is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    pub lo: i64,
    pub n: usize,
    pub units: Vec<i64>,
    pub tau: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAgreement {
    pub burn_in: usize,
    pub samples: usize,
    /// Fraction of (sample, unit) pairs with η = τ, boundary of sign τ.
    pub matched: f64,
    /// Same with boundary of sign -τ.
    pub mismatched: f64,
    /// Free bc: (fraction η = τ, fraction η = -τ).
    pub free: Option<(f64, f64)>,
}

/// Heat-bath runs on one window at inverse temperature `beta` under
/// matched, mismatched and (optionally) free boundaries. All three chains
/// share their random numbers. `h` must cover Λ, its boundary and the
/// blocks they touch.
pub fn window_agreement(cfg: &ExperimentConfig, beta: f64, h: &FieldRealization, run: &WindowRun, seed: u64) -> Result<WindowAgreement> {
    let eta_p = cfg.eta_params()?;
    let nb = sites_per_block(cfg.gamma, cfg.delta_star)?;
    let r = interaction_range(cfg.gamma)? as i64;
    let lam = FieldRealization { seed: h.seed, start: run.lo, values: h.slice(run.lo - 1, run.lo - 1 + run.n as i64)?.to_vec() };
    let layout = BlockLayout::new(&lam, cfg.gamma, cfg.delta_star)?;
    let hi = run.lo + run.n as i64;
    let bc = |sign: i8| -> Result<Boundary> {
        let mut rng = sub_rng(seed, 2);
        let left = pure_phase_spins(h, run.lo - r, run.lo, nb, eta_p.m_beta, sign, &mut rng)?;
        let right = pure_phase_spins(h, hi, hi + r, nb, eta_p.m_beta, sign, &mut rng)?;
        Ok(Boundary::Fixed { left, right })
    };
    let spec = |b: Boundary| GibbsSpec::new(beta, cfg.theta, cfg.gamma, lam.clone(), b);
    let matched = spec(bc(run.tau)?)?;
    let init = fair_init(&lam.values, &mut sub_rng(seed, 3));

    let burn_in = match cfg.burn_in {
        Some(b) => b,
        None => {
            let mut pilot = HeatBath::new(&matched, &init, sub_rng(seed, 4))?;
            let series: Vec<f64> = (0..cfg.pilot)
                .map(|_| {
                    pilot.sweep();
                    pilot.magnetization() as f64
                })
                .collect();
            (10.0 * integrated_autocorrelation(&series)).ceil() as usize
        }
    };

    let score = |s: &GibbsSpec| -> Result<(f64, f64, usize)> {
        let mut chain = HeatBath::new(s, &init, sub_rng(seed, 5))?;
        for _ in 0..burn_in {
            chain.sweep();
        }
        let (mut agree, mut against, mut samples) = (0u64, 0u64, 0usize);
        for t in 0..cfg.sweeps {
            chain.sweep();
            if (t + 1) % cfg.thin.max(1) != 0 {
                continue;
            }
            samples += 1;
            let e = eta(&layout.observe(&lam, chain.config()), &eta_p)?;
            for &(l, v) in &e {
                if run.units.contains(&l) {
                    agree += (v == run.tau) as u64;
                    against += (v == -run.tau) as u64;
                }
            }
        }
        let tot = (samples * run.units.len()).max(1) as f64;
        Ok((agree as f64 / tot, against as f64 / tot, samples))
    };
    let (m, _, samples) = score(&matched)?;
    let (mm, _, _) = score(&spec(bc(-run.tau)?)?)?;
    let free = if cfg.free_control {
        let (a, b, _) = score(&spec(Boundary::Free)?)?;
        Some((a, b))
    } else {
        None
    };
    Ok(WindowAgreement { burn_in, samples, matched: m, mismatched: mm, free })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Set when the localization is exceptional, τ = 0, or I(ω) holds no integer.
    pub excluded: Option<String>,
    pub tau: Option<i8>,
    pub i_interval: Option<(f64, f64)>,
    pub window: Option<WindowRun>,
    pub agreement: Option<WindowAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
    pub used: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign test, P[Bin(wins + losses, ½) ≥ wins].
    pub p_value: f64,
    pub mean_matched: f64,
    pub mean_mismatched: f64,
    /// Mean over seeds of P[η = τ] - P[η = -τ] with free bc.
    pub mean_free_margin: Option<f64>,
}

pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if wins == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Field realization, localization and window for one seed.
pub fn localize_seed(cfg: &ExperimentConfig, table: &XTable, seed: u64) -> Result<(FieldRealization, SeedOutcome)> {
    let nb = sites_per_block(cfg.gamma, cfg.delta_star)?;
    let m = blocks_per_alpha(cfg.eps, cfg.gamma, cfg.delta_star)?;
    let params = ElongationParams::new(cfg.f_star, cfg.f, cfg.eps, cfg.rho, cfg.a, cfg.q)?;
    let k = params.half_range()?;
    let span = k * (m * nb) as i64;
    let h = sample_field(seed, -span + 1, 2 * span as usize)?;
    let path = walk_from_field(&h, k, m, nb, cfg.gamma, table)?;
    let opts = LocalizationOptions { mode: LocalizationMode::Constructive, extra: 0, r1: 0.0 };
    let out = construct_localization(&path, &params, &opts)?;
    let mut o = SeedOutcome { seed, excluded: out.exceptional.clone(), tau: out.tau, i_interval: out.i_interval, window: None, agreement: None };
    if o.excluded.is_some() {
        return Ok((h, o));
    }
    let (Some(tau), Some((a, b))) = (out.tau, out.i_interval) else {
        o.excluded = Some("no interval".into());
        return Ok((h, o));
    };
    if tau == 0 {
        o.excluded = Some("τ = 0".into());
        return Ok((h, o));
    }
    let (l0, l1) = (a.ceil() as i64, b.floor() as i64);
    if l0 > l1 {
        o.excluded = Some("I(ω) contains no integer".into());
        return Ok((h, o));
    }
    let unit = (1.0 / cfg.gamma).round() as i64;
    let (w0, w1) = (a.floor() as i64 - cfg.margin, b.ceil() as i64 + cfg.margin);
    o.window = Some(WindowRun { lo: w0 * unit + 1, n: ((w1 - w0) * unit) as usize, units: (l0..=l1).collect(), tau });
    Ok((h, o))
}

/// Field covering a window, its boundary and the blocks they touch.
pub fn window_field(seed: u64, run: &WindowRun, gamma: f64, delta_star: f64) -> Result<FieldRealization> {
    let nb = sites_per_block(gamma, delta_star)? as i64;
    let r = interaction_range(gamma)? as i64;
    let pad = (r / nb + 1) * nb;
    sample_field(seed, run.lo - pad, run.n + 2 * pad as usize)
}

pub fn localization_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = phase_constants(&PhasePoint::new(cfg.beta, cfg.theta)?)?;
    let nb = sites_per_block(cfg.gamma, cfg.delta_star)?;
    let table = XTable::new(nb / 2, &c)?;
    cfg.eta_params()?;
    let outcomes = (0..cfg.n_seeds as u64)
        .into_par_iter()
        .map(|i| -> Result<SeedOutcome> {
            let seed = cfg.seed.wrapping_add(i);
            let (_, mut o) = localize_seed(cfg, &table, seed)?;
            if let Some(run) = &o.window {
                let h = window_field(seed, run, cfg.gamma, cfg.delta_star)?;
                o.agreement = Some(window_agreement(cfg, cfg.beta, &h, run, seed)?);
            }
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<&WindowAgreement> = outcomes.iter().filter_map(|o| o.agreement.as_ref()).collect();
    let wins = used.iter().filter(|a| a.matched > a.mismatched).count();
    let losses = used.iter().filter(|a| a.matched < a.mismatched).count();
    let n = used.len().max(1) as f64;
    let free: Vec<f64> = used.iter().filter_map(|a| a.free.map(|(p, q)| p - q)).collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        used: used.len(),
        wins,
        losses,
        ties: used.len() - wins - losses,
        p_value: sign_test_p(wins, losses),
        mean_matched: used.iter().map(|a| a.matched).sum::<f64>() / n,
        mean_mismatched: used.iter().map(|a| a.mismatched).sum::<f64>() / n,
        mean_free_margin: if free.is_empty() { None } else { Some(free.iter().sum::<f64>() / free.len() as f64) },
        outcomes,
    })
}

/// CSV rows (sweep, block, m⁺, m⁻, η of the block's unit) every `thin` sweeps.
/// Sites (0, units/γ] with fresh field and pure-phase boundary spins of
/// the given sign on both sides.
pub fn phase_window_spec(beta: f64, theta: f64, gamma: f64, delta_star: f64, units: usize, sign: i8, seed: u64) -> Result<GibbsSpec> {
    let nb = sites_per_block(gamma, delta_star)?;
    let r = interaction_range(gamma)? as i64;
    let n = (units as f64 / gamma).round() as usize;
    let run = WindowRun { lo: 1, n, units: vec![], tau: sign };
    let h = window_field(seed, &run, gamma, delta_star)?;
    let c = phase_constants(&PhasePoint::new(beta, theta)?)?;
    let mut rng = sub_rng(seed, 2);
    let m = (c.m_beta_1, c.m_beta_2);
    let left = pure_phase_spins(&h, 1 - r, 1, nb, m, sign, &mut rng)?;
    let right = pure_phase_spins(&h, n as i64 + 1, n as i64 + 1 + r, nb, m, sign, &mut rng)?;
    let lam = FieldRealization { seed, start: 1, values: h.slice(0, n as i64)?.to_vec() };
    GibbsSpec::new(beta, theta, gamma, lam, Boundary::Fixed { left, right })
}

pub fn trajectory_csv(spec: &GibbsSpec, eta_p: &EtaParams, sweeps: usize, thin: usize, seed: u64) -> Result<String> {
    let layout = BlockLayout::new(&spec.field, spec.gamma, eta_p.delta_star)?;
    let (per_unit, _) = eta_p.counts()?;
    let mut chain = heat_bath_sample(spec, seed)?;
    let mut out = String::from("sweep,block,m_plus,m_minus,eta\n");
    for t in 1..=sweeps {
        chain.sweep();
        if t % thin.max(1) != 0 {
            continue;
        }
        let spins = layout.observe(&spec.field, chain.config());
        let e: HashMap<i64, i8> = eta(&spins, eta_p)?.into_iter().collect();
        for b in &spins {
            let l = (b.x - 1).div_euclid(per_unit as i64) + 1;
            let v = e.get(&l).map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{t},{},{},{},{v}\n", b.x, b.m_plus(), b.m_minus()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    fn spec_for(n: usize, gamma: f64, beta: f64, theta: f64, seed: u64, fixed: bool) -> GibbsSpec {
        let h = sample_field(seed, 1, n).unwrap();
        let r = interaction_range(gamma).unwrap();
        let boundary = if fixed {
            let mut rng = sub_rng(seed, 9);
            Boundary::Fixed { left: (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(), right: vec![1; r] }
        } else {
            Boundary::Free
        };
        GibbsSpec::new(beta, theta, gamma, h, boundary).unwrap()
    }

    #[test]
    fn all_plus_energy_by_pair_count() {
        for n in 1..12usize {
            let h = FieldRealization { seed: 0, start: 1, values: vec![1; n] };
            let s = GibbsSpec::new(1.0, 0.3, 0.25, h, Boundary::Free).unwrap();
            // ordered pairs with |i - j| ≤ 2, diagonal included
            let count = n + 2 * n.saturating_sub(1) + 2 * n.saturating_sub(2);
            let want = -0.5 * 0.25 * count as f64 - 0.3 * n as f64;
            assert!((hamiltonian(&vec![1; n], &s).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_matches_naive_double_sum() {
        let s = spec_for(11, 0.25, 1.0, 0.4, 3, true);
        let Boundary::Fixed { left, right } = &s.boundary else { unreachable!() };
        let mut rng = sub_rng(5, 0);
        for _ in 0..20 {
            let c: Vec<i8> = (0..11).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let site = |i: i64| -> Option<i8> {
                match i {
                    i if (1..=11).contains(&i) => Some(c[(i - 1) as usize]),
                    i if (-1..=0).contains(&i) => Some(left[(i + 1) as usize]),
                    i if (12..=13).contains(&i) => Some(right[(i - 12) as usize]),
                    _ => None,
                }
            };
            let j = |d: i64| if 0.25 * d.abs() as f64 <= 0.5 { 0.25 } else { 0.0 };
            let mut e = 0.0;
            for i in 1..=11i64 {
                e -= 0.4 * s.field.get(i).unwrap() as f64 * c[(i - 1) as usize] as f64;
                for k in -1..=13i64 {
                    let Some(sk) = site(k) else { continue };
                    let w = j(i - k) * (c[(i - 1) as usize] * sk) as f64;
                    e -= if (1..=11).contains(&k) { 0.5 * w } else { w };
                }
            }
            assert!((hamiltonian(&c, &s).unwrap() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_zero_spin_flip_symmetry() {
        let s = spec_for(9, 0.25, 1.0, 0.0, 4, false);
        let c: Vec<i8> = vec![1, -1, -1, 1, 1, 1, -1, 1, -1];
        let neg: Vec<i8> = c.iter().map(|v| -v).collect();
        assert_eq!(hamiltonian(&c, &s).unwrap(), hamiltonian(&neg, &s).unwrap());
    }

    #[test]
    fn brute_force_normalized_and_uniform_at_beta_zero() {
        let m = brute_force_measure(&spec_for(10, 0.25, 0.0, 0.5, 1, true)).unwrap();
        assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.probs.iter().all(|p| (p - 1.0 / 1024.0).abs() < 1e-15));
        let m = brute_force_measure(&spec_for(12, 0.125, 2.0, 0.1, 2, true)).unwrap();
        assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(brute_force_measure(&spec_for(21, 0.25, 1.0, 0.1, 1, false)), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn single_site_marginal_is_tanh() {
        // free bc: only the constant diagonal term, so P(+) = (1 + tanh βθh)/2
        for &(beta, theta, hv) in &[(1.0, 0.3, 1i8), (2.0, 0.1, -1), (0.7, 1.5, 1)] {
            let h = FieldRealization { seed: 0, start: 1, values: vec![hv] };
            let s = GibbsSpec::new(beta, theta, 0.25, h.clone(), Boundary::Free).unwrap();
            let p = brute_force_measure(&s).unwrap().marginals()[0];
            assert!((p - 0.5 * (1.0 + (beta * theta * hv as f64).tanh())).abs() < 1e-14);
            // fixed bc adds the boundary field γ Σσ̃
            let s = GibbsSpec::new(beta, theta, 0.25, h, Boundary::Fixed { left: vec![1, 1], right: vec![1, -1] }).unwrap();
            let p = brute_force_measure(&s).unwrap().marginals()[0];
            assert!((p - 0.5 * (1.0 + (beta * (theta * hv as f64 + 0.25 * 2.0)).tanh())).abs() < 1e-14);
        }
    }

    #[test]
    fn brute_force_flip_covariance() {
        for seed in 0..4 {
            let s = spec_for(12, 0.125, 1.5, 0.3, seed, seed % 2 == 0);
            assert_eq!(flip_covariance_defect(&s).unwrap(), 0.0);
        }
    }

    #[test]
    fn incremental_energy_tracks_recomputation() {
        let s = spec_for(200, 1.0 / 16.0, 2.0, 0.1, 7, true);
        let mut c = heat_bath_sample(&s, 3).unwrap();
        for _ in 0..3000 {
            c.sweep();
            if c.sweeps() % 1000 == 0 {
                assert!((c.energy() - c.recomputed_energy()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heat_bath_seed_determinism_and_flip_equivariance() {
        let s = spec_for(40, 0.125, 2.0, 0.2, 11, true);
        let a: Vec<SpinConfig> = heat_bath_sample(&s, 5).unwrap().take(50).collect();
        let b: Vec<SpinConfig> = heat_bath_sample(&s, 5).unwrap().take(50).collect();
        assert_eq!(a, b);
        let f: Vec<SpinConfig> = heat_bath_sample(&s.flipped(), 5).unwrap().take(50).collect();
        for (x, y) in a.iter().zip(&f) {
            assert!(x.iter().zip(y).all(|(p, q)| *p == -*q));
        }
    }

    #[test]
    fn beta_zero_gives_fair_spins() {
        let s = spec_for(16, 0.125, 0.0, 0.5, 2, true);
        let sweeps = 20_000;
        let mut counts = [0u64; 16];
        let mut chain = heat_bath_sample(&s, 8).unwrap();
        for _ in 0..sweeps {
            chain.sweep();
            // 4-bit patterns of the first four sites
            let c = chain.config();
            let k = (0..4).fold(0, |acc, i| acc | (((c[i] > 0) as usize) << i));
            counts[k] += 1;
        }
        let e = sweeps as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 15 degrees of freedom, 99.9% quantile ≈ 37.7
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn sampler_matches_enumeration_small() {
        let s = spec_for(8, 0.25, 1.0, 0.3, 3, true);
        let r = sampler_check(&s, 100_000, 100, 1).unwrap();
        assert!(r.marginal_tv < 0.02 && r.joint_tv.unwrap() < 0.02, "{r:?}");
        assert!(r.energy_drift < 1e-9);
    }

    #[test]
    fn block_spins_and_identities() {
        let h = sample_field(4, 1, 64).unwrap();
        let s = GibbsSpec::new(1.0, 0.1, 1.0 / 16.0, h, Boundary::Free).unwrap();
        let b = block_observables(&vec![1; 64], &s, 0.25).unwrap();
        assert_eq!(b.len(), 16);
        assert!(b.iter().all(|x| x.m() == (1.0, 1.0)));
        let layout = BlockLayout::new(&s.field, s.gamma, 0.25).unwrap();
        let mut rng = sub_rng(1, 0);
        for _ in 0..1000 {
            let c: Vec<i8> = (0..64).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            for bs in layout.observe(&s.field, &c) {
                assert!(bs.mean_identity() && bs.field_identity(), "{bs:?}");
                // the same identities in floating form
                let g = 1.0 / 16.0 / 0.25;
                assert_eq!(g * bs.s_a as f64, 0.5 * (bs.m_plus() + bs.m_minus()));
                assert_eq!(g * bs.s_ha as f64, 0.5 * (bs.m_plus() - bs.m_minus()) + bs.lambda as f64 * 2.0 * g * bs.s_d as f64);
            }
        }
    }

    #[test]
    fn block_layout_needs_even_blocks() {
        let h = sample_field(4, 1, 60).unwrap();
        let s = GibbsSpec::new(1.0, 0.1, 1.0 / 6.0, h, Boundary::Free).unwrap();
        assert!(matches!(block_observables(&vec![1; 60], &s, 0.5), Err(Error::Parity(_))));
    }

    #[test]
    fn layout_skips_partial_blocks() {
        let h = sample_field(4, 3, 20).unwrap();
        let l = BlockLayout::new(&h, 0.125, 0.5).unwrap();
        let xs: Vec<i64> = l.blocks.iter().map(|b| b.x).collect();
        // sites 3..=22, blocks of 4: x = 2 (5..=8) .. 5 (17..=20)
        assert_eq!(xs, vec![2, 3, 4, 5]);
    }

    fn eta_p() -> EtaParams {
        let c = phase_constants(&PhasePoint::new(2.0, 0.1).unwrap()).unwrap();
        EtaParams { delta_star: 0.25, delta: 0.5, zeta: 0.6, m_beta: (c.m_beta_1, c.m_beta_2) }
    }

    #[test]
    fn eta_of_pure_configs() {
        let h = sample_field(9, 1, 48).unwrap();
        let s = GibbsSpec::new(2.0, 0.1, 1.0 / 16.0, h, Boundary::Free).unwrap();
        let p = eta_p();
        let e = eta(&block_observables(&vec![1; 48], &s, 0.25).unwrap(), &p).unwrap();
        assert_eq!(e, vec![(1, 1), (2, 1), (3, 1)]);
        let e = eta(&block_observables(&vec![-1; 48], &s, 0.25).unwrap(), &p).unwrap();
        assert_eq!(e, vec![(1, -1), (2, -1), (3, -1)]);
        let mut c = vec![1; 48];
        c[16..32].iter_mut().for_each(|v| *v = -1);
        c[40..44].iter_mut().for_each(|v| *v = -1);
        let e = eta(&block_observables(&c, &s, 0.25).unwrap(), &p).unwrap();
        assert_eq!(e, vec![(1, 1), (2, -1), (3, 0)]);
        let bad = EtaParams { zeta: 0.95, ..p };
        assert!(eta(&[], &bad).is_err());
    }

    #[test]
    fn uniform_eta_probability_against_binomial() {
        // at half = 2 each δ-block holds two blocks; η = τ iff each δ-block
        // has at most one spin against the phase, i.e. 1 + 8 of 256 patterns
        let h = sample_field(2, 1, 16).unwrap();
        let p = eta_p();
        let q = eta_probability_uniform(&h, 1, 1.0 / 16.0, &p, 1).unwrap();
        assert!((q - (9.0f64 / 256.0).powi(2)).abs() < 1e-15);
        assert_eq!(q, eta_probability_uniform(&h, 1, 1.0 / 16.0, &p, -1).unwrap());
    }

    #[test]
    fn pure_phase_draws_have_the_phase_magnetization() {
        let h = sample_field(3, 1, 4000).unwrap();
        let p = eta_p();
        let mut rng = sub_rng(1, 0);
        let s = pure_phase_spins(&h, 1, 4001, 4, p.m_beta, 1, &mut rng).unwrap();
        let fld = FieldRealization { seed: 3, start: 1, values: h.values.clone() };
        let spec = GibbsSpec::new(2.0, 0.1, 1.0 / 16.0, fld, Boundary::Free).unwrap();
        let b = block_observables(&s, &spec, 0.25).unwrap();
        let mp = b.iter().map(|x| x.m_plus()).sum::<f64>() / b.len() as f64;
        let mm = b.iter().map(|x| x.m_minus()).sum::<f64>() / b.len() as f64;
        assert!((mp - p.m_beta.0).abs() < 0.03 && (mm - p.m_beta.1).abs() < 0.03, "{mp} {mm}");
        let mut rng = sub_rng(1, 0);
        let f = pure_phase_spins(&h.flipped(), 1, 4001, 4, p.m_beta, -1, &mut rng).unwrap();
        assert!(s.iter().zip(&f).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn autocorrelation_of_white_noise_is_one() {
        let mut rng = sub_rng(2, 0);
        let w: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!((integrated_autocorrelation(&w) - 1.0).abs() < 0.2);
        // AR(1) with coefficient 0.9: τ = (1 + 0.9)/(1 - 0.9) = 19
        let mut x = 0.0;
        let ar: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let t = integrated_autocorrelation(&ar);
        assert!((t - 19.0).abs() < 3.0, "{t}");
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 5), 1.0);
        assert!((sign_test_p(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p(3, 1) - 5.0 / 16.0).abs() < 1e-12);
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig { sweeps: 200, burn_in: Some(50), thin: 2, ..Default::default() }
    }

    #[test]
    fn window_agreement_flip_symmetry() {
        let cfg = small_cfg();
        let run = WindowRun { lo: 1, n: 64, units: vec![2, 3], tau: 1 };
        let h = window_field(4, &run, cfg.gamma, cfg.delta_star).unwrap();
        let a = window_agreement(&cfg, 2.0, &h, &run, 4).unwrap();
        let b = window_agreement(&cfg, 2.0, &h.flipped(), &WindowRun { tau: -1, ..run.clone() }, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.matched > a.mismatched, "{a:?}");
    }

    #[test]
    fn beta_zero_control_matches_enumeration() {
        let cfg = ExperimentConfig { sweeps: 20_000, burn_in: Some(0), thin: 1, free_control: false, ..Default::default() };
        let run = WindowRun { lo: 1, n: 48, units: vec![2], tau: 1 };
        let h = window_field(6, &run, cfg.gamma, cfg.delta_star).unwrap();
        let a = window_agreement(&cfg, 0.0, &h, &run, 6).unwrap();
        let q = eta_probability_uniform(&h, 2, cfg.gamma, &cfg.eta_params().unwrap(), 1).unwrap();
        let se = (q * (1.0 - q) / 20_000.0).sqrt();
        assert!((a.matched - q).abs() < 5.0 * se && (a.mismatched - q).abs() < 5.0 * se, "{a:?} vs {q}");
    }

    #[test]
    fn localize_seed_windows_cover_interval() {
        let cfg = ExperimentConfig::default();
        let c = phase_constants(&PhasePoint::new(cfg.beta, cfg.theta).unwrap()).unwrap();
        let table = XTable::new(2, &c).unwrap();
        let mut found = 0;
        for seed in 0..10 {
            let (_, o) = localize_seed(&cfg, &table, seed).unwrap();
            if let (Some(w), Some((a, b))) = (&o.window, o.i_interval) {
                found += 1;
                let (lo, hi) = (w.lo as f64 * cfg.gamma, (w.lo + w.n as i64) as f64 * cfg.gamma);
                assert!(lo <= a - 1.0 && hi >= b + 1.0, "{w:?} vs ({a}, {b})");
                assert!(w.units.iter().all(|&l| l as f64 >= a && l as f64 <= b));
            }
        }
        assert!(found > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn joint_flip_preserves_energy(seed in 0u64..1000, n in 1usize..30, theta in -1.0f64..1.0) {
            let s = spec_for(n, 0.125, 1.0, theta, seed, seed % 2 == 0);
            let mut rng = sub_rng(seed, 3);
            let c: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let neg: Vec<i8> = c.iter().map(|v| -v).collect();
            prop_assert_eq!(hamiltonian(&c, &s).unwrap(), hamiltonian(&neg, &s.flipped()).unwrap());
        }
    }
}
