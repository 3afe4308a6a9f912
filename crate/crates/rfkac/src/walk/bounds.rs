//! Monte Carlo checks of the walk estimates: stopping-time tails and means,
//! sign-pair frequencies, two-sided exit probabilities, moment bounds on the
//! physical χ, interval-length tails of J and the argmax arcsine law.

use super::{construct_localization, ElongationParams, LocalizationMode, LocalizationOptions, WalkPath};
use crate::cw_phase::phase_constants;
use crate::field::XTable;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{LN_2, PI};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575829303549;

/// P[Y ≥ z] for a standard Gaussian Y.
pub fn gauss_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Largest ε for which the stopping-time estimates are stated.
pub fn eps0(v: f64, b: f64) -> f64 {
    gauss_tail(4.0 * b / v).powi(2) / 3f64.powi(8)
}

pub fn c1(v: f64, b: f64) -> f64 {
    2.0 / gauss_tail(4.0 * b / v)
}

/// 9V√(ε log(C₁/ε)), the overshoot correction in the Wald-type bounds.
pub fn wald_slack(v: f64, eps: f64, c1: f64) -> f64 {
    9.0 * v * (eps * (c1 / eps).ln()).sqrt()
}

/// Wilson score interval for k successes out of n.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let c = (p + z2 / (2.0 * n)) / den;
    let h = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((c - h).max(0.0), (c + h).min(1.0))
}

/// Sample mean with a normal-approximation interval.
pub fn mean_ci(xs: &[f64], z: f64) -> (f64, (f64, f64)) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = z * (var / n).sqrt();
    (m, (m - h, m + h))
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(trial);
    r
}

/// χ(α) drawn from the block decomposition of an i.i.d. symmetric field:
/// each block contributes X(λ, |D|) when |D|/n is small, times γ.
#[derive(Debug, Clone)]
pub struct PhysicalChi {
    pub gamma: f64,
    pub delta_star: f64,
    pub eps: f64,
    pub sites_per_block: usize,
    pub blocks_per_alpha: usize,
    /// V(β,θ) of the phase point.
    pub v: f64,
    /// contribution of a block indexed by its count of +1 sites
    by_plus: Vec<f64>,
    binom: Binomial,
}

impl PhysicalChi {
    pub fn new(beta: f64, theta: f64, gamma: f64, delta_star: f64, eps: f64) -> Result<Self> {
        let n = crate::field::sites_per_block(gamma, delta_star)?;
        let m = crate::field::blocks_per_alpha(eps, gamma, delta_star)?;
        let c = phase_constants(&crate::cw_phase::PhasePoint::new(beta, theta)?)?;
        let table = XTable::new(n / 2, &c)?;
        let thr = table.p_threshold();
        let by_plus = (0..=n)
            .map(|k| {
                let s = 2 * k as i64 - n as i64;
                let d = (s.unsigned_abs() / 2) as usize;
                if d as f64 / table.half_size as f64 <= thr {
                    table.x(s.signum() as i8, d)
                } else {
                    0.0
                }
            })
            .collect();
        let binom = Binomial::new(n as u64, 0.5).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self { gamma, delta_star, eps, sites_per_block: n, blocks_per_alpha: m, v: c.v_const, by_plus, binom })
    }

    /// V₊ = V(1 + (γ/δ*)^{1/5}).
    pub fn v_plus(&self) -> f64 {
        self.v * (1.0 + (self.gamma / self.delta_star).powf(0.2))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut s = 0.0;
        for _ in 0..self.blocks_per_alpha {
            s += self.by_plus[self.binom.sample(rng) as usize];
        }
        self.gamma * s
    }
}

/// Increment law of the walk.
#[derive(Debug, Clone)]
pub enum WalkModel {
    /// N(0, sd²)
    Gaussian { sd: f64 },
    /// ±step with probability ½
    Rademacher { step: f64 },
    Physical(Box<PhysicalChi>),
}

impl WalkModel {
    /// Variance εV², the Gaussian-limit variance of χ.
    pub fn gaussian(v: f64, eps: f64) -> Self {
        WalkModel::Gaussian { sd: v * eps.sqrt() }
    }

    pub fn rademacher(v: f64, eps: f64) -> Self {
        WalkModel::Rademacher { step: v * eps.sqrt() }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WalkModel::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            WalkModel::Rademacher { step } => {
                if rng.random::<bool>() {
                    *step
                } else {
                    -step
                }
            }
            WalkModel::Physical(p) => p.sample(rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WalkModel::Gaussian { .. } => "gaussian",
            WalkModel::Rademacher { .. } => "rademacher",
            WalkModel::Physical(_) => "physical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    /// empirical value must not exceed the bound
    Upper,
    /// empirical value must not fall below the bound
    Lower,
    /// the bound is the exact value
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub detail: String,
    pub model: String,
    pub kind: BoundKind,
    pub estimate: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    pub trials: usize,
    /// bound outside the range the estimate can take (≥ 1 for an upper
    /// probability bound)
    pub trivial: bool,
    pub pass: bool,
}

impl BoundCheck {
    fn new(name: &str, detail: String, model: &str, kind: BoundKind, estimate: f64, ci: (f64, f64), bound: f64, trials: usize, trivial: bool) -> Self {
        let pass = match kind {
            BoundKind::Upper => ci.0 <= bound,
            BoundKind::Lower => ci.1 >= bound,
            BoundKind::Exact => ci.0 <= bound && bound <= ci.1,
        };
        Self { name: name.into(), detail, model: model.into(), kind, estimate, ci, bound, trials, trivial, pass }
    }

    fn probability(name: &str, detail: String, model: &str, kind: BoundKind, hits: usize, n: usize, bound: f64) -> Self {
        let trivial = match kind {
            BoundKind::Upper => bound >= 1.0,
            BoundKind::Lower => bound <= 0.0,
            BoundKind::Exact => false,
        };
        Self::new(name, detail, model, kind, hits as f64 / n as f64, wilson(hits, n, Z99), bound, n, trivial)
    }

    pub fn line(&self) -> String {
        let rel = match self.kind {
            BoundKind::Upper => "<=",
            BoundKind::Lower => ">=",
            BoundKind::Exact => "==",
        };
        format!(
            "{} {:<24} {:<11} est {:.6} [{:.6}, {:.6}] {} {:.6}{}  ({}, n={})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.model,
            self.estimate,
            self.ci.0,
            self.ci.1,
            rel,
            self.bound,
            if self.trivial { " trivial" } else { "" },
            self.detail,
            self.trials
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub seconds: f64,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSuiteConfig {
    pub beta: f64,
    pub theta: f64,
    /// V(β,θ); filled from the phase point when None
    pub v: Option<f64>,
    pub f_star: f64,
    pub f: f64,
    pub seed: u64,
    pub toy: String,
    pub trials: usize,
    /// stopping-time checks at b = ℱ* + f/2
    pub eps_tau: f64,
    pub k_tau: Vec<usize>,
    /// sign-pair checks use b = 5V√ε at this ε
    pub eps_signs: f64,
    pub trials_signs: usize,
    pub k_signs: Vec<usize>,
    pub eps_exit: f64,
    pub exit_x: f64,
    pub exit_a: f64,
    pub interval_eps: f64,
    pub interval_q: f64,
    pub interval_trials: usize,
    pub gamma: f64,
    pub delta_star: f64,
    pub eps_physical: f64,
    pub physical_trials: usize,
    pub arcsine_steps: usize,
    pub arcsine_trials: usize,
}

impl Default for BoundSuiteConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            theta: 0.1,
            v: None,
            f_star: 0.14856,
            f: 0.03,
            seed: 1,
            toy: "gaussian".into(),
            trials: 10_000,
            eps_tau: 5e-6,
            k_tau: vec![1, 2, 4],
            eps_signs: 1e-5,
            trials_signs: 100_000,
            k_signs: vec![2, 3, 4, 5, 6],
            eps_exit: 1e-5,
            exit_x: 0.1,
            exit_a: 0.1,
            interval_eps: 1e-3,
            interval_q: 2.0,
            interval_trials: 10_000,
            gamma: 1.0 / 256.0,
            delta_star: 0.25,
            eps_physical: 1.0 / 16.0,
            physical_trials: 100_000,
            arcsine_steps: 10_000,
            arcsine_trials: 10_000,
        }
    }
}

impl BoundSuiteConfig {
    pub fn v(&self) -> Result<f64> {
        match self.v {
            Some(v) => Ok(v),
            None => Ok(phase_constants(&crate::cw_phase::PhasePoint::new(self.beta, self.theta)?)?.v_const),
        }
    }

    pub fn toy_model(&self, v: f64, eps: f64) -> Result<WalkModel> {
        match self.toy.as_str() {
            "gaussian" => Ok(WalkModel::gaussian(v, eps)),
            "rademacher" => Ok(WalkModel::rademacher(v, eps)),
            t => Err(Error::Config(format!("unknown toy model {t:?}"))),
        }
    }
}

fn require(ok: bool, what: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Hypothesis(what))
    }
}

fn require_eps(eps: f64, v: f64, b: f64) -> Result<()> {
    let e0 = eps0(v, b);
    require(eps > 0.0 && eps < e0, format!("eps = {eps:e} must lie in (0, eps0(b = {b})) = (0, {e0:e})"))
}

/// τ₁, …, τ_kmax of the two-sided crossings of level b, with the crossing
/// signs. Increments are generated on the fly.
pub fn sample_taus<R: Rng + ?Sized>(model: &WalkModel, b: f64, kmax: usize, rng: &mut R) -> (Vec<u64>, Vec<i8>) {
    let mut taus = Vec::with_capacity(kmax);
    let mut signs = Vec::with_capacity(kmax);
    let mut t = 0u64;
    for _ in 0..kmax {
        let mut s = 0.0;
        loop {
            s += model.sample(rng);
            t += 1;
            if s.abs() >= b {
                break;
            }
        }
        taus.push(t);
        signs.push(if s > 0.0 { 1 } else { -1 });
    }
    (taus, signs)
}

fn tau_runs(model: &WalkModel, b: f64, kmax: usize, trials: usize, seed: u64) -> Vec<(Vec<u64>, Vec<i8>)> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| sample_taus(model, b, kmax, &mut trial_rng(seed, t)))
        .collect()
}

/// Tail and mean of τ₁ and both tails of τ_k at b = ℱ* + f/2.
/// `r5` is (γ/δ*)^{1/5}, zero for the toy laws whose variance is exactly εV².
pub fn check_stopping_times(model: &WalkModel, v: f64, r5: f64, eps: f64, b: f64, ks: &[usize], trials: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    require_eps(eps, v, b)?;
    require(ks.iter().all(|&k| k >= 1), "k must be positive".into())?;
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let runs = tau_runs(model, b, kmax, trials, seed);
    let p = gauss_tail(4.0 * b / v);
    let c1 = c1(v, b);
    let name = model.name();
    let mut out = vec![];

    for vv in [1u64, 2, 3] {
        let thr = vv as f64 / eps;
        let hits = runs.iter().filter(|r| r.0[0] as f64 >= thr).count();
        out.push(BoundCheck::probability("tau1_tail", format!("v={vv}"), name, BoundKind::Upper, hits, trials, (-(vv as f64) * p).exp()));
    }

    let t1: Vec<f64> = runs.iter().map(|r| r.0[0] as f64).collect();
    let (m, ci) = mean_ci(&t1, Z99);
    let v_plus = v * (1.0 + r5);
    let scale = b * b / (eps * v * v);
    let lo = scale * (1.0 - r5).powi(2);
    let hi = scale * (1.0 + r5).powi(2) * (1.0 + wald_slack(v, eps, c1) / b).powi(2);
    out.push(BoundCheck::new("tau1_mean_lower", format!("b={b:.5}"), name, BoundKind::Lower, m, ci, lo, trials, false));
    out.push(BoundCheck::new("tau1_mean_upper", format!("b={b:.5}"), name, BoundKind::Upper, m, ci, hi, trials, false));

    let s_max = b * b / (4.0 * LN_2 * v_plus * v_plus);
    let s = 0.5 * s_max;
    for &k in ks {
        let thr = k as f64 * s / eps;
        let hits = runs.iter().filter(|r| (r.0[k - 1] as f64) <= thr).count();
        let bound = (-(k as f64) * b * b / (4.0 * s * v_plus * v_plus)).exp();
        out.push(BoundCheck::probability("tauk_short", format!("k={k} s={s:.5}"), name, BoundKind::Upper, hits, trials, bound));
    }
    for &k in ks {
        for s in [0.05, 0.5] {
            let thr = k as f64 / eps * (s + LN_2) * c1;
            let hits = runs.iter().filter(|r| r.0[k - 1] as f64 >= thr).count();
            out.push(BoundCheck::probability("tauk_long", format!("k={k} s={s}"), name, BoundKind::Upper, hits, trials, (-s * k as f64).exp()));
        }
    }
    Ok(out)
}

/// Frequency of two equal consecutive crossing signs among the first k,
/// jointly with τ_k not being too late, and the exact sign-pair law.
pub fn check_sign_pairs(model: &WalkModel, v: f64, eps: f64, b: f64, ks: &[usize], trials: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    require_eps(eps, v, b)?;
    require(ks.iter().all(|&k| k >= 2), "k must be at least 2".into())?;
    let kmax = ks.iter().copied().max().unwrap_or(2);
    let runs = tau_runs(model, b, kmax, trials, seed);
    let c1 = c1(v, b);
    let name = model.name();
    let mut out = vec![];
    for &k in ks {
        let pair = |r: &(Vec<u64>, Vec<i8>)| r.1[..k].windows(2).any(|w| w[0] == w[1]);
        let hits = runs.iter().filter(|r| pair(r)).count();
        let exact = 1.0 - 0.5f64.powi(k as i32 - 1);
        out.push(BoundCheck::probability("sign_pair_exact", format!("k={k}"), name, BoundKind::Exact, hits, trials, exact));
        let s = LN_2;
        let thr = k as f64 * (s + LN_2) * c1 / eps;
        let joint = runs.iter().filter(|r| pair(r) && r.0[k - 1] as f64 <= thr).count();
        let bound = (1.0 - (-s * k as f64).exp()) * exact;
        out.push(BoundCheck::probability("sign_pair_by_time", format!("k={k} s=log2"), name, BoundKind::Lower, joint, trials, bound));
    }
    Ok(out)
}

/// Exit of the walk through -a or +x, started at 0.
pub fn check_exit(model: &WalkModel, v: f64, eps: f64, x: f64, a: f64, trials: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    require(x > 0.0 && a > 0.0, "x and a must be positive".into())?;
    require_eps(eps, v, x.max(a))?;
    let c1 = c1(v, x.max(a));
    let slack = wald_slack(v, eps, c1);
    // d with 4xa/(V²d) = 1/4
    let d = 16.0 * x * a / (v * v);
    let cap = (d / eps).ceil() as u64;
    let res: Vec<(bool, u64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let mut y = 0.0;
            let mut n = 0u64;
            loop {
                y += model.sample(&mut rng);
                n += 1;
                if y <= -a {
                    return (true, n);
                }
                if y >= x {
                    return (false, n);
                }
            }
        })
        .collect();
    let name = model.name();
    let down = res.iter().filter(|r| r.0).count();
    let late = res.iter().filter(|r| r.1 >= cap).count();
    let se = slack / 9.0;
    let long_bound = 4.0 * x * a / (v * v * d) + 36.0 / (v * v * d) * se * (9.0 * (x + a) + v * se);
    Ok(vec![
        BoundCheck::probability("exit_down_first", format!("x={x} a={a}"), name, BoundKind::Upper, down, trials, (x + slack) / (x + a)),
        BoundCheck::probability("exit_up_first", format!("x={x} a={a}"), name, BoundKind::Upper, trials - down, trials, (a + slack) / (x + a)),
        BoundCheck::probability("exit_late", format!("d={d:.4}"), name, BoundKind::Upper, late, trials, long_bound),
    ])
}

/// Exponential moments and maximal moments of the physical χ.
pub fn check_chi_moments(chi: &PhysicalChi, trials: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    let r = chi.gamma / chi.delta_star;
    require(r <= 1.0 / 32.0, format!("gamma/delta* = {r} must be at most 2^-5"))?;
    let vp2 = chi.eps * chi.v_plus().powi(2);
    let xs: Vec<f64> = (0..trials as u64).into_par_iter().map(|t| chi.sample(&mut trial_rng(seed, t))).collect();
    let mut out = vec![];
    for c in [0.5, 1.0, 2.0] {
        let lam = c / vp2.sqrt();
        let e: Vec<f64> = xs.iter().map(|x| (lam * x).exp()).collect();
        let (m, ci) = mean_ci(&e, Z99);
        out.push(BoundCheck::new("chi_mgf", format!("lambda*sqrt(eps)V+={c}"), "physical", BoundKind::Upper, m, ci, (0.5 * lam * lam * vp2).exp(), trials, false));
    }
    for c in [0.25, 0.5, 0.75] {
        let lam = c / vp2;
        let e: Vec<f64> = xs.iter().map(|x| (0.5 * lam * x * x).exp()).collect();
        let (m, ci) = mean_ci(&e, Z99);
        out.push(BoundCheck::new("chi_square_mgf", format!("lambda*eps*V+^2={c}"), "physical", BoundKind::Upper, m, ci, 1.0 / (1.0 - c), trials, false));
    }
    let kmax = 100;
    let nmax = (trials / 10).max(100);
    let seqs: Vec<Vec<f64>> = (0..nmax as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed ^ 0x9e37_79b9, t);
            (0..kmax).map(|_| chi.sample(&mut rng).abs()).collect()
        })
        .collect();
    for k in [3usize, 10, 100] {
        for p in [1i32, 2, 4] {
            let m: Vec<f64> = seqs.iter().map(|s| s[..k].iter().cloned().fold(0.0, f64::max).powi(p)).collect();
            let (est, ci) = mean_ci(&m, Z99);
            let lk = (k as f64).ln();
            let pf = p as f64;
            let bound = (4.0 * vp2 * lk).powf(pf / 2.0) * (1.0 + pf / lk).powf((pf / 2.0).max(1.0));
            out.push(BoundCheck::new("chi_max_moment", format!("k={k} p={p}"), "physical", BoundKind::Upper, est, ci, bound, nmax, false));
        }
    }
    Ok(out)
}

/// Tails of γ|J| for the constructive localization on toy paths.
pub fn check_interval_tails(model: &WalkModel, v: f64, f_star: f64, f: f64, eps: f64, q: f64, trials: usize, seed: u64) -> Result<Vec<BoundCheck>> {
    let prm = ElongationParams::new(f_star, f, eps, 0.05, 1.0, q)?;
    let k = prm.half_range()?;
    let opts = LocalizationOptions { mode: LocalizationMode::Constructive, extra: 0, r1: 0.0 };
    let lens: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let chi: Vec<f64> = (0..2 * k).map(|_| model.sample(&mut rng)).collect();
            let path = WalkPath::symmetric(k, &chi)?;
            let out = construct_localization(&path, &prm, &opts)?;
            Ok(out.j_interval.filter(|_| out.exceptional.is_none()).map(|j| j.1 - j.0))
        })
        .collect::<Result<_>>()?;
    let ok: Vec<f64> = lens.into_iter().flatten().collect();
    let n = ok.len();
    require(n > 0, "no path produced an interval J".into())?;
    let name = model.name();
    let mut out = vec![];
    let x_max = f_star * f_star / (v * v * 18.0 * LN_2);
    for frac in [0.25, 0.5, 1.0] {
        let x = frac * x_max;
        let hits = ok.iter().filter(|&&l| l <= x).count();
        let bound = 2.0 * (-(f_star * f_star) / (18.0 * x * v * v)).exp();
        out.push(BoundCheck::probability("interval_short", format!("x={x:.5} kept={n}"), name, BoundKind::Upper, hits, n, bound));
    }
    let c1 = c1(v, f_star);
    for x in [0.25 * q, 0.5 * q, q] {
        let hits = ok.iter().filter(|&&l| l >= x).count();
        let bound = 4.0 * (-x / (8.0 * c1) * (1.0 - 3f64.ln() / 4f64.ln())).exp();
        out.push(BoundCheck::probability("interval_long", format!("x={x:.3} kept={n}"), name, BoundKind::Upper, hits, n, bound));
    }
    Ok(out)
}

/// First index of the maximum of a simple symmetric walk over 0..=n.
pub fn argmax_simple_walk<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    let (mut y, mut best, mut at) = (0i64, 0i64, 0usize);
    let mut i = 0;
    while i < n {
        let bits: u64 = rng.random();
        for j in 0..64.min(n - i) {
            y += if (bits >> j) & 1 == 1 { 1 } else { -1 };
            if y > best {
                best = y;
                at = i + j + 1;
            }
        }
        i += 64;
    }
    at
}

pub fn arcsine_cdf(x: f64) -> f64 {
    2.0 / PI * x.clamp(0.0, 1.0).sqrt().asin()
}

/// Kolmogorov distance between argmax locations and the arcsine law, with
/// the lattice point l mapped to (l+1)/(n+1).
pub fn check_arcsine(n: usize, trials: usize, seed: u64) -> Result<BoundCheck> {
    require(n >= 1 && trials >= 1, "need at least one step and one trial".into())?;
    let locs: Vec<usize> = (0..trials as u64).into_par_iter().map(|t| argmax_simple_walk(n, &mut trial_rng(seed, t))).collect();
    let mut counts = vec![0usize; n + 1];
    for l in locs {
        counts[l] += 1;
    }
    let mut cum = 0usize;
    let mut ks = 0.0f64;
    let denom = (n + 1) as f64;
    for (l, c) in counts.iter().enumerate() {
        let before = cum as f64 / trials as f64;
        cum += c;
        let after = cum as f64 / trials as f64;
        ks = ks.max((after - arcsine_cdf((l + 1) as f64 / denom)).abs());
        ks = ks.max((before - arcsine_cdf(l as f64 / denom)).abs());
    }
    Ok(BoundCheck::new("argmax_arcsine_ks", format!("steps={n}"), "rademacher", BoundKind::Upper, ks, (ks, ks), 0.02, trials, false))
}

/// Runs every check of the suite.
pub fn verify_bounds(cfg: &BoundSuiteConfig) -> Result<BoundReport> {
    let t0 = std::time::Instant::now();
    let v = cfg.v()?;
    require(cfg.f > 0.0 && cfg.f < cfg.f_star / 4.0, format!("f = {} must lie in (0, F*/4)", cfg.f))?;
    let b = cfg.f_star + cfg.f / 2.0;
    let mut checks = vec![];
    let m = cfg.toy_model(v, cfg.eps_tau)?;
    checks.extend(check_stopping_times(&m, v, 0.0, cfg.eps_tau, b, &cfg.k_tau, cfg.trials, cfg.seed)?);
    let m = cfg.toy_model(v, cfg.eps_signs)?;
    let b_signs = 5.0 * v * cfg.eps_signs.sqrt();
    checks.extend(check_sign_pairs(&m, v, cfg.eps_signs, b_signs, &cfg.k_signs, cfg.trials_signs, cfg.seed + 1)?);
    let m = cfg.toy_model(v, cfg.eps_exit)?;
    checks.extend(check_exit(&m, v, cfg.eps_exit, cfg.exit_x, cfg.exit_a, cfg.trials, cfg.seed + 2)?);
    let m = cfg.toy_model(v, cfg.interval_eps)?;
    checks.extend(check_interval_tails(&m, v, cfg.f_star, cfg.f, cfg.interval_eps, cfg.interval_q, cfg.interval_trials, cfg.seed + 3)?);
    let chi = PhysicalChi::new(cfg.beta, cfg.theta, cfg.gamma, cfg.delta_star, cfg.eps_physical)?;
    checks.extend(check_chi_moments(&chi, cfg.physical_trials, cfg.seed + 4)?);
    checks.push(check_arcsine(cfg.arcsine_steps, cfg.arcsine_trials, cfg.seed + 5)?);
    Ok(BoundReport { checks, seconds: t0.elapsed().as_secs_f64() })
}
