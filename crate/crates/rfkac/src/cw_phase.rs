//! Random-field Curie-Weiss phase structure.
//!
//! Fixed points of the mean-field map, the two pure phases `m_beta` and
//! `T m_beta`, and the scalar constants (decay rate, walk variance scale,
//! quadratic growth constant) used by the other modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect;

const ROOT_GRID: usize = 10_000;
const ROOT_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub beta: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(beta: f64, theta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
        }
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::Domain(format!("theta must be >= 0, got {theta}")));
        }
        Ok(Self { beta, theta })
    }

    /// Three-root region: 1<β<3/2 with 0<θ<θ₁c, or β≥3/2 with 0<θ≤θ₁c.
    pub fn in_two_minima_region(&self) -> bool {
        if self.beta <= 1.0 || self.theta <= 0.0 {
            return false;
        }
        let tc = theta_1c(self.beta).expect("beta > 1");
        if self.beta < 1.5 {
            self.theta < tc
        } else {
            self.theta <= tc
        }
    }
}

/// ℐ(m) = (1+m)/2 log((1+m)/2) + (1-m)/2 log((1-m)/2), with 0 log 0 = 0.
pub fn entropy(m: f64) -> Result<f64> {
    if !(m.abs() <= 1.0) {
        return Err(Error::Domain(format!("|m| must be <= 1, got {m}")));
    }
    Ok(xlogx(0.5 * (1.0 + m)) + xlogx(0.5 * (1.0 - m)))
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn free_energy(m1: f64, m2: f64, pt: &PhasePoint) -> Result<f64> {
    let i1 = entropy(m1)?;
    let i2 = entropy(m2)?;
    Ok(-(m1 + m2).powi(2) / 8.0 - 0.5 * pt.theta * (m1 - m2) + (i1 + i2) / (2.0 * pt.beta))
}

pub fn g_beta(m_tilde: f64, pt: &PhasePoint) -> f64 {
    let b = pt.beta;
    0.5 * (b * (m_tilde + pt.theta)).tanh() + 0.5 * (b * (m_tilde - pt.theta)).tanh()
}

/// ∂g_β/∂m̃.
pub fn g_beta_prime(m_tilde: f64, pt: &PhasePoint) -> f64 {
    let b = pt.beta;
    let s1 = 1.0 / (b * (m_tilde + pt.theta)).cosh();
    let s2 = 1.0 / (b * (m_tilde - pt.theta)).cosh();
    0.5 * b * (s1 * s1 + s2 * s2)
}

pub fn theta_1c(beta: f64) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::Domain(format!(
            "theta_1c needs beta > 1 (no coexistence), got {beta}"
        )));
    }
    Ok((1.0 - 1.0 / beta).sqrt().atanh() / beta)
}

/// All roots of m̃ = g_β(m̃, θ) in [-1, 1], sorted.
///
/// g_β is odd, so the positive half is bracketed on a uniform grid and
/// mirrored; 0 is always a root.
pub fn solve_fixed_points(pt: &PhasePoint) -> Result<Vec<f64>> {
    let h = |m: f64| m - g_beta(m, pt);
    let n = ROOT_GRID / 2;
    let mut pos = Vec::new();
    let mut prev_x = 0.0;
    let mut prev_h = h(0.0);
    for i in 1..=n {
        let x = i as f64 / n as f64;
        let hx = h(x);
        if hx == 0.0 {
            pos.push(x);
        } else if prev_h != 0.0 && prev_h.signum() != hx.signum() {
            let r = bisect(h, prev_x, x, ROOT_TOL)
                .ok_or_else(|| Error::Bracketing(format!("lost sign change on [{prev_x}, {x}]")))?;
            pos.push(r);
        }
        prev_x = x;
        prev_h = hx;
    }
    let mut roots: Vec<f64> = pos.iter().rev().map(|r| -r).collect();
    roots.push(0.0);
    roots.extend(pos.iter().cloned());
    if roots.len() % 2 == 0 || roots.len() > 5 {
        return Err(Error::Bracketing(format!(
            "unexpected root count {} at grid resolution",
            roots.len()
        )));
    }
    for r in &roots {
        let res = h(*r).abs();
        if res >= 1e-12 {
            return Err(Error::Bracketing(format!("residual {res:e} at root {r}")));
        }
    }
    Ok(roots)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConstants {
    pub beta: f64,
    pub theta: f64,
    pub m_tilde: f64,
    pub m_beta_1: f64,
    pub m_beta_2: f64,
    pub theta_1c: f64,
    pub alpha: f64,
    pub v_const: f64,
    pub kappa_est: f64,
    /// Surface tension; set once the instanton has been computed.
    pub f_star: Option<f64>,
}

impl PhaseConstants {
    pub fn point(&self) -> PhasePoint {
        PhasePoint { beta: self.beta, theta: self.theta }
    }

    pub fn m_beta(&self) -> (f64, f64) {
        (self.m_beta_1, self.m_beta_2)
    }

    pub fn t_m_beta(&self) -> (f64, f64) {
        (-self.m_beta_2, -self.m_beta_1)
    }

    /// α(β,θ,ζ) = -log ∂g/∂m(m̃_β - ζ/2).
    pub fn alpha_zeta(&self, zeta: f64) -> f64 {
        -g_beta_prime(self.m_tilde - 0.5 * zeta, &self.point()).ln()
    }

    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }
}

/// V = log[(1 + m₂ tanh 2βθ) / (1 - m₁ tanh 2βθ)] at an arbitrary pair.
pub fn v_at(m1: f64, m2: f64, pt: &PhasePoint) -> f64 {
    let t = (2.0 * pt.beta * pt.theta).tanh();
    ((1.0 + m2 * t) / (1.0 - m1 * t)).ln()
}

pub fn phase_constants(pt: &PhasePoint) -> Result<PhaseConstants> {
    let degenerate = pt.theta == 0.0 && pt.beta > 1.0;
    if !pt.in_two_minima_region() && !degenerate {
        return Err(Error::Region(format!(
            "beta={}, theta={} fails the three-root condition",
            pt.beta, pt.theta
        )));
    }
    let roots = solve_fixed_points(pt)?;
    if roots.len() != 3 {
        return Err(Error::Region(format!("{} roots, expected 3", roots.len())));
    }
    let m_tilde = roots[2];
    let gp = g_beta_prime(m_tilde, pt);
    if !(gp < 1.0) {
        return Err(Error::Region(format!("unstable root: g' = {gp}")));
    }
    let b = pt.beta;
    let m1 = (b * (m_tilde + pt.theta)).tanh();
    let m2 = (b * (m_tilde - pt.theta)).tanh();
    let kappa_est = kappa_estimate(pt, (m1, m2));
    Ok(PhaseConstants {
        beta: pt.beta,
        theta: pt.theta,
        m_tilde,
        m_beta_1: m1,
        m_beta_2: m2,
        theta_1c: theta_1c(pt.beta)?,
        alpha: -gp.ln(),
        v_const: v_at(m1, m2, pt),
        kappa_est,
        f_star: None,
    })
}

const KAPPA_EXCLUSION: f64 = 1e-3;

/// [f(m) - f(m_β)] / min(‖m - m_β‖₁², ‖m - Tm_β‖₁²), or None inside the
/// exclusion radius.
pub fn kappa_ratio(m: (f64, f64), pt: &PhasePoint, m_beta: (f64, f64)) -> Option<f64> {
    let d1 = (m.0 - m_beta.0).abs() + (m.1 - m_beta.1).abs();
    let d2 = (m.0 + m_beta.1).abs() + (m.1 + m_beta.0).abs();
    let d = d1.min(d2);
    if d < KAPPA_EXCLUSION {
        return None;
    }
    let f0 = free_energy(m_beta.0, m_beta.1, pt).ok()?;
    let f = free_energy(m.0, m.1, pt).ok()?;
    Some((f - f0) / (d * d))
}

/// Grid infimum of the quadratic-growth ratio: step 0.01 over the square,
/// then step 2e-4 in a ±0.02 box around the coarse argmin.
pub fn kappa_estimate(pt: &PhasePoint, m_beta: (f64, f64)) -> f64 {
    let mut best = f64::INFINITY;
    let mut arg = (0.0, 0.0);
    let n = 200;
    for i in 0..=n {
        for j in 0..=n {
            let m = (-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64);
            if let Some(r) = kappa_ratio(m, pt, m_beta) {
                if r < best {
                    best = r;
                    arg = m;
                }
            }
        }
    }
    let fine = 2e-4;
    let k = 100;
    for i in -k..=k {
        for j in -k..=k {
            let m = (arg.0 + i as f64 * fine, arg.1 + j as f64 * fine);
            if m.0.abs() > 1.0 || m.1.abs() > 1.0 {
                continue;
            }
            if let Some(r) = kappa_ratio(m, pt, m_beta) {
                best = best.min(r);
            }
        }
    }
    best
}
