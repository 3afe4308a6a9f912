//! Two-component magnetization profiles on a δ* grid, the excess free
//! energy functional with J = 1[|r| ≤ 1/2], its Picard relaxation, finite
//! volume minimizers and the instanton.
//!
//! Cell `i` of a profile is the block `x = i - origin_offset`, covering
//! the macroscopic interval `((x-1)h, xh]` with `h = 1/cells_per_unit`.

use serde::{Deserialize, Serialize};

use crate::cw_phase::{free_energy, PhaseConstants};
use crate::error::{Error, Result};
use crate::numeric::ln_binomial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Cells per macroscopic unit, i.e. 1/δ*. Must be even.
    pub cells_per_unit: usize,
    pub cells: Vec<(f64, f64)>,
    /// Index of the cell containing macroscopic 0.
    pub origin_offset: isize,
}

impl Profile {
    pub fn new(cells_per_unit: usize, cells: Vec<(f64, f64)>, origin_offset: isize) -> Result<Self> {
        if cells_per_unit == 0 || cells_per_unit % 2 != 0 {
            return Err(Error::Parity(format!(
                "1/grid_step must be an even integer, got {cells_per_unit}"
            )));
        }
        if cells.iter().any(|&(a, b)| !(a.abs() <= 1.0 && b.abs() <= 1.0)) {
            return Err(Error::Domain("profile component outside [-1, 1]".into()));
        }
        Ok(Self { cells_per_unit, cells, origin_offset })
    }

    /// Constant profile on (a, b] in macroscopic units (a, b multiples of h).
    pub fn constant(cells_per_unit: usize, a: f64, b: f64, m: (f64, f64)) -> Result<Self> {
        let (x0, n) = cell_range(cells_per_unit, a, b)?;
        Self::new(cells_per_unit, vec![m; n], -x0)
    }

    pub fn grid_step(&self) -> f64 {
        1.0 / self.cells_per_unit as f64
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Block index x of cell i.
    pub fn block_of(&self, i: usize) -> isize {
        i as isize - self.origin_offset
    }

    /// Midpoint of cell i in macroscopic units.
    pub fn center(&self, i: usize) -> f64 {
        (self.block_of(i) as f64 - 0.5) * self.grid_step()
    }

    pub fn left_edge(&self) -> f64 {
        (self.block_of(0) - 1) as f64 * self.grid_step()
    }

    pub fn right_edge(&self) -> f64 {
        self.block_of(self.len() - 1) as f64 * self.grid_step()
    }

    pub fn m_tilde(&self) -> Vec<f64> {
        self.cells.iter().map(|&(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,m1,m2\n");
        for (i, &(a, b)) in self.cells.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.center(i), a, b));
        }
        s
    }
}

/// First block index and cell count for (a, b].
fn cell_range(cells_per_unit: usize, a: f64, b: f64) -> Result<(isize, usize)> {
    let c = cells_per_unit as f64;
    let xa = a * c;
    let xb = b * c;
    if (xa - xa.round()).abs() > 1e-9 || (xb - xb.round()).abs() > 1e-9 || xb <= xa {
        return Err(Error::Divisibility(format!(
            "interval ({a}, {b}] is not a union of grid cells"
        )));
    }
    Ok((xa.round() as isize + 1, (xb.round() - xa.round()) as usize))
}

pub fn t_transform(p: &Profile) -> Profile {
    Profile {
        cells_per_unit: p.cells_per_unit,
        cells: p.cells.iter().map(|&(a, b)| (-b, -a)).collect(),
        origin_offset: p.origin_offset,
    }
}

/// Reflection r -> -r; block x maps to 1 - x.
pub fn reflect(p: &Profile) -> Profile {
    let mut cells = p.cells.clone();
    cells.reverse();
    let last = p.block_of(p.len() - 1);
    // new cell 0 is old block `last`, which maps to 1 - last.
    Profile {
        cells_per_unit: p.cells_per_unit,
        cells,
        origin_offset: -(1 - last),
    }
}

/// Block averages over δ = k·δ*.
pub fn coarsen(p: &Profile, k: usize) -> Result<Profile> {
    if k == 0 || p.cells_per_unit % k != 0 {
        return Err(Error::Divisibility(format!(
            "delta/grid_step = {k} must divide 1/grid_step = {}",
            p.cells_per_unit
        )));
    }
    let x0 = p.block_of(0);
    if (x0 - 1).rem_euclid(k as isize) != 0 || p.len() % k != 0 {
        return Err(Error::Divisibility("profile not aligned to the coarse grid".into()));
    }
    let cells: Vec<(f64, f64)> = p
        .cells
        .chunks(k)
        .map(|ch| {
            let (a, b) = ch.iter().fold((0.0, 0.0), |s, &(a, b)| (s.0 + a, s.1 + b));
            (a / k as f64, b / k as f64)
        })
        .collect();
    let y0 = (x0 - 1).div_euclid(k as isize) + 1;
    Ok(Profile { cells_per_unit: p.cells_per_unit / k, cells, origin_offset: -y0 })
}

fn l1(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// η^{δ,ζ}(ℓ) for δ = k·δ*: +1 if on every δ-subblock of (ℓ-1, ℓ] the
/// average ℓ¹ distance of the δ*-cells to m_β is ≤ ζ, -1 likewise for
/// Tm_β, else 0.
pub fn eta_classify(p: &Profile, k: usize, zeta: f64, ell: i64, c: &PhaseConstants) -> Result<i8> {
    let cu = p.cells_per_unit;
    if k == 0 || cu % k != 0 {
        return Err(Error::Divisibility(format!("1/delta must be an integer (k={k})")));
    }
    let first = (ell - 1) * cu as i64 + 1;
    let i0 = first as isize + p.origin_offset;
    if i0 < 0 || i0 as usize + cu > p.len() {
        return Err(Error::OutOfRange(format!("unit block {ell} not covered by the profile")));
    }
    let i0 = i0 as usize;
    let mp = c.m_beta();
    let mm = c.t_m_beta();
    let mut plus = true;
    let mut minus = true;
    for sub in p.cells[i0..i0 + cu].chunks(k) {
        let dp: f64 = sub.iter().map(|&m| l1(m, mp)).sum::<f64>() / k as f64;
        let dm: f64 = sub.iter().map(|&m| l1(m, mm)).sum::<f64>() / k as f64;
        plus &= dp <= zeta;
        minus &= dm <= zeta;
    }
    Ok(if plus {
        1
    } else if minus {
        -1
    } else {
        0
    })
}

/// η̄: the same test on the distance of the δ-average (not the average
/// distance).
pub fn eta_bar_classify(p: &Profile, k: usize, zeta: f64, ell: i64, c: &PhaseConstants) -> Result<i8> {
    let q = coarsen_unit(p, k, ell)?;
    let plus = q.iter().all(|&m| l1(m, c.m_beta()) <= zeta);
    let minus = q.iter().all(|&m| l1(m, c.t_m_beta()) <= zeta);
    Ok(if plus {
        1
    } else if minus {
        -1
    } else {
        0
    })
}

fn coarsen_unit(p: &Profile, k: usize, ell: i64) -> Result<Vec<(f64, f64)>> {
    let cu = p.cells_per_unit;
    if k == 0 || cu % k != 0 {
        return Err(Error::Divisibility(format!("1/delta must be an integer (k={k})")));
    }
    let i0 = ((ell - 1) * cu as i64 + 1) as isize + p.origin_offset;
    if i0 < 0 || i0 as usize + cu > p.len() {
        return Err(Error::OutOfRange(format!("unit block {ell} not covered by the profile")));
    }
    let i0 = i0 as usize;
    Ok(p.cells[i0..i0 + cu]
        .chunks(k)
        .map(|ch| {
            let s = ch.iter().fold((0.0, 0.0), |s, &(a, b)| (s.0 + a, s.1 + b));
            (s.0 / k as f64, s.1 / k as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Side {
    Zero,
    MPlus,
    MMinus,
    /// One macroscopic unit of cells, ordered left to right.
    Explicit(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub left: Side,
    pub right: Side,
}

impl BoundaryCondition {
    pub fn new(left: Side, right: Side) -> Self {
        Self { left, right }
    }

    pub fn plus() -> Self {
        Self::new(Side::MPlus, Side::MPlus)
    }

    pub fn minus() -> Self {
        Self::new(Side::MMinus, Side::MMinus)
    }

    pub fn front() -> Self {
        Self::new(Side::MMinus, Side::MPlus)
    }

    /// T applied to both sides.
    pub fn flipped(&self) -> Self {
        let f = |s: &Side| match s {
            Side::Zero => Side::Zero,
            Side::MPlus => Side::MMinus,
            Side::MMinus => Side::MPlus,
            Side::Explicit(v) => Side::Explicit(v.iter().map(|&(a, b)| (-b, -a)).collect()),
        };
        Self::new(f(&self.left), f(&self.right))
    }

    /// Mirror image: sides swapped and explicit cells reversed.
    pub fn reflected(&self) -> Self {
        let f = |s: &Side| match s {
            Side::Explicit(v) => Side::Explicit(v.iter().rev().cloned().collect()),
            other => other.clone(),
        };
        Self::new(f(&self.right), f(&self.left))
    }

    fn side_cells(s: &Side, cu: usize, c: &PhaseConstants) -> Result<Vec<f64>> {
        Ok(match s {
            Side::Zero => vec![0.0; cu],
            Side::MPlus => vec![0.5 * (c.m_beta_1 + c.m_beta_2); cu],
            Side::MMinus => vec![-0.5 * (c.m_beta_1 + c.m_beta_2); cu],
            Side::Explicit(v) => {
                if v.len() != cu {
                    return Err(Error::Domain(format!(
                        "explicit boundary must span one unit ({cu} cells), got {}",
                        v.len()
                    )));
                }
                v.iter().map(|&(a, b)| 0.5 * (a + b)).collect()
            }
        })
    }
}

/// m̃ on [left bc | interval | right bc], each bc one unit wide.
fn extended_m_tilde(p: &Profile, bc: &BoundaryCondition, c: &PhaseConstants) -> Result<Vec<f64>> {
    let cu = p.cells_per_unit;
    let mut v = BoundaryCondition::side_cells(&bc.left, cu, c)?;
    v.extend(p.m_tilde());
    v.extend(BoundaryCondition::side_cells(&bc.right, cu, c)?);
    Ok(v)
}

/// (1/h)·∫∫ overlap weight between cells at offset d for J = 1[|r| ≤ 1/2].
fn kernel_weight(d: usize, half: usize, h: f64) -> f64 {
    if d < half {
        h
    } else if d == half {
        0.5 * h
    } else {
        0.0
    }
}

/// ℱ(m_I | m_∂I): pair term over I×I with weight 1/4, cross term with the
/// boundary with weight 1/2, plus ∫_I [f(m) - f(m_β)].
pub fn excess_free_energy(p: &Profile, bc: &BoundaryCondition, c: &PhaseConstants) -> Result<f64> {
    let cu = p.cells_per_unit;
    let half = cu / 2;
    let h = p.grid_step();
    let ext = extended_m_tilde(p, bc, c)?;
    let n = p.len();
    let pt = c.point();
    let f0 = free_energy(c.m_beta_1, c.m_beta_2, &pt)?;
    let mut pair = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        let gi = i + cu;
        for d in 1..=half {
            let w = h * kernel_weight(d, half, h);
            let dr = ext[gi] - ext[gi + d];
            if i + d < n {
                pair += w * dr * dr;
            } else {
                cross += w * dr * dr;
            }
            if i < d {
                let dl = ext[gi] - ext[gi - d];
                cross += w * dl * dl;
            }
        }
    }
    let mut bulk = 0.0;
    for &(a, b) in &p.cells {
        bulk += free_energy(a, b, &pt)? - f0;
    }
    // pair: each unordered pair once; 1/4 over ordered pairs = 1/2 here.
    Ok(0.5 * pair + 0.5 * cross + h * bulk)
}

/// J̄⋆m̃ on the interval cells, boundary included.
fn convolve(p: &Profile, bc: &BoundaryCondition, c: &PhaseConstants) -> Result<Vec<f64>> {
    let cu = p.cells_per_unit;
    let half = cu / 2;
    let h = p.grid_step();
    let ext = extended_m_tilde(p, bc, c)?;
    let mut prefix = vec![0.0; ext.len() + 1];
    for (i, v) in ext.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let n = p.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let g = i + cu;
        let inner = prefix[g + half] - prefix[g + 1 - half];
        out.push(h * inner + 0.5 * h * (ext[g - half] + ext[g + half]));
    }
    Ok(out)
}

/// One Picard step of the stationarity equations.
pub fn relax_step(p: &Profile, bc: &BoundaryCondition, c: &PhaseConstants) -> Result<Profile> {
    let conv = convolve(p, bc, c)?;
    let b = c.beta;
    let th = c.theta;
    let cells = conv
        .iter()
        .map(|&j| ((b * (j + th)).tanh(), (b * (j - th)).tanh()))
        .collect();
    Ok(Profile { cells_per_unit: p.cells_per_unit, cells, origin_offset: p.origin_offset })
}

fn sup_diff(a: &Profile, b: &Profile) -> f64 {
    a.cells
        .iter()
        .zip(&b.cells)
        .map(|(x, y)| (x.0 - y.0).abs().max((x.1 - y.1).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_energy: bool,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 100_000, record_energy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub profile: Profile,
    pub iterations: usize,
    pub residual: f64,
    /// ℱ at the start and after every step when requested.
    pub energies: Vec<f64>,
}

/// Iterates `relax_step` until the sup-norm change drops below `tol`.
pub fn relax(
    start: &Profile,
    bc: &BoundaryCondition,
    c: &PhaseConstants,
    opts: RelaxOptions,
) -> Result<Minimizer> {
    let mut cur = start.clone();
    let mut energies = Vec::new();
    if opts.record_energy {
        energies.push(excess_free_energy(&cur, bc, c)?);
    }
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = relax_step(&cur, bc, c)?;
        residual = sup_diff(&cur, &next);
        cur = next;
        if opts.record_energy {
            energies.push(excess_free_energy(&cur, bc, c)?);
        }
        if residual < opts.tol {
            return Ok(Minimizer { profile: cur, iterations: it, residual, energies });
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

/// Finite-volume minimizer on (a, b] with boundary `bc`, starting from the
/// pure phase selected by `eta` (or from `start`). The boundary must be
/// within ζ of that phase in the η̄ sense.
pub fn find_minimizer(
    bc: &BoundaryCondition,
    interval: (f64, f64),
    cells_per_unit: usize,
    eta: i8,
    zeta: f64,
    k: usize,
    c: &PhaseConstants,
    start: Option<&Profile>,
) -> Result<Minimizer> {
    for side in [&bc.left, &bc.right] {
        let ok = match side {
            Side::Zero => false,
            Side::MPlus => eta == 1,
            Side::MMinus => eta == -1,
            Side::Explicit(v) => {
                let bp = Profile::new(cells_per_unit, v.clone(), -1)?;
                eta_bar_classify(&bp, k, zeta, 1, c)? == eta
            }
        };
        if !ok {
            return Err(Error::Domain(format!(
                "boundary not within zeta={zeta} of phase {eta}"
            )));
        }
    }
    let m = if eta > 0 { c.m_beta() } else { c.t_m_beta() };
    let init = match start {
        Some(s) => s.clone(),
        None => Profile::constant(cells_per_unit, interval.0, interval.1, m)?,
    };
    relax(&init, bc, c, RelaxOptions::default())
}

/// Largest ℓ¹ deviation from the phase `eta` over cells at distance ≥ d
/// from the interval ends, for each integer-part class of distance.
pub fn decay_profile(p: &Profile, eta: i8, c: &PhaseConstants) -> Vec<(f64, f64)> {
    let m = if eta > 0 { c.m_beta() } else { c.t_m_beta() };
    let (a, b) = (p.left_edge(), p.right_edge());
    p.cells
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let r = p.center(i);
            ((r - a).min(b - r), l1(x, m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instanton {
    pub profile: Profile,
    pub f_star: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Largest increase of ℱ between consecutive iterates (≤ 0 means
    /// monotone).
    pub max_energy_increase: f64,
    pub energies_recorded: usize,
    pub alpha_fit: f64,
    pub tail_deviation: f64,
    pub short_domain_warning: bool,
}

/// Shift so that the sign change of m̃ sits at the edge r = 0; vacated
/// cells are filled with the boundary phases.
fn recenter(p: &mut Profile, c: &PhaseConstants) {
    let mt = p.m_tilde();
    let zero = p.origin_offset as usize;
    let Some(cross) = (0..mt.len().saturating_sub(1)).find(|&i| mt[i] <= 0.0 && mt[i + 1] > 0.0) else {
        return;
    };
    let shift = cross as isize - zero as isize;
    if shift == 0 {
        return;
    }
    let n = p.len() as isize;
    let old = p.cells.clone();
    for i in 0..n {
        let src = i + shift;
        p.cells[i as usize] = if src < 0 {
            c.t_m_beta()
        } else if src >= n {
            c.m_beta()
        } else {
            old[src as usize]
        };
    }
}

/// Front from Tm_β (left) to m_β (right) on (-L, L] with m̃(0) = 0.
pub fn instanton(c: &PhaseConstants, half_length: f64, cells_per_unit: usize) -> Result<Instanton> {
    instanton_with(c, half_length, cells_per_unit, RelaxOptions { record_energy: true, ..Default::default() })
}

pub fn instanton_with(
    c: &PhaseConstants,
    half_length: f64,
    cells_per_unit: usize,
    opts: RelaxOptions,
) -> Result<Instanton> {
    if half_length * c.alpha < 10.0 {
        return Err(Error::Domain(format!(
            "half length {half_length} below 10/alpha = {}",
            10.0 / c.alpha
        )));
    }
    let mut p = Profile::constant(cells_per_unit, -half_length, half_length, c.m_beta())?;
    for i in 0..p.len() {
        if p.block_of(i) <= 0 {
            p.cells[i] = c.t_m_beta();
        }
    }
    let bc = BoundaryCondition::front();
    let mut energies = Vec::new();
    if opts.record_energy {
        energies.push(excess_free_energy(&p, &bc, c)?);
    }
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        let mut next = relax_step(&p, &bc, c)?;
        recenter(&mut next, c);
        residual = sup_diff(&p, &next);
        p = next;
        iterations = it;
        if opts.record_energy {
            energies.push(excess_free_energy(&p, &bc, c)?);
        }
        if residual < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(Error::NoConvergence { iterations, residual });
    }
    let f_star = excess_free_energy(&p, &bc, c)?;
    let max_energy_increase = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let alpha_fit = fit_decay_rate(&p, c, half_length);
    let tail_deviation = l1(p.cells[0], c.t_m_beta()).max(l1(*p.cells.last().unwrap(), c.m_beta()));
    Ok(Instanton {
        profile: p,
        f_star,
        iterations,
        residual,
        max_energy_increase,
        energies_recorded: energies.len(),
        alpha_fit,
        tail_deviation,
        short_domain_warning: tail_deviation > 1e-6,
    })
}

/// Noise floor below which deviations are not used in the decay fit.
pub const DECAY_FIT_FLOOR: f64 = 1e-10;

/// Minus the least-squares slope of log ‖m̄(r) - m_β‖₁ on r ∈ [2, L-2],
/// using cells above the noise floor.
pub fn fit_decay_rate(p: &Profile, c: &PhaseConstants, half_length: f64) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..p.len() {
        let r = p.center(i);
        if r < 2.0 || r > half_length - 2.0 {
            continue;
        }
        let d = l1(p.cells[i], c.m_beta());
        if d > DECAY_FIT_FLOOR {
            xs.push(r);
            ys.push(d.ln());
        }
    }
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -sxy / sxx
}

/// Block-spin free energy F̂(m_I | m_∂I) at finite γ with N = δ*/γ sites per
/// cell, N/2 of each field sign. Cells must lie on the lattice with step 4/N.
/// Uses the sampled kernel J_δ*(x) = δ*·1[δ*|x| ≤ 1/2].
pub fn block_free_energy(p: &Profile, bc: &BoundaryCondition, sites_per_cell: u64, c: &PhaseConstants) -> Result<f64> {
    if sites_per_cell < 2 || sites_per_cell % 2 != 0 {
        return Err(Error::Parity(format!("delta*/gamma must be even, got {sites_per_cell}")));
    }
    let half_sites = sites_per_cell / 2;
    let cu = p.cells_per_unit;
    let k = (cu / 2) as isize;
    let h = p.grid_step();
    let ext = extended_m_tilde(p, bc, c)?;
    let n = p.len() as isize;
    let mut e_in = 0.0;
    let mut e_bd = 0.0;
    for x in 0..n {
        let gx = (x + cu as isize) as usize;
        for d in -k..=k {
            let y = x + d;
            let gy = (y + cu as isize) as usize;
            let prod = ext[gx] * ext[gy];
            if (0..n).contains(&y) {
                e_in -= 0.5 * h * h * prod;
            } else {
                e_bd -= h * h * prod;
            }
        }
    }
    let mut field = 0.0;
    let mut ent = 0.0;
    for &(a, b) in &p.cells {
        field += a - b;
        for m in [a, b] {
            let k = (1.0 + m) / 2.0 * half_sites as f64;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::Domain(format!("{m} is not on the block lattice")));
            }
            ent += ln_binomial(half_sites, k.round() as i64);
        }
    }
    let gamma = h / sites_per_cell as f64;
    Ok(e_in + e_bd - 0.5 * c.theta * h * field - gamma / c.beta * ent)
}

/// ℱ̃(m_I | m_∂I): the excess functional with f instead of f - f(m_β).
pub fn tilde_free_energy(p: &Profile, bc: &BoundaryCondition, c: &PhaseConstants) -> Result<f64> {
    let f0 = free_energy(c.m_beta_1, c.m_beta_2, &c.point())?;
    Ok(excess_free_energy(p, bc, c)? + p.grid_step() * p.len() as f64 * f0)
}

/// Returns (|F̂ - ℱ̃ + boundary quadratic term|, |I|·(γ/δ*)·log(δ*/γ)).
pub fn discretization_gap(p: &Profile, bc: &BoundaryCondition, sites_per_cell: u64, c: &PhaseConstants) -> Result<(f64, f64)> {
    let cu = p.cells_per_unit;
    let k = (cu / 2) as isize;
    let h = p.grid_step();
    let ext = extended_m_tilde(p, bc, c)?;
    let n = p.len() as isize;
    let mut bq = 0.0;
    for y in (-(cu as isize)..0).chain(n..n + cu as isize) {
        let cnt = (y - k..=y + k).filter(|x| (0..n).contains(x)).count() as f64;
        let v = ext[(y + cu as isize) as usize];
        bq += 0.5 * h * h * v * v * cnt;
    }
    let gap = (block_free_energy(p, bc, sites_per_cell, c)? - tilde_free_energy(p, bc, c)? + bq).abs();
    let len = h * p.len() as f64;
    let r = sites_per_cell as f64;
    Ok((gap, len / r * r.ln()))
}
