//! Model parameters with their constraint report, the TOML run
//! configuration, the stage runner and the run manifest.

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cluster::{lipschitz_check, oracle_system, s_estimate, v_direct, v_series, BlockSystem};
use crate::cw_phase::{phase_constants, PhaseConstants, PhasePoint};
use crate::error::{Error, Result};
use crate::field::{blocks_per_alpha, blocks_to_csv, c_beta_theta, decompose_block, field_statistics, sample_field, sites_per_block, XTable};
use crate::gibbs::{localization_experiment, phase_window_spec, trajectory_csv, ExperimentConfig};
use crate::profile::instanton;
use crate::walk::bounds::{c1, eps0, verify_bounds, BoundSuiteConfig};
use crate::walk::{construct_localization, walk_from_field, ElongationParams, LocalizationMode, LocalizationOptions};

/// The scale function g of the parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GChoice {
    /// g(x) = 1 ∨ log x
    Log,
    /// g(x) = 1 ∨ x^exponent
    Power { exponent: f64 },
}

impl GChoice {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GChoice::Log => x.ln().max(1.0),
            GChoice::Power { exponent } => x.powf(exponent).max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta_star: f64,
    pub delta: f64,
    pub zeta0: f64,
    pub zeta1: f64,
    pub zeta4: f64,
    pub zeta5: f64,
    pub eps: f64,
    pub rho: f64,
    pub f: f64,
    pub a: f64,
    pub q: f64,
    pub g: GChoice,
    /// Surface tension used when the instanton stage does not run.
    pub f_star: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            beta: 2.0,
            theta: 0.1,
            gamma: 1.0 / 16.0,
            delta_star: 0.25,
            delta: 0.5,
            zeta0: 0.9,
            zeta1: 0.4,
            zeta4: 0.6,
            zeta5: 0.3,
            eps: 1.0 / 16.0,
            rho: 0.5,
            f: 0.03,
            a: 0.1,
            q: 16.0,
            g: GChoice::Log,
            f_star: 0.14856,
        }
    }
}

/// ln c(β,θ) for the large constant c(β,θ) = 257A + B e^{257A}, which
/// overflows f64 for ordinary (β, θ).
pub fn ln_c_large(beta: f64, theta: f64, m_beta_1: f64) -> f64 {
    let t = (2.0 * beta * theta).tanh();
    let a = 257.0 * (1.0 / (1.0 - t).powi(2) + 1.0 / (1.0 - m_beta_1));
    let b = (4.0 * beta * theta).exp() * (1.0 + t) / (1.0 - t);
    a + b.ln() + (a * (-a).exp() / b).ln_1p()
}

impl ModelParams {
    /// ε, Q, ζ₅, ζ₁, δ from g(δ*/γ):
    /// ε^{1/4} = 5/g, Q = exp(log g / log log g), ζ₅ = 1/(2¹⁸c⁶g³),
    /// ζ₁ = 1/(160g), δ = 1/(5√g).
    pub fn asymptotic_schedule(&self, c: &PhaseConstants) -> Self {
        let g = self.g.eval(self.delta_star / self.gamma);
        let ln_c = ln_c_large(self.beta, self.theta, c.m_beta_1);
        Self {
            eps: (5.0 / g).powi(4),
            q: (g.ln() / g.ln().ln()).exp(),
            zeta5: (-(18.0 * 2f64.ln()) - 6.0 * ln_c - 3.0 * g.ln()).exp(),
            zeta1: 1.0 / (160.0 * g),
            delta: 1.0 / (5.0 * g.sqrt()),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub g: f64,
    pub kappa: f64,
    pub f_star: f64,
    pub v: f64,
    pub alpha_zeta0: f64,
    /// c(βθ), the Gaussian-regime constant
    pub c_small: f64,
    /// ln c(β,θ), the large constant
    pub ln_c_large: f64,
    pub r1: f64,
    pub r2: f64,
    pub l0: f64,
    pub l2: f64,
    /// C₁ and ε₀ at b = 2ℱ*
    pub c1: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub statement: String,
    pub lhs: f64,
    pub rhs: f64,
    pub strict: bool,
    pub satisfied: bool,
    /// rhs - lhs
    pub margin: f64,
    /// ln(rhs/lhs) when both sides are positive
    pub log_margin: Option<f64>,
}

fn cmp(id: &str, statement: &str, lhs: f64, rhs: f64, strict: bool) -> Constraint {
    let satisfied = if strict { lhs < rhs } else { lhs <= rhs };
    let log_margin = (lhs > 0.0 && rhs > 0.0).then(|| rhs.ln() - lhs.ln());
    Constraint { id: id.into(), statement: statement.into(), lhs, rhs, strict, satisfied, margin: rhs - lhs, log_margin }
}

fn integral(v: f64) -> bool {
    v >= 1.0 && (v - v.round()).abs() <= 1e-9 * v
}

fn flag(id: &str, statement: &str, ok: bool, value: f64) -> Constraint {
    Constraint { id: id.into(), statement: statement.into(), lhs: value, rhs: value, strict: false, satisfied: ok, margin: if ok { 0.0 } else { f64::NAN }, log_margin: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub params: ModelParams,
    pub derived: Derived,
    pub constraints: Vec<Constraint>,
    pub satisfied: usize,
    pub total: usize,
    pub localization_enabled: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn get(&self, id: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,satisfied,lhs,rhs,margin,log_margin\n");
        for c in &self.constraints {
            let lm = c.log_margin.map_or(String::new(), |v| v.to_string());
            s.push_str(&format!("{},{},{},{},{},{lm}\n", c.id, c.satisfied, c.lhs, c.rhs, c.margin));
        }
        s
    }
}

/// Evaluates every parameter constraint with the computed κ, ℱ*, V, α.
/// Nothing is rejected; each inequality is reported with its margin.
pub fn validate_params(p: &ModelParams, c: &PhaseConstants) -> ValidationReport {
    let f_star = c.f_star.unwrap_or(p.f_star);
    let kappa = c.kappa_est;
    let v = c.v_const;
    let ratio = p.delta_star / p.gamma;
    let sq = (p.gamma / p.delta_star).sqrt();
    let g = p.g.eval(ratio);
    let alpha0 = c.alpha_zeta(p.zeta0);
    let c_small = c_beta_theta(p.beta, p.theta);
    let ln_cl = ln_c_large(p.beta, p.theta, c.m_beta_1);
    let c_large = ln_cl.exp();
    let r1 = 4.0 * (5.0 + f_star) / (kappa * p.delta * p.zeta1.powi(3));
    let derived = Derived {
        g,
        kappa,
        f_star,
        v,
        alpha_zeta0: alpha0,
        c_small,
        ln_c_large: ln_cl,
        r1,
        r2: 20.0 * (5.0 + f_star) * 160f64.powi(3) / kappa * g.powf(3.5),
        l0: ratio.ln() / alpha0,
        l2: f_star / (32.0 * (1.0 + p.theta)) * ratio.sqrt(),
        c1: c1(v, 2.0 * f_star),
        eps0: eps0(v, 2.0 * f_star),
    };
    let th = 1.0 + p.theta;
    let e3 = 3f64.exp();
    let f1 = 10.0 * th / alpha0 * sq * ratio.ln();
    let f2 = 8.0 * v * (p.gamma * (1.0 / p.gamma).ln() * (ratio.ln() / alpha0 + r1)).sqrt();
    let f3 = 16.0 * th * r1 * sq;
    let cs = vec![
        flag("gamma_dyadic", "gamma = 2^-n", integral((1.0 / p.gamma).log2() + 1.0), p.gamma),
        flag("block_sites_even", "delta*/gamma is an even integer", integral(ratio) && (ratio.round() as u64) % 2 == 0, ratio),
        flag("eps_block_multiple", "eps/(gamma delta*) is a positive integer", integral(p.eps / (p.gamma * p.delta_star)), p.eps / (p.gamma * p.delta_star)),
        flag("q_eps_multiple", "Q/eps is a positive integer", integral(p.q / p.eps), p.q / p.eps),
        cmp("delta_above_delta_star", "delta* < delta", p.delta_star, p.delta, true),
        cmp("delta_below_one", "delta < 1", p.delta, 1.0, true),
        cmp("zeta4_below_zeta0", "zeta4 < zeta0", p.zeta4, p.zeta0, true),
        cmp("zeta1_below_zeta4", "zeta1 < zeta4", p.zeta1, p.zeta4, true),
        cmp("zeta5_below_zeta1", "zeta5 < zeta1", p.zeta5, p.zeta1, true),
        cmp("zeta5_above_block_scale", "8 gamma/delta* < zeta5", 8.0 / ratio, p.zeta5, true),
        cmp("q_above_one", "1 < Q", 1.0, p.q, true),
        cmp("f_below_quarter_fstar", "f < F*/4", p.f, f_star / 4.0, true),
        cmp("zeta1_cubed", "128(1+theta)/kappa * 2(5+F*)/F* * sqrt(gamma/delta*) < delta zeta1^3", 128.0 * th / kappa * 2.0 * (5.0 + f_star) / f_star * sq, p.delta * p.zeta1.powi(3), true),
        cmp("zeta4_cubed", "32 zeta1/kappa <= delta zeta4^3", 32.0 / kappa * p.zeta1, p.delta * p.zeta4.powi(3), false),
        cmp(
            "zeta5_floor",
            "max(5184(1+c(beta theta))^2 sqrt(gamma/delta*), (12 e^3 beta/c(beta,theta) delta*^2/gamma)^2) <= zeta5",
            (5184.0 * (1.0 + c_small).powi(2) * sq).max((12.0 * e3 * p.beta / c_large * p.delta_star * p.delta_star / p.gamma).powi(2)),
            p.zeta5,
            false,
        ),
        cmp("zeta5_cubed", "512(1+theta)/(kappa alpha(zeta0)) sqrt(gamma/delta*) log(delta*/gamma) < delta zeta5^3", 512.0 * th / (kappa * alpha0) * sq * ratio.ln(), p.delta * p.zeta5.powi(3), true),
        cmp("range_q", "sqrt(gamma) log Q <= sqrt(6 e^3 beta)/128", p.gamma.sqrt() * p.q.ln(), (6.0 * e3 * p.beta).sqrt() / 128.0, false),
        cmp("eps_floor", "F*/(32(1+theta)) sqrt(delta* gamma) <= eps", f_star / (32.0 * th) * (p.delta_star * p.gamma).sqrt(), p.eps, false),
        cmp("eps_above_block", "gamma delta* < eps", p.gamma * p.delta_star, p.eps, true),
        cmp("eps_below_eps0", "eps <= eps0(beta, theta, 2F*)", p.eps, derived.eps0, false),
        cmp("zeta4_theorem_floor", "1/(kappa^(1/3) g^(1/6)) < zeta4", 1.0 / (kappa.cbrt() * g.powf(1.0 / 6.0)), p.zeta4, true),
        cmp("cluster_scale", "delta*^2/gamma g^(3/2) <= 1/(beta kappa e^3 2^13)", p.delta_star * p.delta_star / p.gamma * g.powf(1.5), 1.0 / (p.beta * kappa * e3 * 8192.0), false),
        cmp("cluster_convergence", "delta*^2/gamma <= 1/(6 e^3 beta)", p.delta_star * p.delta_star / p.gamma, 1.0 / (6.0 * e3 * p.beta), false),
        cmp("proposition_budget", "8f1 + 4f2 + 4f3 + 32 zeta5^(1/3) + 16 zeta1 <= eps^(1/4)/2", 8.0 * f1 + 4.0 * f2 + 4.0 * f3 + 32.0 * p.zeta5.cbrt() + 16.0 * p.zeta1, p.eps.powf(0.25) / 2.0, false),
    ];
    let mut notes = vec![];
    let localization_enabled = v > 0.0 && f_star > 0.0;
    if !localization_enabled {
        notes.push(format!("V = {v}, F* = {f_star}: no random-walk drive, localization disabled"));
    }
    if !c.point().in_two_minima_region() {
        notes.push("(beta, theta) outside the two-minima region".into());
    }
    let satisfied = cs.iter().filter(|c| c.satisfied).count();
    ValidationReport { params: p.clone(), derived, total: cs.len(), satisfied, constraints: cs, localization_enabled, notes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phase,
    Instanton,
    Field,
    Localize,
    Gibbs,
    Cluster,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Phase, Stage::Instanton, Stage::Field, Stage::Localize, Stage::Gibbs, Stage::Cluster, Stage::Verify];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Phase => "phase",
            Stage::Instanton => "instanton",
            Stage::Field => "field",
            Stage::Localize => "localize",
            Stage::Gibbs => "gibbs",
            Stage::Cluster => "cluster",
            Stage::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstantonConfig {
    pub cells_per_unit: usize,
    pub half_length: f64,
}

impl Default for InstantonConfig {
    fn default() -> Self {
        Self { cells_per_unit: 64, half_length: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub blocks: usize,
    /// Blocks written to blocks.csv.
    pub csv_blocks: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { blocks: 100_000, csv_blocks: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub mode: LocalizationMode,
    pub extra: usize,
    pub r1: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { mode: LocalizationMode::Constructive, extra: 2, r1: 0.0 }
    }
}

/// Sampler settings; the model parameters come from [model].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub zeta: f64,
    pub margin: i64,
    pub sweeps: usize,
    pub burn_in: Option<usize>,
    pub pilot: usize,
    pub thin: usize,
    pub n_seeds: usize,
    pub free_control: bool,
    /// trajectory.csv: window length in units of 1/γ sites, boundary
    /// phase sign, sweeps and thinning factor
    pub trajectory_units: usize,
    pub trajectory_sign: i8,
    pub trajectory_sweeps: usize,
    pub trajectory_thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self { zeta: e.zeta, margin: e.margin, sweeps: e.sweeps, burn_in: e.burn_in, pilot: e.pilot, thin: e.thin, n_seeds: e.n_seeds, free_control: e.free_control, trajectory_units: 4, trajectory_sign: 1, trajectory_sweeps: 200, trajectory_thin: 10 }
    }
}

/// The cluster stage uses its own small system: the series needs
/// (δ*)²/γ ≤ 1/(6e³β), far from the [model] point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub sites_per_block: usize,
    pub blocks: Vec<i64>,
    /// β as a fraction of the convergence edge
    pub slack: f64,
    pub order: usize,
    pub r_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { sites_per_block: 8, blocks: vec![1, 2, 3, 4], slack: 0.9, order: 4, r_max: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub model: ModelParams,
    pub instanton: InstantonConfig,
    pub field: FieldConfig,
    pub localize: LocalizeConfig,
    pub gibbs: GibbsConfig,
    pub cluster: ClusterConfig,
    /// β, θ, ℱ*, f and the seed are taken from the run.
    pub verify: BoundSuiteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stages: Stage::ALL.to_vec(),
            model: ModelParams::default(),
            instanton: InstantonConfig::default(),
            field: FieldConfig::default(),
            localize: LocalizeConfig::default(),
            gibbs: GibbsConfig::default(),
            cluster: ClusterConfig::default(),
            verify: BoundSuiteConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Independent seed for a named sub-stream of the run seed.
pub fn stage_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seed: u64,
    pub seconds: f64,
    pub summary: Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub code_version: String,
}

/// Summary plus named files of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub summary: Value,
    pub files: Vec<(String, Vec<u8>)>,
}

/// State handed from stage to stage.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub constants: PhaseConstants,
}

impl RunContext {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        let c = phase_constants(&PhasePoint::new(cfg.model.beta, cfg.model.theta)?)?;
        Ok(Self { constants: c.with_f_star(cfg.model.f_star) })
    }

    pub fn f_star(&self) -> f64 {
        self.constants.f_star.expect("set at construction")
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, ctx: &mut RunContext) -> Result<StageOutput> {
    let m = &cfg.model;
    let seed = stage_seed(cfg.seed, stage.name());
    match stage {
        Stage::Phase => {
            let report = validate_params(m, &ctx.constants);
            let summary = json!({ "constants": to_json(&ctx.constants)?, "validation": to_json(&report)? });
            let files = vec![("phase.json".into(), pretty(&summary)), ("constraints.csv".into(), report.to_csv().into_bytes())];
            Ok(StageOutput { summary, files })
        }
        Stage::Instanton => {
            let inst = instanton(&ctx.constants, cfg.instanton.half_length, cfg.instanton.cells_per_unit)?;
            ctx.constants.f_star = Some(inst.f_star);
            let summary = json!({
                "f_star": inst.f_star,
                "iterations": inst.iterations,
                "residual": inst.residual,
                "max_energy_increase": inst.max_energy_increase,
                "alpha_fit": inst.alpha_fit,
                "tail_deviation": inst.tail_deviation,
                "cells_per_unit": cfg.instanton.cells_per_unit,
                "half_length": cfg.instanton.half_length,
            });
            let p = &inst.profile;
            let mut dat = String::new();
            for (i, mt) in p.m_tilde().iter().enumerate() {
                dat.push_str(&format!("{} {}\n", p.center(i), mt));
            }
            Ok(StageOutput {
                files: vec![("instanton.json".into(), pretty(&summary)), ("instanton.csv".into(), p.to_csv().into_bytes()), ("instanton.dat".into(), dat.into_bytes())],
                summary,
            })
        }
        Stage::Field => {
            let nb = sites_per_block(m.gamma, m.delta_star)?;
            let table = XTable::new(nb / 2, &ctx.constants)?;
            let st = field_statistics(seed, cfg.field.blocks, nb, ctx.constants.v_const, &table)?;
            let n_csv = cfg.field.csv_blocks.min(cfg.field.blocks);
            let mut csv = String::from("x,lambda,d,p,X\n");
            if n_csv > 0 {
                let h = sample_field(seed, 1, n_csv * nb)?;
                let blocks = (1..=n_csv as i64).map(|x| decompose_block(&h, x, nb)).collect::<Result<Vec<_>>>()?;
                csv = blocks_to_csv(&blocks, &table);
            }
            let summary = json!({ "statistics": to_json(&st)?, "x_table": to_json(&table)? });
            Ok(StageOutput { files: vec![("field.json".into(), pretty(&summary)), ("blocks.csv".into(), csv.into_bytes())], summary })
        }
        Stage::Localize => {
            let nb = sites_per_block(m.gamma, m.delta_star)?;
            let mb = blocks_per_alpha(m.eps, m.gamma, m.delta_star)?;
            let table = XTable::new(nb / 2, &ctx.constants)?;
            let params = ElongationParams::new(ctx.f_star(), m.f, m.eps, m.rho, m.a, m.q)?;
            let k = params.half_range()?;
            let span = k * (mb * nb) as i64;
            let h = sample_field(seed, -span + 1, 2 * span as usize)?;
            let path = walk_from_field(&h, k, mb, nb, m.gamma, &table)?;
            let opts = LocalizationOptions { mode: cfg.localize.mode, extra: cfg.localize.extra, r1: cfg.localize.r1 };
            let out = construct_localization(&path, &params, &opts)?;
            let summary = json!({
                "alpha_stars": to_json(&out.alpha_stars)?,
                "J": out.j_interval,
                "I": out.i_interval,
                "tau": out.tau,
                "exceptional": out.exceptional,
                "chain": to_json(&out.chain)?,
            });
            let mut dat = String::new();
            for a in path.lo()..=path.hi() {
                dat.push_str(&format!("{} {}\n", a as f64 * m.eps, path.y(a)));
            }
            Ok(StageOutput {
                files: vec![("localize.json".into(), pretty(&summary)), ("walk.csv".into(), path.to_csv().into_bytes()), ("walk.dat".into(), dat.into_bytes())],
                summary,
            })
        }
        Stage::Gibbs => {
            let g = &cfg.gibbs;
            let ec = ExperimentConfig {
                beta: m.beta,
                theta: m.theta,
                gamma: m.gamma,
                delta_star: m.delta_star,
                delta: m.delta,
                zeta: g.zeta,
                f_star: ctx.f_star(),
                f: m.f,
                eps: m.eps,
                rho: m.rho,
                a: m.a,
                q: m.q,
                margin: g.margin,
                sweeps: g.sweeps,
                burn_in: g.burn_in,
                pilot: g.pilot,
                thin: g.thin,
                seed,
                n_seeds: g.n_seeds,
                free_control: g.free_control,
            };
            let r = localization_experiment(&ec)?;
            let tspec = phase_window_spec(m.beta, m.theta, m.gamma, m.delta_star, g.trajectory_units, g.trajectory_sign, stage_seed(seed, "trajectory"))?;
            let traj = trajectory_csv(&tspec, &ec.eta_params()?, g.trajectory_sweeps, g.trajectory_thin, seed)?;
            let mut csv = String::from("seed,excluded,tau,i_left,i_right,burn_in,matched,mismatched,free_agree,free_against\n");
            for o in &r.outcomes {
                let (il, ir) = o.i_interval.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
                let (bi, mt, mm, fa, fb) = match &o.agreement {
                    Some(a) => {
                        let (fa, fb) = a.free.map_or((String::new(), String::new()), |(p, q)| (p.to_string(), q.to_string()));
                        (a.burn_in.to_string(), a.matched.to_string(), a.mismatched.to_string(), fa, fb)
                    }
                    None => Default::default(),
                };
                let ex = o.excluded.clone().unwrap_or_default().replace(',', ";");
                let tau = o.tau.map_or(String::new(), |t| t.to_string());
                csv.push_str(&format!("{},{ex},{tau},{il},{ir},{bi},{mt},{mm},{fa},{fb}\n", o.seed));
            }
            let summary = json!({
                "used": r.used,
                "wins": r.wins,
                "losses": r.losses,
                "ties": r.ties,
                "p_value": r.p_value,
                "mean_matched": r.mean_matched,
                "mean_mismatched": r.mean_mismatched,
                "mean_free_margin": r.mean_free_margin,
                "experiment": to_json(&r.config)?,
            });
            Ok(StageOutput { files: vec![("gibbs.json".into(), pretty(&summary)), ("gibbs_seeds.csv".into(), csv.into_bytes()), ("trajectory.csv".into(), traj.into_bytes())], summary })
        }
        Stage::Cluster => {
            let cc = &cfg.cluster;
            let (spec, h) = oracle_system(seed, cc.sites_per_block, cc.blocks.clone(), cc.slack)?;
            let sys = BlockSystem::new(&spec, &h)?;
            let est = s_estimate(&sys, cc.r_max)?;
            let direct = v_direct(&sys).ok();
            let series = (1..=cc.order).map(|k| v_series(&sys, k, cc.r_max)).collect::<Result<Vec<_>>>()?;
            let site = (spec.blocks[0] - 1) * cc.sites_per_block as i64 + 1;
            let lip = lipschitz_check(&spec, &h, site, cc.r_max)?;
            let last = series.last().expect("order >= 1");
            let mut csv = String::from("order,value,tail_bound,error\n");
            for s in &series {
                let err = direct.map_or(String::new(), |d| (s.value - d).abs().to_string());
                csv.push_str(&format!("{},{},{},{err}\n", s.order, s.value, s.tail_bound));
            }
            let summary = json!({
                "system": to_json(&spec)?,
                "S": est.s,
                "bound": est.bound,
                "v_direct": direct,
                "v_series": series.iter().map(|s| s.value).collect::<Vec<_>>(),
                "tail": last.tail_bound,
                "lipschitz_margin": lip.bound - lip.empirical,
            });
            Ok(StageOutput { files: vec![("cluster.json".into(), pretty(&summary)), ("cluster_series.csv".into(), csv.into_bytes())], summary })
        }
        Stage::Verify => {
            let vc = BoundSuiteConfig { beta: m.beta, theta: m.theta, f_star: ctx.f_star(), f: m.f, seed, ..cfg.verify.clone() };
            let rep = verify_bounds(&vc)?;
            let summary = json!({ "all_pass": rep.all_pass(), "checks": to_json(&rep.checks)? });
            let mut csv = String::from("name,model,estimate,ci_lo,ci_hi,bound,trials,trivial,pass\n");
            for c in &rep.checks {
                csv.push_str(&format!("{},{},{},{},{},{},{},{},{}\n", c.name, c.model, c.estimate, c.ci.0, c.ci.1, c.bound, c.trials, c.trivial, c.pass));
            }
            Ok(StageOutput { files: vec![("verify.json".into(), pretty(&summary)), ("verify.csv".into(), csv.into_bytes())], summary })
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Runs the configured stages in the fixed order phase → instanton →
/// field → localize → gibbs → cluster → verify and writes every artifact
/// plus manifest.json into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let started = unix_now();
    let wrap = |stage: Stage| move |e: Error| Error::Stage { stage: stage.name().into(), source: Box::new(e) };
    let mut ctx = RunContext::new(cfg).map_err(wrap(Stage::Phase))?;
    let mut records = vec![];
    for stage in Stage::ALL.into_iter().filter(|s| cfg.stages.contains(s)) {
        let t = Instant::now();
        let out = run_stage(stage, cfg, &mut ctx).map_err(wrap(stage))?;
        let mut artifacts = vec![];
        for (name, bytes) in &out.files {
            fs::write(out_dir.join(name), bytes).map_err(|e| wrap(stage)(e.into()))?;
            artifacts.push(Artifact { path: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        }
        records.push(StageRecord { stage, seed: stage_seed(cfg.seed, stage.name()), seconds: t.elapsed().as_secs_f64(), summary: out.summary, artifacts });
    }
    let manifest = RunManifest { seed: cfg.seed, config: cfg.clone(), stages: records, started_unix: started, finished_unix: unix_now(), code_version: env!("CARGO_PKG_VERSION").into() };
    fs::write(out_dir.join("manifest.json"), pretty(&to_json(&manifest)?))?;
    Ok(manifest)
}

/// Loads a TOML config and runs it.
pub fn run_pipeline_file(config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    run_pipeline(&PipelineConfig::load(config_path)?, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(beta: f64, theta: f64) -> PhaseConstants {
        phase_constants(&PhasePoint::new(beta, theta).unwrap()).unwrap().with_f_star(0.14856)
    }

    #[test]
    fn g_choices() {
        assert_eq!(GChoice::Log.eval(2.0), 1.0);
        assert!((GChoice::Log.eval(16.0) - 16f64.ln()).abs() < 1e-15);
        assert_eq!(GChoice::Power { exponent: 0.5 }.eval(64.0), 8.0);
    }

    #[test]
    fn ln_c_large_matches_direct_where_finite() {
        // small βθ and m_β₁ keep c(β,θ) representable
        let (beta, theta, m1): (f64, f64, f64) = (0.01, 0.01, -5.0);
        let t = (2.0 * beta * theta).tanh();
        let a = 257.0 * (1.0 / (1.0 - t).powi(2) + 1.0 / (1.0 - m1));
        let direct = a + (4.0 * beta * theta).exp() * (1.0 + t) / (1.0 - t) * a.exp();
        assert!((ln_c_large(beta, theta, m1) - direct.ln()).abs() < 1e-12);
        assert!(ln_c_large(2.0, 0.1, 0.97).is_finite());
    }

    #[test]
    fn schedule_values() {
        let c = consts(2.0, 0.1);
        let p = ModelParams::default().asymptotic_schedule(&c);
        let g = 4f64.ln();
        assert!((p.eps.powf(0.25) - 5.0 / g).abs() < 1e-12);
        assert!((p.zeta1 - 1.0 / (160.0 * g)).abs() < 1e-15);
        assert!((p.delta - 1.0 / (5.0 * g.sqrt())).abs() < 1e-15);
        // c(β,θ) is astronomically large here, so ζ₅ underflows
        assert_eq!(p.zeta5, 0.0);
    }

    #[test]
    fn schedule_at_desk_scale_fails_many_constraints() {
        let c = consts(2.0, 0.1);
        let base = ModelParams { gamma: 1.0 / 64.0, delta_star: 0.25, ..Default::default() };
        let r = validate_params(&base.asymptotic_schedule(&c), &c);
        assert_eq!(r.total, r.constraints.len());
        assert!(r.satisfied < r.total);
        assert!(!r.get("zeta5_above_block_scale").unwrap().satisfied);
        assert!(r.localization_enabled);
    }

    #[test]
    fn derived_constants() {
        let c = consts(2.0, 0.1);
        let p = ModelParams::default();
        let r = validate_params(&p, &c);
        let d = &r.derived;
        assert!((d.r1 - 4.0 * 5.14856 / (c.kappa_est * 0.5 * 0.4f64.powi(3))).abs() < 1e-9 * d.r1);
        assert!((d.l2 - 0.14856 / (32.0 * 1.1) * 2.0).abs() < 1e-15);
        assert!((d.l0 - 4f64.ln() / c.alpha_zeta(0.9)).abs() < 1e-12);
        assert!(d.eps0 > 0.0 && d.c1 > 2.0);
        assert!(r.get("gamma_dyadic").unwrap().satisfied);
        assert!(r.get("block_sites_even").unwrap().satisfied);
        assert!(r.get("eps_block_multiple").unwrap().satisfied);
        assert!(r.get("q_eps_multiple").unwrap().satisfied);
        let odd = validate_params(&ModelParams { gamma: 0.1, ..p }, &c);
        assert!(!odd.get("gamma_dyadic").unwrap().satisfied);
    }

    #[test]
    fn theta_zero_disables_localization() {
        let c = phase_constants(&PhasePoint::new(2.0, 0.0).unwrap()).unwrap();
        let r = validate_params(&ModelParams { theta: 0.0, ..Default::default() }, &c);
        assert_eq!(r.derived.v, 0.0);
        assert!(!r.localization_enabled && !r.notes.is_empty());
    }

    #[test]
    fn shrinking_gamma_keeps_satisfied_constraints() {
        let c = consts(2.0, 0.1);
        let mut prev: Option<ValidationReport> = None;
        for n in 4..=14 {
            let gamma = 2f64.powi(-n);
            let p = ModelParams { gamma, delta_star: 16.0 * gamma, eps: 0.25, q: 4.0, ..Default::default() };
            let r = validate_params(&p, &c);
            if let Some(q) = &prev {
                for (a, b) in q.constraints.iter().zip(&r.constraints) {
                    assert!(!a.satisfied || b.satisfied, "{} turned false at gamma = 2^-{n}", a.id);
                }
            }
            prev = Some(r);
        }
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let s: Vec<u64> = Stage::ALL.iter().map(|st| stage_seed(7, st.name())).collect();
        for i in 0..s.len() {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(stage_seed(7, "field"), stage_seed(7, "field"));
        assert_ne!(stage_seed(7, "field"), stage_seed(8, "field"));
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        let small = PipelineConfig::from_toml("seed = 3\nstages = [\"phase\"]\n[model]\nbeta = 1.5\n").unwrap();
        assert_eq!(small.model.beta, 1.5);
        assert_eq!(small.model.theta, 0.1);
        assert_eq!(small.stages, vec![Stage::Phase]);
        assert!(matches!(PipelineConfig::from_toml("[model]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("stages = [\"nope\"]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn phase_only_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { stages: vec![Stage::Phase], ..Default::default() };
        let m = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert!(m.stages[0].summary["constants"]["v_const"].as_f64().unwrap() > 0.76);
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("constraints.csv").exists());
    }

    #[test]
    fn stage_errors_carry_the_stage_name() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { stages: vec![Stage::Localize], model: ModelParams { eps: 0.05, ..Default::default() }, ..Default::default() };
        match run_pipeline(&cfg, dir.path()) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "localize"),
            other => panic!("expected a stage error, got {other:?}"),
        }
    }
}
