//! The verification suite: twelve criteria, one report each.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::experiments::{
    generalization, lambda_sweep, mask_robustness, nullspace_effect, projection_comparison, random_sub_boxes,
    rank_monotonicity, Settings,
};
use super::{to_canonical_json, Cmp, ExperimentReport, GrayImage, PgmFormat};
use crate::error::{Error, Result};
use crate::genzoo::{Generator, GeneratorKind, LatentCode, RegionMask, FD_STEP};
use crate::numkernel::{fro_norm, norm2, Matrix};
use crate::rng::{normal_matrix, seeded_stream, unit_vec, Stream};
use crate::rpca::{pcp, planted_instance, PcpSolution};
use crate::subspace::{attribute_basis, principal_direction, region_gram, AttributeBasis, ProjectionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Criterion {
    Recovery = 1,
    Feasibility,
    Jacobian,
    RankMonotonicity,
    PrincipalDirection,
    NullspaceLocality,
    ProjectionBenefit,
    Generalization,
    MaskRobustness,
    Relaxation,
    LambdaSweep,
    Tooling,
}

impl Criterion {
    pub const ALL: [Criterion; 12] = [
        Criterion::Recovery,
        Criterion::Feasibility,
        Criterion::Jacobian,
        Criterion::RankMonotonicity,
        Criterion::PrincipalDirection,
        Criterion::NullspaceLocality,
        Criterion::ProjectionBenefit,
        Criterion::Generalization,
        Criterion::MaskRobustness,
        Criterion::Relaxation,
        Criterion::LambdaSweep,
        Criterion::Tooling,
    ];

    pub fn number(self) -> usize {
        self as usize
    }

    /// Short identifier, also the report file stem.
    pub fn slug(self) -> &'static str {
        match self {
            Criterion::Recovery => "rpca_recovery",
            Criterion::Feasibility => "rpca_feasibility",
            Criterion::Jacobian => "jacobian",
            Criterion::RankMonotonicity => "rank_monotonicity",
            Criterion::PrincipalDirection => "principal_direction",
            Criterion::NullspaceLocality => "nullspace_locality",
            Criterion::ProjectionBenefit => "projection_benefit",
            Criterion::Generalization => "generalization",
            Criterion::MaskRobustness => "mask_robustness",
            Criterion::Relaxation => "relaxation",
            Criterion::LambdaSweep => "lambda_sweep",
            Criterion::Tooling => "tooling",
        }
    }

    /// Filter group accepted by `--only`.
    pub fn group(self) -> &'static str {
        match self {
            Criterion::Recovery | Criterion::Feasibility => "rpca",
            Criterion::Jacobian => "jacobian",
            Criterion::RankMonotonicity => "rank",
            Criterion::PrincipalDirection => "principal",
            Criterion::NullspaceLocality => "nullspace",
            Criterion::ProjectionBenefit => "projection",
            Criterion::Generalization => "generalization",
            Criterion::MaskRobustness => "robustness",
            Criterion::Relaxation => "relaxation",
            Criterion::LambdaSweep => "lambda",
            Criterion::Tooling => "tooling",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::Recovery => "RPCA exact recovery",
            Criterion::Feasibility => "ADMM feasibility and symmetry",
            Criterion::Jacobian => "Jacobian vs finite differences",
            Criterion::RankMonotonicity => "per-layer rank monotonicity",
            Criterion::PrincipalDirection => "principal direction beats random directions",
            Criterion::NullspaceLocality => "null-space edits stay local",
            Criterion::ProjectionBenefit => "projection lowers outside-region MSE",
            Criterion::Generalization => "directions transfer across latents",
            Criterion::MaskRobustness => "directions are robust to the mask",
            Criterion::Relaxation => "relaxation monotonicity",
            Criterion::LambdaSweep => "lambda sweep monotonicity",
            Criterion::Tooling => "serialization round trips",
        }
    }

    pub fn file_name(self) -> String {
        format!("{:02}_{}.json", self.number(), self.slug())
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>2} {}", self.number(), self.title())
    }
}

/// A subset of criteria. Parses comma-separated groups, slugs or numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection(BTreeSet<Criterion>);

impl Selection {
    pub fn all() -> Self {
        Self(Criterion::ALL.into_iter().collect())
    }

    pub fn contains(&self, c: Criterion) -> bool {
        self.0.contains(&c)
    }

    pub fn criteria(&self) -> impl Iterator<Item = Criterion> + '_ {
        self.0.iter().copied()
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = BTreeSet::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let hits: Vec<Criterion> = Criterion::ALL
                .into_iter()
                .filter(|c| item == c.group() || item == c.slug() || item == c.number().to_string())
                .collect();
            if hits.is_empty() {
                let groups: BTreeSet<&str> = Criterion::ALL.iter().map(|c| c.group()).collect();
                return Err(Error::invalid(format!(
                    "unknown suite filter {item:?}; groups are {}",
                    groups.into_iter().collect::<Vec<_>>().join(", ")
                )));
            }
            set.extend(hits);
        }
        if set.is_empty() {
            return Err(Error::invalid("empty suite filter"));
        }
        Ok(Self(set))
    }
}

/// Declared pass thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub recovery_rel_err: f64,
    pub feasibility: f64,
    pub symmetry: f64,
    pub fd_max_abs: f64,
    pub principal_min_wins: f64,
    pub locality_abs: f64,
    pub locality_min_change_a: f64,
    pub locality_ratio: f64,
    pub projection_ratio: f64,
    pub transfer_factor: f64,
    pub transfer_fraction: f64,
    pub linear_transfer_spread: f64,
    pub robustness_mean_cos: f64,
    pub relaxation_slack: f64,
    /// Blocky generators above this coupling are measured, not asserted.
    pub max_asserted_coupling: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            recovery_rel_err: 1e-5,
            feasibility: 1e-7,
            symmetry: 1e-8,
            fd_max_abs: 1e-6,
            principal_min_wins: 99.0,
            locality_abs: 1e-8,
            locality_min_change_a: 1e-2,
            locality_ratio: 1e-3,
            projection_ratio: 0.1,
            transfer_factor: 10.0,
            transfer_fraction: 0.9,
            linear_transfer_spread: 1e-12,
            robustness_mean_cos: 0.9,
            relaxation_slack: 1e-12,
            max_asserted_coupling: 0.05,
        }
    }
}

/// A blocky zoo member and the coupling it was built with.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockyCase {
    pub name: String,
    pub coupling: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub settings: Settings,
    pub thresholds: Thresholds,
    pub rpca_instances: usize,
    pub rpca_size: usize,
    pub rpca_rank: usize,
    pub rpca_fraction: f64,
    pub rpca_magnitude: f64,
    pub symmetric_size: usize,
    /// Latent samples per generator for the Jacobian and rank checks.
    pub z_per_generator: usize,
    pub principal_z: usize,
    pub principal_random_dirs: usize,
    pub principal_alpha: f64,
    pub alphas: Vec<f64>,
    pub locality_z: usize,
    pub blocky: Vec<BlockyCase>,
    pub generalization_targets: usize,
    pub submasks: usize,
    pub submask_min_fraction: f64,
    pub relaxation_z: usize,
    pub relaxation_random_vectors: usize,
    pub lambda_generators: Vec<String>,
    pub lambda_ns: Vec<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            settings: Settings::default(),
            thresholds: Thresholds::default(),
            rpca_instances: 20,
            rpca_size: 200,
            rpca_rank: 10,
            rpca_fraction: 0.05,
            rpca_magnitude: 10.0,
            symmetric_size: 80,
            z_per_generator: 10,
            principal_z: 3,
            principal_random_dirs: 100,
            principal_alpha: 0.1,
            alphas: vec![0.5, 1.0, 2.0],
            locality_z: 3,
            blocky: vec![
                BlockyCase {
                    name: "blocky_c0".into(),
                    coupling: 0.0,
                },
                BlockyCase {
                    name: "blocky_c005".into(),
                    coupling: 0.05,
                },
                BlockyCase {
                    name: "blocky_wide".into(),
                    coupling: 0.0,
                },
            ],
            generalization_targets: 50,
            submasks: 5,
            submask_min_fraction: 0.25,
            relaxation_z: 2,
            relaxation_random_vectors: 3,
            lambda_generators: vec!["blocky_wide".into()],
            lambda_ns: vec![20.0, 40.0, 60.0, 80.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub report: ExperimentReport,
    /// Wall-clock time of each PCP solve in the recovery battery; kept out
    /// of the report so reports stay reproducible.
    pub solve_times: Vec<Duration>,
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub results: Vec<CriterionResult>,
}

impl SuiteOutcome {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.report.pass())
    }

    pub fn get(&self, c: Criterion) -> Option<&CriterionResult> {
        self.results.iter().find(|r| r.criterion == c)
    }
}

/// Left/right halves on an image grid, otherwise the first and second half
/// of the output indices.
pub fn default_regions(g: &Generator) -> Result<(RegionMask, RegionMask)> {
    match g.grid() {
        Some(grid) if grid >= 2 => Ok((RegionMask::left_half(grid)?, RegionMask::right_half(grid)?)),
        _ => {
            let d_x = g.d_x();
            if d_x < 2 {
                return Err(Error::invalid("need at least two outputs to split into regions"));
            }
            let a = RegionMask::new((0..d_x / 2).collect(), d_x)?;
            let b = a.complement(d_x)?;
            Ok((a, b))
        }
    }
}

fn alpha_label(alpha: f64) -> String {
    format!("a{alpha}")
}

fn find<'a>(zoo: &'a [(String, Generator)], name: &str) -> Result<&'a Generator> {
    zoo.iter()
        .find(|(n, _)| n == name)
        .map(|(_, g)| g)
        .ok_or_else(|| Error::invalid(format!("generator {name:?} is not in the zoo")))
}

struct Ctx<'a> {
    zoo: &'a [(String, Generator)],
    cfg: &'a SuiteConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn z(&self, g: &Generator, k: usize) -> LatentCode {
        LatentCode::sample(g.d_z(), self.cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64))
    }

    fn asserted(&self, case: &BlockyCase) -> bool {
        case.coupling <= self.cfg.thresholds.max_asserted_coupling
    }

    fn write_image(&self, name: &str, values: &[f64], width: usize, others: &[&[f64]]) -> Result<String> {
        let rel = format!("images/{name}.pgm");
        GrayImage::auto_range(values, width, others)?.write(&self.out.join(&rel), PgmFormat::Binary)?;
        Ok(rel)
    }
}

/// Runs the selected criteria on `zoo` and writes reports, images and an
/// index below `out`.
pub fn run_suite(
    zoo: &[(String, Generator)],
    cfg: &SuiteConfig,
    selection: &Selection,
    out: &Path,
) -> Result<SuiteOutcome> {
    fs::create_dir_all(out.join("reports"))?;
    fs::create_dir_all(out.join("images"))?;
    let ctx = Ctx { zoo, cfg, out };
    let mut results = Vec::new();

    if selection.contains(Criterion::Recovery) || selection.contains(Criterion::Feasibility) {
        let (recovery, feasibility, times) = rpca_battery(&ctx)?;
        if selection.contains(Criterion::Recovery) {
            results.push(CriterionResult {
                criterion: Criterion::Recovery,
                report: recovery,
                solve_times: times,
            });
        }
        if selection.contains(Criterion::Feasibility) {
            results.push(CriterionResult {
                criterion: Criterion::Feasibility,
                report: feasibility,
                solve_times: Vec::new(),
            });
        }
    }
    for c in selection.criteria() {
        let report = match c {
            Criterion::Recovery | Criterion::Feasibility | Criterion::Tooling => continue,
            Criterion::Jacobian => jacobian_check(&ctx)?,
            Criterion::RankMonotonicity => rank_check(&ctx)?,
            Criterion::PrincipalDirection => principal_check(&ctx)?,
            Criterion::NullspaceLocality => locality_check(&ctx)?,
            Criterion::ProjectionBenefit => projection_check(&ctx)?,
            Criterion::Generalization => generalization_check(&ctx)?,
            Criterion::MaskRobustness => robustness_check(&ctx)?,
            Criterion::Relaxation => relaxation_check(&ctx)?,
            Criterion::LambdaSweep => lambda_check(&ctx)?,
        };
        results.push(CriterionResult {
            criterion: c,
            report,
            solve_times: Vec::new(),
        });
    }
    if selection.contains(Criterion::Tooling) {
        let report = tooling_check(&ctx, &results)?;
        results.push(CriterionResult {
            criterion: Criterion::Tooling,
            report,
            solve_times: Vec::new(),
        });
    }
    results.sort_by_key(|r| r.criterion);
    for r in &results {
        fs::write(out.join("reports").join(r.criterion.file_name()), r.report.to_json())?;
    }
    fs::write(out.join("reports").join("index.json"), index_json(&results))?;
    Ok(SuiteOutcome { results })
}

#[derive(Serialize)]
struct IndexEntry {
    number: usize,
    name: String,
    title: String,
    file: String,
    pass: bool,
}

#[derive(Serialize)]
struct Index {
    criteria: Vec<IndexEntry>,
    pass: bool,
}

fn index_json(results: &[CriterionResult]) -> String {
    let index = Index {
        criteria: results
            .iter()
            .map(|r| IndexEntry {
                number: r.criterion.number(),
                name: r.criterion.slug().into(),
                title: r.criterion.title().into(),
                file: r.criterion.file_name(),
                pass: r.report.pass(),
            })
            .collect(),
        pass: results.iter().all(|r| r.report.pass()),
    };
    to_canonical_json(&index)
}

fn symmetry_error(l: &Matrix) -> f64 {
    let n = fro_norm(l);
    if n == 0.0 {
        0.0
    } else {
        fro_norm(&(l - &l.transpose())) / n
    }
}

/// Feasibility is recomputed from `M`, `L`, `S` rather than trusted from
/// the solver. It is only asserted on converged solves; solves that hit the
/// iteration cap are recorded as such.
fn feasibility_metrics(r: &mut ExperimentReport, key: &str, m: &Matrix, sol: &PcpSolution, t: &Thresholds) -> Result<bool> {
    let residual = fro_norm(&(&(&sol.l + &sol.s) - m)) / fro_norm(m).max(f64::MIN_POSITIVE);
    r.metric(format!("{key}.converged"), if sol.converged { 1.0 } else { 0.0 })?;
    r.metric(format!("{key}.iterations"), sol.iterations as f64)?;
    r.metric(format!("{key}.residual"), residual)?;
    if sol.converged {
        r.require(format!("{key}.residual"), Cmp::AtMost, t.feasibility)?;
    }
    Ok(sol.converged)
}

fn rpca_battery(ctx: &Ctx) -> Result<(ExperimentReport, ExperimentReport, Vec<Duration>)> {
    let cfg = ctx.cfg;
    let t = &cfg.thresholds;
    let mut rec = ExperimentReport::new(Criterion::Recovery.slug());
    rec.param("instances", cfg.rpca_instances)
        .param("size", cfg.rpca_size)
        .param("rank", cfg.rpca_rank)
        .param("fraction", cfg.rpca_fraction)
        .param("magnitude", cfg.rpca_magnitude);
    let mut feas = ExperimentReport::new(Criterion::Feasibility.slug());
    let mut times = Vec::with_capacity(cfg.rpca_instances);
    let mut worst = 0.0_f64;
    let mut converged = 0usize;
    let mut symmetric_converged = 0usize;
    for k in 0..cfg.rpca_instances {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        let (l0, s0) = planted_instance(cfg.rpca_size, cfg.rpca_rank, cfg.rpca_fraction, cfg.rpca_magnitude, seed);
        let m = &l0 + &s0;
        let start = Instant::now();
        let sol = pcp(&m, &cfg.settings.pcp)?;
        times.push(start.elapsed());
        let err = fro_norm(&(&sol.l - &l0)) / fro_norm(&l0);
        worst = worst.max(err);
        let key = format!("inst_{k:02}");
        rec.metric(format!("{key}.rel_err"), err)?;
        rec.metric(format!("{key}.iterations"), sol.iterations as f64)?;
        rec.require(format!("{key}.rel_err"), Cmp::AtMost, t.recovery_rel_err)?;
        if feasibility_metrics(&mut feas, &format!("planted.{key}"), &m, &sol, t)? {
            converged += 1;
        }
    }
    rec.metric("max_rel_err", worst)?;

    // symmetric inputs: a planted symmetric instance and the region grams
    let n = cfg.symmetric_size;
    let (l0, s0) = planted_instance(n, cfg.rpca_rank.min(n / 4).max(1), cfg.rpca_fraction, cfg.rpca_magnitude, cfg.seed);
    let m = (&l0 + &s0).symmetrize();
    let mut symmetric = vec![("planted_symmetric".to_string(), m)];
    for (name, g) in ctx.zoo {
        let (a, b) = default_regions(g)?;
        let j = g.jacobian(&ctx.z(g, 0))?;
        symmetric.push((format!("{name}.gram_a"), region_gram(&j, &a)?));
        symmetric.push((format!("{name}.gram_b"), region_gram(&j, &b)?));
    }
    for (key, m) in &symmetric {
        let sol = pcp(m, &cfg.settings.pcp)?;
        if feasibility_metrics(&mut feas, key, m, &sol, t)? {
            converged += 1;
            symmetric_converged += 1;
        }
        feas.metric(format!("{key}.asymmetry"), symmetry_error(&sol.l))?;
        feas.require(format!("{key}.asymmetry"), Cmp::AtMost, t.symmetry)?;
    }
    // guards against a vacuous pass
    feas.metric("converged_solves", converged as f64)?;
    feas.metric("converged_symmetric_solves", symmetric_converged as f64)?;
    feas.metric("solves", (cfg.rpca_instances + symmetric.len()) as f64)?;
    feas.require("converged_solves", Cmp::AtLeast, 1.0)?;
    feas.require("converged_symmetric_solves", Cmp::AtLeast, 1.0)?;
    Ok((rec, feas, times))
}

fn jacobian_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new(Criterion::Jacobian.slug());
    r.param("step", FD_STEP).param("z_per_generator", ctx.cfg.z_per_generator);
    for (name, g) in ctx.zoo {
        let mut worst = 0.0_f64;
        for k in 0..ctx.cfg.z_per_generator {
            let z = ctx.z(g, k);
            let err = g.jacobian_fd(&z, FD_STEP)?.max_abs_diff(&g.jacobian(&z)?);
            r.metric(format!("{name}.z{k}.max_abs_err"), err)?;
            worst = worst.max(err);
        }
        r.metric(format!("{name}.max_abs_err"), worst)?;
        r.require(format!("{name}.max_abs_err"), Cmp::AtMost, ctx.cfg.thresholds.fd_max_abs)?;
    }
    Ok(r)
}

fn rank_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new(Criterion::RankMonotonicity.slug());
    let rel_tol = 1e-8;
    r.param("rel_tol", rel_tol);
    for (name, g) in ctx.zoo {
        for k in 0..ctx.cfg.z_per_generator {
            let mut sub = rank_monotonicity(g, &ctx.z(g, k), rel_tol)?;
            sub.require("nonincreasing", Cmp::AtLeast, 1.0)?;
            if sub.get("first_rank_below_dz").is_some() {
                sub.require("first_rank_below_dz", Cmp::AtLeast, 1.0)?;
            }
            r.absorb(&format!("{name}.z{k}"), &sub);
        }
    }
    Ok(r)
}

fn principal_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let cfg = ctx.cfg;
    let mut r = ExperimentReport::new(Criterion::PrincipalDirection.slug());
    r.param("alpha", cfg.principal_alpha)
        .param("random_directions", cfg.principal_random_dirs);
    for (name, g) in ctx.zoo {
        let (a, _) = default_regions(g)?;
        for k in 0..cfg.principal_z {
            let j = g.jacobian(&ctx.z(g, k))?.select_rows(a.indices());
            let v = principal_direction(&j.t_matmul(&j))?;
            let change = |d: &[f64]| cfg.principal_alpha * norm2(&j.matvec(d));
            let top = change(&v);
            let mut wins = 0usize;
            for s in 0..cfg.principal_random_dirs {
                let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((k * cfg.principal_random_dirs + s) as u64);
                let d = unit_vec(g.d_z(), &mut seeded_stream(seed, Stream::Direction));
                if top > change(&d) {
                    wins += 1;
                }
            }
            let key = format!("{name}.z{k}");
            r.metric(format!("{key}.top_change"), top)?;
            r.metric(format!("{key}.wins"), wins as f64)?;
            r.require(format!("{key}.wins"), Cmp::AtLeast, cfg.thresholds.principal_min_wins)?;
        }
    }
    Ok(r)
}

fn locality_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let t = &ctx.cfg.thresholds;
    let mut r = ExperimentReport::new(Criterion::NullspaceLocality.slug());
    for case in &ctx.cfg.blocky {
        let g = find(ctx.zoo, &case.name)?;
        let (a, b) = default_regions(g)?;
        let width = g.grid().unwrap_or(g.d_x());
        r.param(format!("{}.coupling", case.name), case.coupling);
        for k in 0..ctx.cfg.locality_z {
            for &alpha in &ctx.cfg.alphas {
                let (mut sub, out) = nullspace_effect(g, &ctx.z(g, k), &a, &b, alpha, &ctx.cfg.settings)?;
                if ctx.asserted(case) {
                    sub.require("ratio_b_over_a", Cmp::AtMost, t.locality_ratio)?;
                    if case.coupling == 0.0 {
                        sub.require("change_b", Cmp::AtMost, t.locality_abs)?;
                        // the A-side floor is a scale stated at unit strength
                        if alpha == 1.0 {
                            sub.require("change_a", Cmp::AtLeast, t.locality_min_change_a)?;
                        }
                    }
                }
                if k == 0 && alpha == 1.0 {
                    let stem = format!("{}_nullspace", case.name);
                    sub.artifacts.push(ctx.write_image(&format!("{stem}_before"), &out.before, width, &[&out.after])?);
                    sub.artifacts.push(ctx.write_image(&format!("{stem}_after"), &out.after, width, &[&out.before])?);
                    let heat = out.heatmap(width)?.to_image();
                    let rel = format!("images/{stem}_heatmap.pgm");
                    heat.write(&ctx.out.join(&rel), PgmFormat::Binary)?;
                    sub.artifacts.push(rel);
                }
                r.absorb(&format!("{}.z{k}.{}", case.name, alpha_label(alpha)), &sub);
            }
        }
    }
    Ok(r)
}

fn projection_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new(Criterion::ProjectionBenefit.slug());
    for case in &ctx.cfg.blocky {
        let g = find(ctx.zoo, &case.name)?;
        let (a, b) = default_regions(g)?;
        r.param(format!("{}.coupling", case.name), case.coupling);
        for k in 0..ctx.cfg.locality_z {
            for &alpha in &ctx.cfg.alphas {
                let mut sub = projection_comparison(g, &ctx.z(g, k), &a, &b, alpha, 0, &ctx.cfg.settings)?;
                if ctx.asserted(case) {
                    sub.require("ratio_with_over_without", Cmp::AtMost, ctx.cfg.thresholds.projection_ratio)?;
                }
                r.absorb(&format!("{}.z{k}.{}", case.name, alpha_label(alpha)), &sub);
            }
        }
    }
    Ok(r)
}

fn generalization_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let cfg = ctx.cfg;
    let t = &cfg.thresholds;
    let mut r = ExperimentReport::new(Criterion::Generalization.slug());
    r.param("targets", cfg.generalization_targets);
    let targets = |g: &Generator| -> Vec<LatentCode> {
        (0..cfg.generalization_targets).map(|k| ctx.z(g, 1000 + k)).collect()
    };
    for case in &cfg.blocky {
        let g = find(ctx.zoo, &case.name)?;
        let (a, b) = default_regions(g)?;
        let mut sub = generalization(
            g,
            &ctx.z(g, 0),
            &targets(g),
            &a,
            &b,
            1.0,
            0,
            t.transfer_factor,
            &cfg.settings,
        )?;
        if ctx.asserted(case) {
            sub.require("fraction_local", Cmp::AtLeast, t.transfer_fraction)?;
        }
        r.absorb(&case.name, &sub);
    }
    for (name, g) in ctx.zoo.iter().filter(|(_, g)| is_linear(g)) {
        let (a, b) = default_regions(g)?;
        let mut sub = generalization(g, &ctx.z(g, 0), &targets(g), &a, &b, 1.0, 0, t.transfer_factor, &cfg.settings)?;
        sub.require("delta_spread", Cmp::AtMost, t.linear_transfer_spread)?;
        r.absorb(name, &sub);
    }
    Ok(r)
}

fn is_linear(g: &Generator) -> bool {
    g.kind() == GeneratorKind::Linear
}

/// Asserted with plain projection. The small-mask relaxation preset is
/// recorded under `preset.` but not asserted: when B's rank is below the
/// preset it lifts the whole constraint.
fn robustness_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let cfg = ctx.cfg;
    let mut r = ExperimentReport::new(Criterion::MaskRobustness.slug());
    r.param("submasks", cfg.submasks)
        .param("min_fraction", cfg.submask_min_fraction)
        .param("small_mask_relax", cfg.settings.small_mask_relax);
    let strict = Settings {
        small_mask_relax: 0,
        ..cfg.settings.clone()
    };
    for case in &cfg.blocky {
        let g = find(ctx.zoo, &case.name)?;
        let grid = g
            .grid()
            .ok_or_else(|| Error::invalid(format!("{} has no image grid", case.name)))?;
        let (a, b) = default_regions(g)?;
        for k in 0..cfg.locality_z {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            let boxes = random_sub_boxes(grid, (0, 0, grid / 2, grid), cfg.submasks, cfg.submask_min_fraction, seed)?;
            let z = ctx.z(g, k);
            let mut sub = mask_robustness(g, &z, &boxes, &a, &b, 1.0, &strict)?;
            if ctx.asserted(case) {
                sub.require("mean_abs_cos", Cmp::AtLeast, cfg.thresholds.robustness_mean_cos)?;
            }
            r.absorb(&format!("{}.z{k}", case.name), &sub);
            let preset = mask_robustness(g, &z, &boxes, &a, &b, 1.0, &cfg.settings)?;
            r.absorb(&format!("{}.z{k}.preset", case.name), &preset);
        }
    }
    Ok(r)
}

/// Largest drop of `‖(I − B₁B₁ᵀ)v‖` between consecutive relaxations.
fn relaxation_drop(basis_b: &AttributeBasis, v: &[f64]) -> Result<f64> {
    let mut prev: Option<f64> = None;
    let mut drop = 0.0_f64;
    for relax in 0..=basis_b.rank {
        let spec = ProjectionSpec::new(basis_b.clone(), relax)?;
        let n = norm2(&spec.residual(v)?);
        if let Some(p) = prev {
            drop = drop.max(p - n);
        }
        prev = Some(n);
    }
    Ok(drop)
}

fn relaxation_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let cfg = ctx.cfg;
    let mut r = ExperimentReport::new(Criterion::Relaxation.slug());
    r.param("random_vectors", cfg.relaxation_random_vectors);
    for (name, g) in ctx.zoo {
        let (a, b) = default_regions(g)?;
        for k in 0..cfg.relaxation_z {
            let j = g.jacobian(&ctx.z(g, k))?;
            let basis_a = attribute_basis(&region_gram(&j, &a)?, &a, &cfg.settings.pcp, cfg.settings.rank_tol)?;
            let basis_b = attribute_basis(&region_gram(&j, &b)?, &b, &cfg.settings.pcp, cfg.settings.rank_tol)?;
            let mut vectors: Vec<Vec<f64>> = (0..basis_a.rank).map(|i| basis_a.direction(i)).collect::<Result<_>>()?;
            let mut rng = seeded_stream(cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64), Stream::Direction);
            vectors.extend((0..cfg.relaxation_random_vectors).map(|_| unit_vec(g.d_z(), &mut rng)));
            let mut worst = 0.0_f64;
            for v in &vectors {
                worst = worst.max(relaxation_drop(&basis_b, v)?);
            }
            let key = format!("{name}.z{k}");
            r.metric(format!("{key}.rank_b"), basis_b.rank as f64)?;
            r.metric(format!("{key}.vectors"), vectors.len() as f64)?;
            r.metric(format!("{key}.max_drop"), worst)?;
            r.require(format!("{key}.max_drop"), Cmp::AtMost, cfg.thresholds.relaxation_slack)?;
        }
    }
    Ok(r)
}

fn lambda_check(ctx: &Ctx) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new(Criterion::LambdaSweep.slug());
    for name in &ctx.cfg.lambda_generators {
        let g = find(ctx.zoo, name)?;
        let (a, b) = default_regions(g)?;
        let mut sub = lambda_sweep(g, &ctx.z(g, 0), &a, &b, &ctx.cfg.lambda_ns, 1.0, &ctx.cfg.settings)?;
        sub.require("null_dim_nondecreasing_in_n", Cmp::AtLeast, 1.0)?;
        r.absorb(name, &sub);
    }
    Ok(r)
}

/// Lossless round trips of every text and image format the tools emit.
fn tooling_check(ctx: &Ctx, done: &[CriterionResult]) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new(Criterion::Tooling.slug());
    let count = |r: &mut ExperimentReport, key: &str, checked: usize, failed: usize| -> Result<()> {
        r.metric(format!("{key}.checked"), checked as f64)?;
        r.metric(format!("{key}.failures"), failed as f64)?;
        r.require(format!("{key}.failures"), Cmp::AtMost, 0.0)?;
        r.require(format!("{key}.checked"), Cmp::AtLeast, 1.0)?;
        Ok(())
    };

    let mut failed = 0;
    for (_, g) in ctx.zoo {
        let text = g.save();
        if Generator::load(&text).map(|b| b.save() != text || b != *g).unwrap_or(true) {
            failed += 1;
        }
    }
    count(&mut r, "generator", ctx.zoo.len(), failed)?;

    let mut rng = seeded_stream(ctx.cfg.seed, Stream::Instance);
    let mut mats: Vec<Matrix> = (1..6).map(|k| normal_matrix(k, 7 - k, &mut rng)).collect();
    mats.push(Matrix::from_rows(&[vec![1e-300, -0.0, 5e-324], vec![f64::MAX, -f64::MIN_POSITIVE, 0.1]])?);
    let failed = mats
        .iter()
        .filter(|m| {
            Matrix::from_text(&m.to_text())
                .map(|b| b.as_slice().iter().zip(m.as_slice()).any(|(x, y)| x.to_bits() != y.to_bits()) || b.shape() != m.shape())
                .unwrap_or(true)
        })
        .count();
    count(&mut r, "matrix", mats.len(), failed)?;

    let mut checked = 0;
    let mut failed = 0;
    for (_, g) in ctx.zoo {
        let (_, b) = default_regions(g)?;
        let j = g.jacobian(&ctx.z(g, 0))?;
        let basis = attribute_basis(&region_gram(&j, &b)?, &b, &ctx.cfg.settings.pcp, ctx.cfg.settings.rank_tol)?;
        let text = basis.to_text();
        checked += 1;
        if AttributeBasis::from_text(&text, g.d_x()).map(|back| back != basis || back.to_text() != text).unwrap_or(true) {
            failed += 1;
        }
    }
    count(&mut r, "basis", checked, failed)?;

    let mut failed = 0;
    for res in done {
        let json = res.report.to_json();
        if ExperimentReport::from_json(&json).map(|b| b.to_json() != json).unwrap_or(true) {
            failed += 1;
        }
    }
    if !done.is_empty() {
        count(&mut r, "report", done.len(), failed)?;
    }

    let mut checked = 0;
    let mut failed = 0;
    for res in done {
        for art in res.report.artifacts.iter().filter(|a| a.ends_with(".pgm")) {
            checked += 1;
            let path = ctx.out.join(art);
            let ok = GrayImage::read(&path)
                .map(|img| {
                    let bytes = fs::read(&path).unwrap_or_default();
                    img.encode(PgmFormat::Binary) == bytes
                })
                .unwrap_or(false);
            if !ok {
                failed += 1;
            }
        }
    }
    if checked > 0 {
        count(&mut r, "image", checked, failed)?;
    }
    Ok(r)
}

/// Paths of all files a suite run writes below `out`, for comparisons.
pub fn written_files(out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for dir in ["reports", "images"] {
        let d = out.join(dir);
        if !d.exists() {
            continue;
        }
        for e in fs::read_dir(d)? {
            files.push(e?.path());
        }
    }
    files.sort();
    Ok(files)
}
