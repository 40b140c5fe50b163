use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use lorank::genzoo::{make_blocky, make_linear, make_linear_chain, make_linear_identity, make_mlp, zoo, Generator, LatentCode};
use lorank::harness::{masked_mse, region_mse, run_suite, GrayImage, Heatmap, PgmFormat, Selection, SuiteConfig};
use lorank::rpca::{PcpConfig, Penalty};
use lorank::subspace::{attribute_basis_with_solution, null_project, region_gram, AttributeBasis, ProjectionSpec, DEFAULT_RANK_TOL};

use crate::{region, CliError, Context, DiscoverArgs, EditArgs, GenArgs, ImageFormat, Kind, VerifyArgs};

type CmdResult = Result<ExitCode, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn prepare_out(ctx: &Context) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.out).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", ctx.out.display())))
}

/// Rejects flags that do not apply to `kind`.
fn forbid(kind: Kind, given: &[(&str, bool)]) -> Result<(), CliError> {
    match given.iter().find(|(_, set)| *set) {
        Some((flag, _)) => Err(usage(format!("--{flag} does not apply to --kind {kind:?}").to_lowercase())),
        None => Ok(()),
    }
}

fn check_stem(name: &str) -> Result<(), CliError> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(usage(format!("--name {name:?} must be a plain file stem")));
    }
    Ok(())
}

pub fn build_generator(a: &GenArgs, seed: u64) -> Result<Generator, CliError> {
    let dx = || a.dx.ok_or_else(|| usage(format!("--kind {:?} needs --dx", a.kind).to_lowercase()));
    let g = match a.kind {
        Kind::Linear => {
            forbid(a.kind, &[("grid", a.grid.is_some()), ("split", a.split.is_some()), ("coupling", a.coupling.is_some())])?;
            let dx = dx()?;
            match (a.identity, a.hidden.is_empty()) {
                (true, false) => return Err(usage("--identity cannot be combined with --hidden")),
                (true, true) => make_linear_identity(a.dz, dx)?,
                (false, true) => make_linear(a.dz, dx, seed)?,
                (false, false) => {
                    let widths: Vec<usize> = std::iter::once(a.dz).chain(a.hidden.iter().copied()).chain([dx]).collect();
                    make_linear_chain(&widths, seed)?
                }
            }
        }
        Kind::Mlp => {
            forbid(
                a.kind,
                &[
                    ("identity", a.identity),
                    ("grid", a.grid.is_some()),
                    ("split", a.split.is_some()),
                    ("coupling", a.coupling.is_some()),
                ],
            )?;
            let widths: Vec<usize> = std::iter::once(a.dz).chain(a.hidden.iter().copied()).chain([dx()?]).collect();
            make_mlp(&widths, seed)?
        }
        Kind::Blocky => {
            forbid(a.kind, &[("identity", a.identity), ("dx", a.dx.is_some()), ("hidden", !a.hidden.is_empty())])?;
            make_blocky(a.dz, a.grid.unwrap_or(16), a.split.unwrap_or(a.dz / 2), a.coupling.unwrap_or(0.0), seed)?
        }
    };
    Ok(g)
}

pub fn gen(ctx: &Context, a: &GenArgs) -> CmdResult {
    let name = a.name.clone().unwrap_or_else(|| format!("{:?}", a.kind).to_lowercase());
    check_stem(&name)?;
    let g = build_generator(a, ctx.seed)?;
    prepare_out(ctx)?;
    let path = ctx.out.join(format!("{name}.gen"));
    fs::write(&path, g.save())?;
    println!("wrote {}", path.display());
    println!(
        "kind {}  d_z {}  d_x {}  intrinsic_dim {}",
        g.kind().name(),
        g.d_z(),
        g.d_x(),
        g.intrinsic_dim()
    );
    for (k, s) in g.layer_shapes().iter().enumerate() {
        println!("layer {k}: {s}");
    }
    Ok(ExitCode::SUCCESS)
}

fn read_generator(path: &Path) -> Result<Generator, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    Generator::load(&text).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn read_basis(path: &Path, g: &Generator) -> Result<AttributeBasis, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    let b = AttributeBasis::from_text(&text, g.d_x()).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    if b.d_z() != g.d_z() {
        return Err(usage(format!(
            "{} has d_z = {} but the generator has d_z = {}",
            path.display(),
            b.d_z(),
            g.d_z()
        )));
    }
    Ok(b)
}

pub fn discover(ctx: &Context, a: &DiscoverArgs) -> CmdResult {
    check_stem(&a.name)?;
    let g = read_generator(&a.generator)?;
    let mask = region::resolve(&g, a.rect.as_deref(), a.indices.as_deref()).map_err(CliError::Usage)?;
    let mut cfg = PcpConfig::default();
    if let Some(n) = a.lambda_n {
        cfg = cfg.with_lambda_n(n);
    }
    if let Some(l) = a.lambda {
        cfg = cfg.with_lambda(l);
    }
    if let Some(mu) = a.mu {
        cfg.mu = Penalty::Fixed(mu);
    }
    if let Some(t) = a.rel_tol {
        cfg.rel_tol = t;
    }
    if let Some(n) = a.max_iter {
        cfg.max_iter = n;
    }
    cfg.validate()?;

    let z = LatentCode::sample(g.d_z(), ctx.seed);
    let gram = region_gram(&g.jacobian(&z)?, &mask)?;
    let (basis, sol) = attribute_basis_with_solution(&gram, &mask, &cfg, a.rank_tol.unwrap_or(DEFAULT_RANK_TOL))?;
    if !sol.converged {
        return Err(CliError::Failure(format!(
            "pcp did not converge in {} iterations (residual {:e}); raise --max-iter",
            sol.iterations, sol.final_residual
        )));
    }
    prepare_out(ctx)?;
    let path = ctx.out.join(format!("{}.basis", a.name));
    fs::write(&path, basis.to_text())?;
    let top: Vec<String> = basis.sigma.iter().take(5).map(|s| format!("{s:.6e}")).collect();
    println!("wrote {}", path.display());
    println!("region {} of {} outputs", mask.len(), g.d_x());
    println!("rank {} of d_z {} (null space {})", basis.rank, basis.d_z(), basis.null_dim());
    println!("top singular values {}", top.join(" "));
    println!(
        "pcp iterations {} residual {:e} lambda {:e} mu {:e}",
        sol.iterations, sol.final_residual, sol.lambda, sol.mu
    );
    Ok(ExitCode::SUCCESS)
}

pub fn edit(ctx: &Context, a: &EditArgs) -> CmdResult {
    check_stem(&a.name)?;
    if !a.alpha.is_finite() {
        return Err(usage("--alpha must be finite"));
    }
    let g = read_generator(&a.generator)?;
    let basis_a = read_basis(&a.basis_a, &g)?;
    if basis_a.rank == 0 {
        return Err(usage(format!("{} has rank 0: no attribute directions", a.basis_a.display())));
    }
    if a.attr >= basis_a.rank {
        return Err(usage(format!(
            "attribute index {} out of range: valid indices are 0..={} (rank {})",
            a.attr,
            basis_a.rank - 1,
            basis_a.rank
        )));
    }
    let mut direction = basis_a.direction(a.attr)?;
    match &a.basis_b {
        Some(path) => {
            let basis_b = read_basis(path, &g)?;
            if a.r_relax > basis_b.rank {
                return Err(usage(format!(
                    "--r-relax {} exceeds the rank {} of {}",
                    a.r_relax,
                    basis_b.rank,
                    path.display()
                )));
            }
            direction = null_project(&direction, &ProjectionSpec::new(basis_b, a.r_relax)?)?;
        }
        None if a.r_relax > 0 => return Err(usage("--r-relax needs --basis-b")),
        None => {}
    }

    let z = LatentCode::sample(g.d_z(), ctx.seed);
    let before = g.forward(&z)?;
    let after = g.forward(&z.shifted(&direction, a.alpha)?)?;
    let width = g.grid().unwrap_or(g.d_x());
    let fmt = match a.format {
        ImageFormat::Ascii => PgmFormat::Ascii,
        ImageFormat::Binary => PgmFormat::Binary,
    };
    prepare_out(ctx)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut save = |suffix: &str, img: GrayImage| -> Result<(), CliError> {
        let path = ctx.out.join(format!("{}_{suffix}.pgm", a.name));
        img.write(&path, fmt)?;
        written.push(path);
        Ok(())
    };
    save("before", GrayImage::auto_range(&before, width, &[&after])?)?;
    save("after", GrayImage::auto_range(&after, width, &[&before])?)?;
    save("heatmap", Heatmap::new(&before, &after, width)?.to_image())?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    let inside = region_mse(&before, &after, &basis_a.region)?;
    let outside = if basis_a.region.len() < g.d_x() {
        format!("{:e}", masked_mse(&before, &after, &basis_a.region)?)
    } else {
        "n/a".into()
    };
    println!("mse_inside_a {inside:e} mse_outside_a {outside}");
    Ok(ExitCode::SUCCESS)
}

/// Writes each zoo member as `<name>.gen` plus a P2 rendering at the
/// seed's latent code, `<name>.pgm`, for image generators.
pub fn write_fixtures(dir: &Path, members: &[(String, Generator)], seed: u64) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (name, g) in members {
        fs::write(dir.join(format!("{name}.gen")), g.save())?;
        if let Some(img) = fixture_image(g, seed)? {
            img.write(&dir.join(format!("{name}.pgm")), PgmFormat::Ascii)?;
        }
    }
    Ok(())
}

fn fixture_image(g: &Generator, seed: u64) -> Result<Option<GrayImage>, CliError> {
    let Some(grid) = g.grid() else { return Ok(None) };
    let x = g.forward(&LatentCode::sample(g.d_z(), seed))?;
    Ok(Some(GrayImage::auto_range(&x, grid, &[])?))
}

/// Loads every fixture and checks it against the zoo built from `seed`.
fn load_fixtures(dir: &Path, seed: u64) -> Result<Vec<(String, Generator)>, CliError> {
    let bad = |path: &Path, why: String| CliError::Failure(format!("fixture {}: {why}", path.display()));
    let mut loaded = Vec::new();
    for (name, expected) in zoo(seed)? {
        let path = dir.join(format!("{name}.gen"));
        let text = fs::read_to_string(&path).map_err(|e| bad(&path, e.to_string()))?;
        let g = Generator::load(&text).map_err(|e| bad(&path, e.to_string()))?;
        if g != expected {
            return Err(bad(&path, format!("does not match zoo member {name} for seed {seed}")));
        }
        if let Some(img) = fixture_image(&g, seed)? {
            let path = dir.join(format!("{name}.pgm"));
            let bytes = fs::read(&path).map_err(|e| bad(&path, e.to_string()))?;
            if bytes != img.encode(PgmFormat::Ascii) {
                return Err(bad(&path, "image differs from the generator's rendering".into()));
            }
        }
        loaded.push((name, g));
    }
    Ok(loaded)
}

pub fn verify(ctx: &Context, a: &VerifyArgs) -> CmdResult {
    let selection = match &a.only {
        Some(f) => f.parse::<Selection>()?,
        None => Selection::all(),
    };
    prepare_out(ctx)?;
    let dir = match &a.fixtures {
        Some(d) => d.clone(),
        None => {
            let d = ctx.out.join("fixtures");
            write_fixtures(&d, &zoo(ctx.seed)?, ctx.seed)?;
            d
        }
    };
    let members = load_fixtures(&dir, ctx.seed)?;
    let cfg = SuiteConfig {
        seed: ctx.seed,
        ..SuiteConfig::default()
    };
    let outcome = run_suite(&members, &cfg, &selection, &ctx.out)?;
    for r in &outcome.results {
        let status = if r.report.pass() { "PASS" } else { "FAIL" };
        println!("{status} {} ({} metrics)", r.criterion, r.report.metrics().len());
        for (t, v) in r.report.failures() {
            println!("     {t}, got {v:e}");
        }
    }
    println!("reports in {}", ctx.out.join("reports").display());
    if outcome.pass() {
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<String> = outcome
            .results
            .iter()
            .filter(|r| !r.report.pass())
            .map(|r| r.criterion.number().to_string())
            .collect();
        eprintln!("lorank: failed criteria: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
