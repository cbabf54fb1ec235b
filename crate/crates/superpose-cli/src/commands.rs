//! The `build`, `solve` and `eval` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use superpose::arith::{q, q_from_f64, q_to_string, Q};
use superpose::cover::{build_level, plan_levels_with, verify_cover, CoverReport};
use superpose::exhaustion::{build_exhaustion, DomainSpec};
use superpose::functions::lookup;
use superpose::inner::{dump_inner, verify_ladder, Ladder, LadderReport};
use superpose::model::{self, config_hash, SolveOptions, SuperpositionModel};

use crate::config::RunConfig;
use crate::CliError;

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, &text)
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))
}

/// Uniform dyadic points (denominator 2²⁴) in `[−radius, radius]ⁿ`.
fn sample_points(rng: &mut ChaCha8Rng, n: usize, radius: i64, count: usize) -> Vec<Vec<Q>> {
    const SCALE: i64 = 1 << 24;
    (0..count)
        .map(|_| (0..n).map(|_| q(rng.gen_range(-radius * SCALE..=radius * SCALE), SCALE)).collect())
        .collect()
}

#[derive(Serialize)]
struct CheckJson {
    property: Option<u8>,
    name: &'static str,
    status: &'static str,
    checked: u64,
    witness: Option<String>,
}

fn status(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}

#[derive(Serialize)]
struct CoverLevelJson {
    level: u32,
    properties: Vec<CheckJson>,
}

#[derive(Serialize)]
struct LadderJson {
    levels: u32,
    samples: usize,
    checks: Vec<CheckJson>,
}

#[derive(Serialize)]
struct VerifyJson {
    n: usize,
    kmax: u32,
    config_hash: String,
    passed: bool,
    cover: Vec<CoverLevelJson>,
    ladder: LadderJson,
}

#[derive(Serialize)]
struct BufferJson {
    m: i64,
    eta: String,
}

#[derive(Serialize)]
struct CoverLevelFile {
    k: u32,
    gamma: String,
    epsilon: String,
    period: String,
    primes: Vec<String>,
    slot: String,
    side: String,
    gap: String,
    offsets: Vec<String>,
    buffers: Vec<BufferJson>,
}

#[derive(Serialize)]
struct CoverFile {
    n: usize,
    families: usize,
    levels: Vec<CoverLevelFile>,
}

fn cover_checks(rep: &CoverReport) -> Vec<CheckJson> {
    rep.checks
        .iter()
        .map(|c| CheckJson {
            property: Some(c.property),
            name: c.name,
            status: status(c.passed),
            checked: c.checked,
            witness: c.witness.clone(),
        })
        .collect()
}

fn ladder_checks(rep: &LadderReport) -> Vec<CheckJson> {
    rep.checks
        .iter()
        .map(|c| CheckJson {
            property: None,
            name: c.name,
            status: status(c.passed),
            checked: c.checked,
            witness: c.witness.clone(),
        })
        .collect()
}

/// Build the nominal level covers and the inner-function ladder, verify
/// both, and write the artifacts.
pub fn build(cfg: &RunConfig, out: &Path, verify_only: bool) -> Result<(), CliError> {
    create_dir(out)?;
    let n = cfg.n;
    let ex = build_exhaustion(DomainSpec::full_space(n)).map_err(|e| CliError::Config(e.to_string()))?;
    let eps1 = q_from_f64(cfg.eps1).ok_or_else(|| CliError::Config("ε_1 is not finite".into()))?;
    let plan = plan_levels_with(n, cfg.kmax, &eps1, &q(1, 4))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut first_failure: Option<String> = None;
    let mut cover_json = Vec::new();
    let mut cover_file = Vec::new();
    for params in plan {
        let k = params.k;
        let cover = build_level(&ex, params.clone())?;
        let samples = sample_points(&mut rng, n, k as i64 + 2, cfg.samples);
        let rep = verify_cover(&cover, &ex, &samples);
        print!("{rep}");
        if let (None, Some(c)) = (&first_failure, rep.first_failure()) {
            first_failure = Some(format!(
                "cover level {k}: property {} ({}) failed: {}",
                c.property,
                c.name,
                c.witness.as_deref().unwrap_or("no witness")
            ));
        }
        cover_json.push(CoverLevelJson { level: k, properties: cover_checks(&rep) });
        let grid = cover.grid();
        cover_file.push(CoverLevelFile {
            k,
            gamma: q_to_string(&params.gamma),
            epsilon: q_to_string(&params.epsilon),
            period: q_to_string(&params.period),
            primes: params.primes.iter().map(|p| p.to_string()).collect(),
            slot: q_to_string(grid.slot()),
            side: q_to_string(grid.side()),
            gap: q_to_string(&grid.gap()),
            offsets: (0..grid.families()).map(|i| q_to_string(&grid.offset(i))).collect(),
            buffers: cover
                .etas()
                .iter()
                .map(|(m, eta)| BufferJson { m: *m, eta: q_to_string(eta) })
                .collect(),
        });
    }

    let ladder = Ladder::new(cfg.ladder()?)?;
    let ladder_samples = (cfg.samples / 10).max(1);
    let samples = sample_points(&mut rng, n, ladder.config().radius, ladder_samples);
    let lrep = verify_ladder(&ladder, cfg.inner_levels, &samples)?;
    for c in &lrep.checks {
        println!(
            "inner levels 1..{} {}: {} [{} checks]{}",
            lrep.levels,
            c.name,
            status(c.passed),
            c.checked,
            c.witness.as_deref().map(|w| format!(" witness: {w}")).unwrap_or_default()
        );
    }
    if let (None, Some(c)) = (&first_failure, lrep.first_failure()) {
        first_failure = Some(format!(
            "inner functions: {} failed: {}",
            c.name,
            c.witness.as_deref().unwrap_or("no witness")
        ));
    }

    let verify = VerifyJson {
        n,
        kmax: cfg.kmax,
        config_hash: config_hash(&cfg.canonical()),
        passed: first_failure.is_none(),
        cover: cover_json,
        ladder: LadderJson { levels: lrep.levels, samples: ladder_samples, checks: ladder_checks(&lrep) },
    };
    write_json(&out.join("verify.json"), &verify)?;
    if !verify_only {
        write_json(&out.join("cover.json"), &CoverFile { n, families: 2 * n + 1, levels: cover_file })?;
        for i in 0..ladder.families() {
            let dump = dump_inner(&ladder, i, cfg.inner_levels)?;
            write_json(&out.join(format!("inner_{}.json", i + 1)), &dump)?;
        }
    }
    match first_failure {
        Some(msg) => Err(CliError::Failed(msg)),
        None => Ok(()),
    }
}

/// Solve for the coordinate functions, certify on the window and write
/// model.json and residuals.csv.
pub fn solve(cfg: &RunConfig, out: &Path, verify_only: bool) -> Result<(), CliError> {
    let f = lookup(&cfg.function, cfg.n, &cfg.fn_params)?;
    let provenance = cfg.canonical();
    if verify_only {
        let model = SuperpositionModel::load(&out.join("model.json"))?;
        if model.config_hash() != config_hash(&provenance) {
            return Err(CliError::Failed("model.json was produced by a different configuration".into()));
        }
        let fresh = model.recheck(&f)?;
        for (c, e) in model.cert().iter().zip(&fresh) {
            println!("certificate on [-{}, {}]^{}: stored {:e}, recomputed {:e}", c.radius, c.radius, cfg.n, c.sup_error, e);
            if *e != c.sup_error {
                return Err(CliError::Failed(format!(
                    "certificate mismatch: stored {:e}, recomputed {:e}",
                    c.sup_error, e
                )));
            }
        }
        return Ok(());
    }
    create_dir(out)?;
    let opts = SolveOptions {
        ladder: cfg.ladder()?,
        sweep: cfg.sweep()?,
        s_max: cfg.s_max(),
        window: cfg.window,
        pitch: cfg.pitch(),
        provenance,
    };
    let report = model::solve(&f, &opts)?;
    report.model.save(&out.join("model.json"))?;
    let mut csv = String::from("s,sweep,residual_sup\n");
    for sol in &report.solutions {
        for r in &sol.history {
            writeln!(csv, "{},{},{}", r.s, r.sweep, r.residual_sup).expect("string write");
        }
    }
    write_file(&out.join("residuals.csv"), &csv)?;
    let sweeps: usize = report.model.annuli().iter().map(|a| a.sweeps).sum();
    println!("basis functions: {}", report.model.families());
    println!("annuli: {}, sweeps: {sweeps}", report.solutions.len());
    println!("certified sup error on [-{w}, {w}]^{}: {:e}", cfg.n, report.certified_error, w = cfg.window);
    for e in &report.failures {
        eprintln!("{e}");
    }
    match report.failures.first() {
        Some(e) => Err(CliError::Failed(e.to_string())),
        None => Ok(()),
    }
}

fn parse_points(text: &str, n: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Input(format!("points line {}: {e}", lineno + 1)))?;
        if coords.len() != n {
            return Err(CliError::Input(format!(
                "points line {}: expected {n} coordinates, got {}",
                lineno + 1,
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Input(format!("points line {}: coordinates must be finite", lineno + 1)));
        }
        points.push(coords);
    }
    Ok(points)
}

/// Evaluate a model at the given points; write eval.csv with columns
/// `x,f(x),F(x),|diff|` and a final `max` row.
pub fn eval(
    model_path: &Path,
    points: Option<&Path>,
    uniform: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let model = SuperpositionModel::load(model_path)?;
    let cfg: RunConfig = serde_json::from_str(model.provenance())
        .map_err(|e| CliError::Input(format!("model provenance is not a run configuration: {e}")))?;
    let f = lookup(&cfg.function, cfg.n, &cfg.fn_params)?;
    let n = model.n();
    let pts = match (points, uniform) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            parse_points(&text, n)?
        }
        (None, Some(count)) => {
            let r = model
                .certified_radius()
                .ok_or_else(|| CliError::Input("model has no certified region".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.seed));
            (0..count).map(|_| (0..n).map(|_| rng.gen_range(-r..=r)).collect()).collect()
        }
        (None, None) => return Err(CliError::Input("give --points or --uniform".into())),
    };
    let f = Arc::clone(&f);
    let mut csv = String::from("x,f(x),F(x),|diff|\n");
    let mut max_diff: Option<f64> = None;
    let mut uncertified = 0usize;
    for x in &pts {
        let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        let fx = f(x);
        if model.is_certified(x) {
            let big_f = model.reconstruct(x, cfg.tol)?;
            let diff = (fx - big_f).abs();
            max_diff = Some(max_diff.map_or(diff, |m| m.max(diff)));
            writeln!(csv, "{},{fx},{big_f},{diff}", xs.join(";")).expect("string write");
        } else {
            uncertified += 1;
            writeln!(csv, "{},{fx},uncertified,uncertified", xs.join(";")).expect("string write");
        }
    }
    if let Some(m) = max_diff {
        writeln!(csv, "max,,,{m}").expect("string write");
    }
    create_dir(out)?;
    write_file(&out.join("eval.csv"), &csv)?;
    println!("points: {}, uncertified: {uncertified}", pts.len());
    if let Some(m) = max_diff {
        println!("max |f - F|: {m:e}");
        if let Some(c) = model.cert().iter().map(|c| c.sup_error).reduce(f64::max) {
            println!("certificate: {c:e}");
        }
    }
    Ok(())
}
