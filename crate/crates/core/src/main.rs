use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use quomerge::bundle::{read_bundle, write_bundle, AdapterBundle};
use quomerge::frechet::{normalize_weights, FrechetConfig, InitStrategy};
use quomerge::merge::{distance_bundles, merge_bundles, LayerReport, MergeMode, MergeOptions};
use quomerge::quotient::RankPolicy;
use quomerge::selfcheck::run_selfcheck;
use quomerge::synth::{regauge, synth_family, LayerShape, SynthConfig};
use quomerge::toy::{
    emit_curves, toy_fim, toy_fisher_pathology, CurveSpec, ToyFisherInputs, ToyPoint,
};
use quomerge::{Error, Result};

/// Default seed for every command that draws random numbers.
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "quomerge", version, about = "Merge low-rank adapters on the polar quotient manifold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge adapter bundles layer by layer.
    Merge(MergeArgs),
    /// Per-layer quotient distance between two bundles (JSON).
    Distance(DistanceArgs),
    /// Closed-form two-parameter toy model.
    #[command(subcommand)]
    Toy(ToyCommand),
    /// Run the fast invariant suite.
    Selfcheck(SelfcheckArgs),
    /// Write synthetic low-rank bundles near a shared base point.
    Synth(SynthArgs),
    /// Copy a bundle with every layer re-expressed in a random gauge.
    Regauge(RegaugeArgs),
}

fn parse_mode(s: &str) -> std::result::Result<MergeMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitStrategy, String> {
    match s {
        "index" => Ok(InitStrategy::Index),
        "euclidean-svd" => Ok(InitStrategy::EuclideanSvd),
        _ => Err(format!("unknown init {s:?}; expected index or euclidean-svd")),
    }
}

fn parse_align_iters(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |x: &str| x.parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    match parts.as_slice() {
        [a] => Ok((num(a)?, num(a)?)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected FIRST,REST, got {s:?}")),
    }
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated numbers, got {s:?}"));
    }
    let x = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    Ok([x(parts[0])?, x(parts[1])?])
}

#[derive(Args)]
struct MergeArgs {
    /// Input bundle directories.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    inputs: Vec<PathBuf>,
    /// Nonnegative task weights, normalized to sum to one. Default uniform.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value = "geodesic", value_parser = parse_mode)]
    mode: MergeMode,
    /// Target rank R for the high-rank lift.
    #[arg(long)]
    rank_lift: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Inner alignment iterations as FIRST,REST.
    #[arg(long, default_value = "5,2", value_parser = parse_align_iters)]
    align_iters: (usize, usize),
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Task-arithmetic coefficient applied to the merged update.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "index", value_parser = parse_init)]
    init: InitStrategy,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print the JSON report on stdout.
    #[arg(long)]
    json: bool,
    /// Write the output even if some layer did not converge.
    #[arg(long)]
    allow_nonconverged: bool,
    /// Worker threads for per-layer merging.
    #[arg(long)]
    jobs: Option<usize>,
    /// Fail on rank-deficient inputs instead of clamping.
    #[arg(long)]
    strict_rank: bool,
}

#[derive(Args)]
struct DistanceArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Fisher merge of θ and −θ versus the predictor average (JSON).
    Pathology {
        #[arg(long, value_parser = parse_pair)]
        theta: [f64; 2],
        #[arg(long, default_value_t = 1.0)]
        sxx: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
    /// Closed-form geodesic samples on t in [0, t-max] (CSV).
    Geodesic {
        #[arg(long, value_parser = parse_pair)]
        from: [f64; 2],
        #[arg(long, value_parser = parse_pair)]
        vel: [f64; 2],
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orbit (θ₁eᵗ, θ₂e⁻ᵗ) samples on t in [-1, 1] (CSV).
    Orbit {
        #[arg(long, value_parser = parse_pair)]
        theta: [f64; 2],
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inputs, naive parameter average and predictor-average merge (CSV).
    Compare {
        /// Points as `a,b;c,d;...`.
        #[arg(long)]
        points: String,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Toy Fisher information matrix (JSON).
    Fim {
        #[arg(long, value_parser = parse_pair)]
        theta: [f64; 2],
        #[arg(long, default_value_t = 1.0)]
        sxx: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long)]
    json: bool,
    /// Force the named check to fail (harness testing).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory that receives `task-<i>` bundles.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    tasks: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 0.3)]
    spread: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Attach random diagonal Fisher tensors.
    #[arg(long)]
    fisher: bool,
}

#[derive(Args)]
struct RegaugeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'static str,
    inputs: Vec<String>,
    weights: Vec<f64>,
    mode: MergeMode,
    rank_lift: Option<usize>,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    align_iters: [usize; 2],
    tau: f64,
    scale: f64,
    seed: u64,
    init: InitStrategy,
    out: &'a Path,
}

#[derive(Serialize)]
struct Report<'a> {
    run: RunInfo<'a>,
    layers: &'a [LayerReport],
    totals: serde_json::Value,
}

fn cmd_merge(a: MergeArgs) -> Result<()> {
    let start = Instant::now();
    let inputs: Vec<AdapterBundle> = a.inputs.iter().map(read_bundle).collect::<Result<_>>()?;
    let weights = match &a.weights {
        Some(w) => normalize_weights(w)?,
        None => vec![1.0 / inputs.len() as f64; inputs.len()],
    };
    let opts = MergeOptions {
        mode: a.mode,
        weights: Some(weights.clone()),
        rank_lift: a.rank_lift,
        frechet: FrechetConfig {
            alpha: a.alpha,
            tol: a.tol,
            max_iter: a.max_iter,
            align_iters_first: a.align_iters.0,
            align_iters_rest: a.align_iters.1,
            tau: a.tau,
            init: a.init,
            ..FrechetConfig::default()
        },
        scale: a.scale,
        seed: a.seed,
        jobs: a.jobs,
        rank_policy: if a.strict_rank { RankPolicy::Strict } else { RankPolicy::Clamp },
        ..MergeOptions::default()
    };
    let outcome = merge_bundles(&inputs, &opts)?;
    for l in &outcome.layers {
        for w in &l.warnings {
            log::warn!("{}: {w}", l.name);
        }
    }
    let report = Report {
        run: RunInfo {
            command: "merge",
            inputs: a.inputs.iter().map(|p| p.display().to_string()).collect(),
            weights,
            mode: a.mode,
            rank_lift: a.rank_lift,
            alpha: a.alpha,
            tol: a.tol,
            max_iter: a.max_iter,
            align_iters: [a.align_iters.0, a.align_iters.1],
            tau: a.tau,
            scale: a.scale,
            seed: a.seed,
            init: a.init,
            out: &a.out,
        },
        layers: &outcome.layers,
        totals: json!({ "wall_time_ms": start.elapsed().as_millis() as u64 }),
    };
    let text = to_json(&report);
    if let Some(p) = &a.report {
        write_atomic(p, text.as_bytes())?;
    }
    if a.json {
        emit_text(&text, None)?;
    }
    outcome.require_converged(a.allow_nonconverged)?;
    write_bundle(&outcome.bundle, &a.out)
}

fn cmd_distance(a: DistanceArgs) -> Result<()> {
    let x = read_bundle(&a.a)?;
    let y = read_bundle(&a.b)?;
    let d = distance_bundles(&x, &y, RankPolicy::Clamp)?;
    let layers: Vec<_> = d.iter().map(|(n, v)| json!({ "name": n, "distance": v })).collect();
    emit_text(&to_json(&json!({ "layers": layers })), None)
}

fn point(p: [f64; 2]) -> Result<ToyPoint> {
    ToyPoint::new(p[0], p[1])
}

fn cmd_toy(c: ToyCommand) -> Result<()> {
    match c {
        ToyCommand::Pathology { theta, sxx, sigma2 } => {
            let r = toy_fisher_pathology(&point(theta)?, &ToyFisherInputs::new(sxx, sigma2)?)?;
            emit_text(&to_json(&r), None)
        }
        ToyCommand::Fim { theta, sxx, sigma2 } => {
            let f = toy_fim(&point(theta)?, &ToyFisherInputs::new(sxx, sigma2)?);
            emit_text(&to_json(&json!({ "fim": f })), None)
        }
        ToyCommand::Geodesic {
            from,
            vel,
            steps,
            t_max,
            out,
        } => {
            let curve = emit_curves(
                &CurveSpec::Geodesic {
                    from: point(from)?,
                    vel,
                    t_max,
                },
                steps,
            )?;
            for (t, msg) in &curve.skipped {
                eprintln!("t = {t}: {msg}");
            }
            emit_text(&curve.to_csv(), out.as_deref())
        }
        ToyCommand::Orbit { theta, steps, out } => {
            let curve = emit_curves(&CurveSpec::Orbit { theta: point(theta)? }, steps)?;
            emit_text(&curve.to_csv(), out.as_deref())
        }
        ToyCommand::Compare { points, weights, out } => {
            let pts: Vec<ToyPoint> = points
                .split(';')
                .map(|s| parse_pair(s).map_err(Error::Config).and_then(point))
                .collect::<Result<_>>()?;
            let weights = match weights {
                Some(w) => normalize_weights(&w)?,
                None => vec![1.0 / pts.len() as f64; pts.len()],
            };
            let curve = emit_curves(&CurveSpec::MergeComparison { points: pts, weights }, 2)?;
            emit_text(&curve.to_csv(), out.as_deref())
        }
    }
}

fn cmd_selfcheck(a: SelfcheckArgs) -> Result<bool> {
    let results = run_selfcheck(a.corrupt.as_deref());
    let ok = results.iter().all(|r| r.passed);
    if a.json {
        emit_text(&to_json(&json!({ "passed": ok, "checks": results })), None)?;
    } else {
        let mut text = String::new();
        for r in &results {
            text.push_str(&format!(
                "{:<34} {}  value {:.3e}  tol {:.1e}\n",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.value,
                r.tolerance
            ));
        }
        emit_text(&text, None)?;
    }
    for r in results.iter().filter(|r| !r.passed) {
        eprintln!("selfcheck failed: {}", r.name);
    }
    Ok(ok)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        layers: (0..a.layers)
            .map(|i| LayerShape {
                name: format!("layer{i}"),
                d_out: a.d,
                d_in: a.d,
                rank: a.rank,
            })
            .collect(),
        tasks: a.tasks,
        spread: a.spread,
        seed: a.seed,
        with_fisher: a.fisher,
    };
    let bundles = synth_family(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for b in &bundles {
        write_bundle(b, a.out.join(&b.name))?;
    }
    Ok(())
}

fn cmd_regauge(a: RegaugeArgs) -> Result<()> {
    let b = read_bundle(&a.input)?;
    write_bundle(&regauge(&b, a.seed)?, &a.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Merge(a) => cmd_merge(a),
        Command::Distance(a) => cmd_distance(a),
        Command::Toy(c) => cmd_toy(c),
        Command::Selfcheck(a) => match cmd_selfcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Synth(a) => cmd_synth(a),
        Command::Regauge(a) => cmd_regauge(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
