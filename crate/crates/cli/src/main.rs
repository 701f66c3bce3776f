//! Command-line front end: flux runs, convergence tables, seed
//! classification, identity checks and cycle export for the preset problems.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lfc3d::cycle::{build_generating_cycle, export_cycle_mesh, ExportFormat, GeneratingCycleMesh};
use lfc3d::degree::{fluxing_index_oracle, DegreeClassifier};
use lfc3d::fields::{make_preset_with, Preset, PresetCase, PresetOptions};
use lfc3d::lfc::{convergence_study, lfc3d_flux_case, reference_flux, relative_difference, verify_identities, FluxResult, LfcParams, VerifyOptions};
use lfc3d::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "lfc3d", version, about = "Lagrangian flux calculation through moving surfaces")]
struct Cli {
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, global = true, env = "LFC3D_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flux through a preset surface, as JSON.
    Flux(RunArgs),
    /// Errors and rates over a doubling sequence of node counts, as CSV.
    Convergence(RunArgs),
    /// Fluxing index vs topological degree at random seeds, as CSV.
    Classify(RunArgs),
    /// Oracle, cycle integral and donating-region agreement, as JSON.
    Verify(RunArgs),
    /// The generating cycle as a VTK or OBJ mesh.
    ExportCycle(RunArgs),
    /// List the built-in problems.
    Presets,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MeshFormat {
    Vtk,
    Obj,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Built-in problem; see `lfc3d presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Spline order; a comma list for `convergence`.
    #[arg(long, value_delimiter = ',')]
    kappa: Vec<usize>,
    /// Sets both space and time node counts; a comma list for `convergence`.
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// Time node count, if it should differ from `--nodes`.
    #[arg(long)]
    nodes_t: Option<usize>,
    /// Lower limit ξ of the inner x-antiderivative.
    #[arg(long)]
    xi: Option<f64>,
    /// Period T of the LeVeque flow.
    #[arg(long)]
    period: Option<f64>,
    /// Time interval as `t0,te`.
    #[arg(long, value_delimiter = ',')]
    interval: Vec<f64>,
    /// Replace the preset scalar with f = 1.
    #[arg(long)]
    unit_scalar: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<MeshFormat>,
    /// Monte Carlo samples (`verify`) or seed points (`classify`).
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed for sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Tessellation resolution per patch edge.
    #[arg(long)]
    resolution: Option<usize>,
    /// Also check the divergence theorem with this many Gauss points per axis.
    #[arg(long)]
    divergence_points: Option<usize>,
    /// Also check the transport theorem at this time.
    #[arg(long)]
    transport_time: Option<f64>,
    /// Skip the reference flux in `flux` output.
    #[arg(long)]
    no_reference: bool,
    /// TOML file with defaults for any of the above; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    kappa: Option<OneOrMany>,
    nodes: Option<OneOrMany>,
    nodes_t: Option<usize>,
    xi: Option<f64>,
    period: Option<f64>,
    interval: Option<[f64; 2]>,
    unit_scalar: Option<bool>,
    out: Option<PathBuf>,
    format: Option<MeshFormat>,
    samples: Option<usize>,
    seed: Option<u64>,
    resolution: Option<usize>,
    divergence_points: Option<usize>,
    transport_time: Option<f64>,
    threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Gate(String),
}

impl From<lfc3d::Error> for CliError {
    fn from(e: lfc3d::Error) -> Self {
        if e.is_numerical_gate() {
            CliError::Gate(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Validation(format!("i/o: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

/// Flags merged over the config file, with command defaults applied.
struct Settings {
    preset: String,
    preset_options: PresetOptions,
    kappa: Vec<usize>,
    nodes: Vec<usize>,
    nodes_t: Option<usize>,
    xi: f64,
    out: Option<PathBuf>,
    format: MeshFormat,
    samples: Option<usize>,
    seed: u64,
    resolution: Option<usize>,
    divergence_points: Option<usize>,
    transport_time: Option<f64>,
    threads: Option<usize>,
    no_reference: bool,
}

impl Settings {
    fn resolve(args: RunArgs, threads: Option<usize>) -> CliResult<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let pick = |flag: Vec<usize>, file: Option<OneOrMany>, default: Vec<usize>| {
            if !flag.is_empty() {
                flag
            } else {
                file.map(OneOrMany::into_vec).unwrap_or(default)
            }
        };
        let preset = args
            .preset
            .or(file.preset)
            .ok_or_else(|| CliError::Validation("missing --preset".into()))?;
        let interval = match args.interval.as_slice() {
            [t0, te] => Some((*t0, *te)),
            [] => file.interval.map(|[t0, te]| (t0, te)),
            _ => return Err(CliError::Validation("--interval takes exactly two values t0,te".into())),
        };
        Ok(Settings {
            preset,
            preset_options: PresetOptions {
                period: args.period.or(file.period),
                interval,
                unit_scalar: args.unit_scalar || file.unit_scalar.unwrap_or(false),
            },
            kappa: pick(args.kappa, file.kappa, vec![4]),
            nodes: pick(args.nodes, file.nodes, vec![32]),
            nodes_t: args.nodes_t.or(file.nodes_t),
            xi: args.xi.or(file.xi).unwrap_or(0.0),
            out: args.out.or(file.out),
            format: args.format.or(file.format).unwrap_or(MeshFormat::Vtk),
            samples: args.samples.or(file.samples),
            seed: args.seed.or(file.seed).unwrap_or(0),
            resolution: args.resolution.or(file.resolution),
            divergence_points: args.divergence_points.or(file.divergence_points),
            transport_time: args.transport_time.or(file.transport_time),
            threads: threads.or(file.threads),
            no_reference: args.no_reference,
        })
    }

    fn case(&self) -> CliResult<PresetCase> {
        Ok(make_preset_with(&self.preset, &self.preset_options)?)
    }

    fn single(list: &[usize], name: &str) -> CliResult<usize> {
        match list {
            [v] => Ok(*v),
            _ => Err(CliError::Validation(format!("--{name} takes a single value for this command, got {list:?}"))),
        }
    }

    fn params(&self) -> CliResult<LfcParams> {
        let kappa = Self::single(&self.kappa, "kappa")?;
        check_kappa(kappa)?;
        let nodes = Self::single(&self.nodes, "nodes")?;
        if nodes == 0 || self.nodes_t == Some(0) {
            return Err(CliError::Validation("node counts must be positive".into()));
        }
        Ok(LfcParams {
            kappa,
            n_node_s: nodes,
            n_node_t: self.nodes_t.unwrap_or(nodes),
            xi: self.xi,
        })
    }

    fn mesh(&self, case: &PresetCase) -> CliResult<GeneratingCycleMesh> {
        let p = self.params()?;
        let h = 1.0 / p.n_node_s as f64;
        let dt = (case.te - case.t0) / p.n_node_t as f64;
        Ok(build_generating_cycle(&case.velocity, &case.surface, case.t0, case.te, h, dt, p.kappa)?)
    }
}

fn check_kappa(kappa: usize) -> CliResult<()> {
    if matches!(kappa, 2 | 4 | 6) {
        Ok(())
    } else {
        Err(CliError::Validation(format!("--kappa must be 2, 4 or 6, got {kappa}")))
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display()))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct FluxReport {
    preset: String,
    params: LfcParams,
    result: FluxResult,
    reference: Option<f64>,
    relative_error: Option<f64>,
}

fn run_flux(s: &Settings) -> CliResult<()> {
    let case = s.case()?;
    let params = s.params()?;
    let result = lfc3d_flux_case(&case, &params)?;
    let reference = if s.no_reference { None } else { Some(reference_flux(&case)?) };
    let report = FluxReport {
        preset: case.name.clone(),
        params,
        relative_error: reference.map(|r| relative_difference(result.value, r)),
        result,
        reference,
    };
    emit(s.out.as_deref(), &to_json(&report))
}

#[derive(Serialize)]
struct ConvergenceCsvRow {
    case: String,
    reference: f64,
    kappa: usize,
    h: f64,
    value: f64,
    #[serde(rename = "E")]
    error: f64,
    rate: f64,
    flagged: bool,
}

fn run_convergence(s: &Settings) -> CliResult<()> {
    let case = s.case()?;
    for &k in &s.kappa {
        check_kappa(k)?;
    }
    if s.nodes.len() < 2 || s.nodes.contains(&0) {
        return Err(CliError::Validation("--nodes needs at least two positive, doubling counts".into()));
    }
    let table = convergence_study(&case, &s.kappa, &s.nodes)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table.rows {
        w.serialize(ConvergenceCsvRow {
            case: table.case.clone(),
            reference: table.reference,
            kappa: r.kappa,
            h: r.h,
            value: r.value,
            error: r.error,
            rate: r.rate,
            flagged: r.flagged,
        })
        .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?;
    emit(s.out.as_deref(), &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Serialize)]
struct SeedRow {
    seed_id: usize,
    x: f64,
    y: f64,
    z: f64,
    method: &'static str,
    index: Option<i32>,
    agreement: bool,
    degenerate: bool,
}

/// Pathline samples per unit time for the crossing oracle.
const PATHLINE_SAMPLING: f64 = 400.0;

fn run_classify(s: &Settings) -> CliResult<()> {
    let case = s.case()?;
    let mesh = s.mesh(&case)?;
    let resolution = s.resolution.unwrap_or_else(|| DegreeClassifier::default_resolution(&mesh));
    let classifier = DegreeClassifier::new(&mesh, resolution, 5, s.seed)?;
    let (lo, hi) = classifier.bounding_box();
    let count = s.samples.unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let seeds: Vec<Point> = (0..count)
        .map(|_| Point::from_fn(|i, _| rng.gen_range(lo[i]..hi[i])))
        .collect();
    let k = case.te - case.t0;

    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, p) in seeds.iter().enumerate() {
        let oracle = match fluxing_index_oracle(&case.velocity, &case.surface, case.t0, k, p, PATHLINE_SAMPLING) {
            Ok(fi) if fi.crossings.iter().any(|c| c.near_boundary) => (Some(fi.index), true),
            Ok(fi) => (Some(fi.index), false),
            Err(e) if e.is_numerical_gate() => return Err(e.into()),
            Err(_) => (None, true),
        };
        let degree = match classifier.degree(p) {
            Ok(d) => (Some(d), false),
            Err(lfc3d::Error::Degenerate { .. }) => (None, true),
            Err(e) => return Err(e.into()),
        };
        let agreement = oracle.0.is_some() && oracle.0 == degree.0;
        for (method, (index, degenerate)) in [("oracle", oracle), ("degree", degree)] {
            w.serialize(SeedRow {
                seed_id: id,
                x: p.x,
                y: p.y,
                z: p.z,
                method,
                index,
                agreement,
                degenerate,
            })
            .map_err(|e| CliError::Validation(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?;
    emit(s.out.as_deref(), &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn run_verify(s: &Settings) -> CliResult<()> {
    let case = s.case()?;
    let params = s.params()?;
    let mut opts = VerifyOptions::new(params.kappa, params.n_node_s);
    opts.params = params;
    opts.seed = s.seed;
    opts.resolution = s.resolution;
    opts.divergence_points = s.divergence_points;
    opts.transport_time = s.transport_time;
    if let Some(n) = s.samples {
        opts.mc_samples = n;
    }
    let report = verify_identities(&case, &opts)?;
    emit(s.out.as_deref(), &to_json(&report))?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.comparisons.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Gate(format!("identity check failed: {}", failed.join(", "))))
    }
}

fn run_export(s: &Settings) -> CliResult<()> {
    let case = s.case()?;
    let mesh = s.mesh(&case)?;
    let format = match s.format {
        MeshFormat::Vtk => ExportFormat::Vtk,
        MeshFormat::Obj => ExportFormat::Obj,
    };
    let text = export_cycle_mesh(&mesh, format, s.resolution.unwrap_or(8))?;
    emit(s.out.as_deref(), &text)
}

fn run_presets() -> CliResult<()> {
    let mut out = String::new();
    for p in Preset::ALL {
        out.push_str(&format!("{:<22} {}\n", p.name(), p.description()));
    }
    emit(None, &out)
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (args, job): (RunArgs, fn(&Settings) -> CliResult<()>) = match cli.command {
        Command::Presets => {
            configure_threads(cli.threads)?;
            return run_presets();
        }
        Command::Flux(a) => (a, run_flux),
        Command::Convergence(a) => (a, run_convergence),
        Command::Classify(a) => (a, run_classify),
        Command::Verify(a) => (a, run_verify),
        Command::ExportCycle(a) => (a, run_export),
    };
    let settings = Settings::resolve(args, cli.threads)?;
    configure_threads(settings.threads)?;
    job(&settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Gate(msg)) => {
            eprintln!("numerical gate failed: {msg}");
            ExitCode::from(2)
        }
    }
}
