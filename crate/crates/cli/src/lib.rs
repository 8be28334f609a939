//! Command-line front end. Every subcommand writes one table, as CSV (default) or JSON,
//! to standard output or `--out`. Failures print a JSON diagnostic on standard error and
//! exit with 2 (invalid input) or 3 (a solver could not deliver).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ozlab::crossover::{self, CrossoverOptions, NcglOptions};
use ozlab::kernel::Point;
use ozlab::lattice::{self, GreenEval, QuadratureOptions, SeriesOptions, Susceptibility};
use ozlab::numeric::MemoryCap;
use ozlab::{wulff, Error, Kernel};

#[derive(Parser, Debug)]
#[command(name = "ozlab", version, about = "Ornstein-Zernike asymptotics for lattice random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file (default: standard output). CSV tables from `crossover` also write
    /// run metadata to `<out>.meta.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct KernelArgs {
    /// Named kernel: nn, linf_box, perturbed_nn, saturation_1d.
    #[arg(long, conflicts_with = "kernel_file")]
    kernel: Option<String>,
    /// Kernel description in JSON.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
    /// Dimension of a named kernel (implied for perturbed_nn and saturation_1d).
    #[arg(long)]
    d: Option<usize>,
    /// Diagonal weight of perturbed_nn.
    #[arg(long)]
    alpha: Option<f64>,
    /// Power of saturation_1d.
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Auto,
    Series,
    Quadrature,
    Exact,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mass m_z, the decay rate along a coordinate axis.
    Mass {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
    },
    /// Direction-dependent norm |x|_z.
    Norm {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, value_parser = parse_reals)]
        x: Vec<Vec<f64>>,
    },
    /// Optimal tilt, Lagrange multiplier, drift and covariance for a direction.
    Tilt {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, value_parser = parse_reals)]
        x: ::std::vec::Vec<f64>,
    },
    /// Boundary of the tilt domain (d = 2), columns theta,mu_1,mu_2.
    Wulff {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Unit ball of |.|_z (d = 2), columns theta,x_1,x_2.
    Ball {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Lattice Green function S_z(x).
    Green {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        /// Lattice point; repeat for several.
        #[arg(long, value_parser = parse_ints, required = true)]
        x: Vec<Point>,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
        /// Absolute tolerance (series) or relative tolerance (quadrature).
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Quadrature points per axis, a power of two.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Tilted susceptibility 1 / (1 - z D^(mu)(0)).
    Chi {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, value_parser = parse_reals)]
        mu: Option<::std::vec::Vec<f64>>,
    },
    /// Correlation length of order phi.
    Xi {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 2.0)]
        phi: f64,
        /// Relative tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Crossover table: lattice oracle against C(x; eta, Lambda) e^{-m|x|}.
    Crossover {
        #[command(flatten)]
        k: KernelArgs,
        #[command(flatten)]
        pts: PointArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 0.5)]
        s0: f64,
        /// Skip the comparison with a second oracle.
        #[arg(long)]
        no_cross_check: bool,
    },
    /// Ornstein-Zernike asymptote next to the crossover prediction.
    Oz {
        #[command(flatten)]
        k: KernelArgs,
        #[command(flatten)]
        pts: PointArgs,
        #[arg(long)]
        z: f64,
    },
    /// Oracle over the crossover envelope.
    Envelope {
        #[command(flatten)]
        k: KernelArgs,
        #[command(flatten)]
        pts: PointArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 10.0)]
        bound: f64,
        #[arg(long, default_value_t = 0.5)]
        s0: f64,
    },
    /// Critical scaling profile along a sequence of z approaching 1.
    CriticalDecay {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long, value_parser = parse_reals)]
        zs: ::std::vec::Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
    },
    /// Tilted torus integral against the Brownian Green function.
    Ncgl {
        #[command(flatten)]
        k: KernelArgs,
        #[command(flatten)]
        pts: PointArgs,
        #[arg(long)]
        z: f64,
        /// Tilt; defaults to the optimal tilt for the first point's direction.
        #[arg(long, value_parser = parse_reals)]
        mu: Option<::std::vec::Vec<f64>>,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Saturation diagnostics for saturation_1d.
    Saturation {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 30)]
        xmax: usize,
    },
    /// |x|_z over a grid of z, flagging values outside the range of its limits.
    ScanMonotone {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long, value_parser = parse_reals)]
        x: ::std::vec::Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        zmin: f64,
        #[arg(long, default_value_t = 0.99)]
        zmax: f64,
        #[arg(long, default_value_t = 98)]
        steps: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Moment and infrared estimates of the tilted kernel.
    Qcheck {
        #[command(flatten)]
        k: KernelArgs,
        #[arg(long)]
        z: f64,
        #[arg(long, value_parser = parse_reals)]
        mu: Option<::std::vec::Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        zeta: f64,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    /// Lattice point; repeat for several.
    #[arg(long, value_parser = parse_ints)]
    x: Vec<Point>,
    /// Direction of a ray of points n * ray, with `--nmin..=--nmax`.
    #[arg(long, value_parser = parse_ints)]
    ray: Option<Point>,
    #[arg(long, default_value_t = 1)]
    nmin: i64,
    #[arg(long, default_value_t = 10)]
    nmax: i64,
}

impl PointArgs {
    fn points(&self) -> Result<Vec<Point>, Error> {
        let mut pts = self.x.clone();
        if let Some(r) = &self.ray {
            if self.nmin > self.nmax {
                return Err(Error::InvalidParameter("nmin exceeds nmax".into()));
            }
            pts.extend((self.nmin..=self.nmax).map(|n| r.iter().map(|v| v * n).collect()));
        }
        if pts.is_empty() {
            return Err(Error::InvalidParameter("give --x or --ray".into()));
        }
        Ok(pts)
    }
}

fn parse_reals(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn parse_ints(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|t| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn build_kernel(k: &KernelArgs) -> Result<Kernel, Error> {
    if let Some(path) = &k.kernel_file {
        return Kernel::from_json_file(path);
    }
    let Some(name) = &k.kernel else {
        return Err(Error::InvalidParameter("give --kernel or --kernel-file".into()));
    };
    let d = match (k.d, name.as_str()) {
        (Some(d), _) => d,
        (None, "perturbed_nn") => 2,
        (None, "saturation_1d") => 1,
        (None, _) => return Err(Error::InvalidParameter(format!("kernel {name} needs --d"))),
    };
    let mut params = BTreeMap::new();
    if let Some(a) = k.alpha {
        params.insert("alpha".to_string(), a);
    }
    if let Some(p) = k.p {
        params.insert("p".to_string(), p);
    }
    ozlab::make_named_kernel(name, d, &params)
}

fn check_dim(kernel: &Kernel, v: &[f64], what: &str) -> Result<(), Error> {
    if v.len() != kernel.dim() {
        return Err(Error::InvalidParameter(format!("{what} has {} entries, kernel dimension is {}", v.len(), kernel.dim())));
    }
    Ok(())
}

/// A rectangular result: CSV rows of already formatted cells, plus its JSON form.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    json: Value,
    meta: Option<Value>,
}

/// Shortest round-trip representation, in exponent form far from unit scale.
fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e16) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn vec_cell<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";")
}

/// Columns `x_1,...,x_d,value,method,error`.
fn green_table(d: usize, evals: &[GreenEval]) -> Table {
    const AXES: [&str; 8] = ["x_1", "x_2", "x_3", "x_4", "x_5", "x_6", "x_7", "x_8"];
    let wide = d <= AXES.len();
    let mut header: Vec<&'static str> = if wide { AXES[..d].to_vec() } else { vec!["x"] };
    header.extend(["value", "method", "error"]);
    let rows = evals
        .iter()
        .map(|e| {
            let mut r: Vec<String> = if wide { e.x.iter().map(|v| v.to_string()).collect() } else { vec![vec_cell(&e.x)] };
            r.extend([num(e.value), e.method.as_str().to_string(), num(e.error)]);
            r
        })
        .collect();
    Table { header, rows, json: json!(evals), meta: None }
}

fn execute(cmd: &Command) -> Result<Table, Error> {
    Ok(match cmd {
        Command::Mass { k, z } => {
            let kernel = build_kernel(k)?;
            let m = wulff::mass(&kernel, *z)?;
            Table { header: vec!["z", "mass"], rows: vec![vec![num(*z), num(m)]], json: json!({ "z": z, "mass": m }), meta: None }
        }
        Command::Norm { k, z, x } => {
            let kernel = build_kernel(k)?;
            if x.is_empty() {
                return Err(Error::InvalidParameter("give at least one --x".into()));
            }
            let mut rows = Vec::new();
            let mut out = Vec::new();
            for v in x {
                check_dim(&kernel, v, "--x")?;
                let n = wulff::norm(&kernel, *z, v)?;
                rows.push(vec![num(*z), vec_cell(v), num(n)]);
                out.push(json!({ "z": z, "x": v, "norm": n }));
            }
            Table { header: vec!["z", "x", "norm"], rows, json: Value::Array(out), meta: None }
        }
        Command::Tilt { k, z, x } => {
            let kernel = build_kernel(k)?;
            check_dim(&kernel, x, "--x")?;
            let dc = wulff::drift_cov(&kernel, *z, x)?;
            let t = &dc.tilt;
            let lam: Vec<String> = dc.lambda.iter().map(|r| vec_cell(r)).collect();
            Table {
                header: vec!["z", "x", "mu", "lambda", "mass", "norm_value", "residual", "iterations", "eta", "cov", "a2", "b2", "w2"],
                rows: vec![vec![
                    num(*z),
                    vec_cell(x),
                    vec_cell(&t.mu),
                    num(t.lambda),
                    num(t.mass),
                    num(t.norm_value),
                    num(t.residual),
                    t.iterations.to_string(),
                    vec_cell(&dc.eta),
                    lam.join("|"),
                    num(dc.a2),
                    num(dc.b2),
                    num(dc.w2),
                ]],
                json: json!(dc),
                meta: None,
            }
        }
        Command::Wulff { k, z, samples } | Command::Ball { k, z, samples } => {
            let kernel = build_kernel(k)?;
            let ball = matches!(cmd, Command::Ball { .. });
            let pts = if ball { wulff::norm_ball(&kernel, *z, *samples)? } else { wulff::wulff_boundary(&kernel, *z, *samples)? };
            let header = if ball { vec!["theta", "x_1", "x_2"] } else { vec!["theta", "mu_1", "mu_2"] };
            let rows = pts.iter().map(|p| p.iter().map(|&v| num(v)).collect()).collect();
            let json = Value::Array(pts.iter().map(|p| json!({ header[0]: p[0], header[1]: p[1], header[2]: p[2] })).collect());
            Table { header, rows, json, meta: None }
        }
        Command::Green { k, z, x, method, tol, grid } => {
            let kernel = build_kernel(k)?;
            let mem = MemoryCap::from_env()?;
            for p in x {
                check_dim(&kernel, &ozlab::numeric::to_f64(p), "--x")?;
            }
            let evals = match method {
                Method::Auto => lattice::green_oracle(&kernel, *z, x, *tol, mem)?,
                Method::Series => lattice::green_series(&kernel, *z, x, SeriesOptions { tol: *tol, radius: None, mem })?,
                Method::Quadrature => lattice::green_quadrature(
                    &kernel,
                    *z,
                    x,
                    &QuadratureOptions { n_grid: *grid, tol: tol.max(1e-14), tilt: None, mem },
                )?,
                Method::Exact => {
                    if kernel.dim() != 1 || kernel.name() != Some(ozlab::KernelName::Nn) {
                        return Err(Error::InvalidParameter("the exact method covers nn in d = 1 only".into()));
                    }
                    x.iter()
                        .map(|p| {
                            let v = lattice::green_exact_1d(*z, p[0])?;
                            Ok(GreenEval { x: p.clone(), z: *z, value: v, method: lattice::GreenMethod::Exact1d, error: 4.0 * f64::EPSILON * v })
                        })
                        .collect::<Result<_, Error>>()?
                }
            };
            green_table(kernel.dim(), &evals)
        }
        Command::Chi { k, z, mu } => {
            let kernel = build_kernel(k)?;
            let mu = mu.clone().unwrap_or_else(|| vec![0.0; kernel.dim()]);
            check_dim(&kernel, &mu, "--mu")?;
            let chi = lattice::tilted_susceptibility(&kernel, *z, &mu)?;
            let cell = match chi {
                Susceptibility::Finite(v) => num(v),
                Susceptibility::Infinite => "inf".into(),
            };
            Table { header: vec!["z", "mu", "chi"], rows: vec![vec![num(*z), vec_cell(&mu), cell]], json: json!({ "z": z, "mu": mu, "chi": chi }), meta: None }
        }
        Command::Xi { k, z, phi, tol } => {
            let kernel = build_kernel(k)?;
            let r = lattice::xi_phi(&kernel, *z, *phi, *tol, MemoryCap::from_env()?)?;
            Table {
                header: vec!["z", "phi", "xi", "moment", "chi", "radius", "steps", "relative_error"],
                rows: vec![vec![num(*z), num(r.phi), num(r.xi), num(r.moment), num(r.chi), r.radius.to_string(), r.steps.to_string(), num(r.relative_error)]],
                json: json!(r),
                meta: None,
            }
        }
        Command::Crossover { k, pts, z, s0, no_cross_check } => {
            let kernel = build_kernel(k)?;
            let opts = CrossoverOptions { s0: *s0, cross_check: !no_cross_check, mem: MemoryCap::from_env()?, ..Default::default() };
            let t = crossover::predict_table(&kernel, *z, &pts.points()?, &opts)?;
            let rows = t
                .rows
                .iter()
                .map(|r| vec![vec_cell(&r.x), num(r.oracle), num(r.prediction), num(r.ratio), num(r.m_norm_x)])
                .collect();
            Table { header: vec!["x", "oracle", "prediction", "ratio", "m_norm_x"], rows, json: json!(t), meta: Some(json!(t.meta)) }
        }
        Command::Oz { k, pts, z } => {
            let kernel = build_kernel(k)?;
            let opts = CrossoverOptions { cross_check: false, mem: MemoryCap::from_env()?, ..Default::default() };
            let mut rows = Vec::new();
            let mut out = Vec::new();
            for p in pts.points()? {
                let oz = crossover::oz_asymptote(&kernel, *z, &p, &opts)?;
                let row = crossover::predict(&kernel, *z, &p, &opts)?;
                rows.push(vec![vec_cell(&p), num(oz), num(row.prediction), num(oz / row.prediction), num(row.m_norm_x)]);
                out.push(json!({ "x": p, "oz": oz, "prediction": row.prediction, "ratio": oz / row.prediction, "m_norm_x": row.m_norm_x }));
            }
            Table { header: vec!["x", "oz", "prediction", "ratio", "m_norm_x"], rows, json: Value::Array(out), meta: None }
        }
        Command::Envelope { k, pts, z, bound, s0 } => {
            let kernel = build_kernel(k)?;
            let opts = CrossoverOptions { s0: *s0, cross_check: false, mem: MemoryCap::from_env()?, ..Default::default() };
            let r = crossover::envelope_check(&kernel, *z, &pts.points()?, *bound, &opts)?;
            log::info!("envelope ratios in [{}, {}], bounded: {}", r.min_ratio, r.max_ratio, r.bounded);
            let rows = r.rows.iter().map(|e| vec![vec_cell(&e.x), num(e.oracle), num(e.envelope), num(e.ratio), num(e.m_norm_x)]).collect();
            Table { header: vec!["x", "oracle", "envelope", "ratio", "m_norm_x"], rows, json: json!(r), meta: None }
        }
        Command::CriticalDecay { k, zs, s } => {
            let kernel = build_kernel(k)?;
            let opts = CrossoverOptions { cross_check: false, mem: MemoryCap::from_env()?, ..Default::default() };
            let r = crossover::critical_decay_check(&kernel, zs, *s, &opts)?;
            let rows = r
                .rows
                .iter()
                .map(|c| vec![num(c.z), num(c.mass), vec_cell(&c.x), num(c.s_eff), num(c.oracle), c.oracle_method.as_str().into(), num(c.prediction), num(c.ratio)])
                .collect();
            Table { header: vec!["z", "mass", "x", "s_eff", "oracle", "method", "prediction", "ratio"], rows, json: json!(r), meta: None }
        }
        Command::Ncgl { k, pts, z, mu, theta, grid } => {
            let kernel = build_kernel(k)?;
            let points = pts.points()?;
            let mu = match mu {
                Some(m) => m.clone(),
                None => wulff::optimal_tilt(&kernel, *z, &ozlab::numeric::to_f64(&points[0]))?.mu,
            };
            check_dim(&kernel, &mu, "--mu")?;
            let opts = NcglOptions { theta: *theta, n_grid: *grid, mem: MemoryCap::from_env()?, ..Default::default() };
            let r = crossover::ncgl_verify(&kernel, *z, &mu, &points, &opts)?;
            let rows = r.rows.iter().map(|e| vec![vec_cell(&e.x), num(e.g_q), num(e.g_q_error), num(e.brownian), num(e.ratio)]).collect();
            Table { header: vec!["x", "g_q", "g_q_error", "brownian", "ratio"], rows, json: json!(r), meta: None }
        }
        Command::Saturation { p, z, xmax } => {
            let r = lattice::saturation_probe(*p, *z, *xmax, MemoryCap::from_env()?)?;
            log::info!("z_sat = {}, saturated: {}, oz regime: {}", r.z_sat, r.saturated, r.oz_regime);
            let rows = r.ratios.iter().map(|(x, v)| vec![x.to_string(), num(*v)]).collect();
            Table { header: vec!["x", "ratio"], rows, json: json!(r), meta: None }
        }
        Command::ScanMonotone { k, x, zmin, zmax, steps, tol } => {
            let kernel = build_kernel(k)?;
            check_dim(&kernel, x, "--x")?;
            let r = wulff::monotonicity_scan(&kernel, x, *zmin, *zmax, *steps, *tol)?;
            if r.non_monotone {
                log::warn!("|x|_z is not monotone in z: {} grid values leave the range of its limits", r.flags.len());
            }
            let rows = r
                .rows
                .iter()
                .map(|row| {
                    let flagged = r.flags.iter().any(|f| f.z == row.z);
                    vec![num(row.z), num(row.norm), u8::from(flagged).to_string()]
                })
                .collect();
            Table { header: vec!["z", "norm", "flag"], rows, json: json!(r), meta: None }
        }
        Command::Qcheck { k, z, mu, zeta, grid } => {
            let kernel = build_kernel(k)?;
            let mu = mu.clone().unwrap_or_else(|| vec![0.0; kernel.dim()]);
            check_dim(&kernel, &mu, "--mu")?;
            let r = kernel.q_class_check(*z, &mu, *zeta, *grid)?;
            Table {
                header: vec!["z", "mu", "zeta", "m_estimate", "kir_estimate", "grid", "nonnegative", "symmetric", "truncation_error"],
                rows: vec![vec![
                    num(*z),
                    vec_cell(&mu),
                    num(r.zeta),
                    num(r.m_estimate),
                    num(r.kir_estimate),
                    r.grid.to_string(),
                    r.nonnegative.to_string(),
                    r.symmetric.to_string(),
                    num(r.truncation_error),
                ]],
                json: json!(r),
                meta: None,
            }
        }
    })
}

fn render(table: &Table, format: Format) -> Result<Vec<u8>, Error> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_vec_pretty(&table.json)?;
            s.push(b'\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::Io(e.to_string());
            w.write_record(&table.header).map_err(io)?;
            for r in &table.rows {
                w.write_record(r).map_err(io)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.to_string()))
        }
    }
}

fn diagnostic(err: &mut dyn Write, kind: &str, message: &str) {
    let _ = writeln!(err, "{}", json!({ "error": kind, "message": message }));
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{e}");
                return 0;
            }
            diagnostic(err, "invalid_arguments", e.to_string().trim());
            return 2;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            diagnostic(err, "invalid_parameter", "--threads must be positive");
            return 2;
        }
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    // the cap is validated even by subcommands that never allocate a box
    if let Err(e) = MemoryCap::from_env() {
        diagnostic(err, e.kind(), &e.to_string());
        return 2;
    }
    let result = execute(&cli.command).and_then(|t| {
        let bytes = render(&t, cli.format)?;
        match &cli.out {
            Some(path) => {
                std::fs::write(path, &bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                if let (Some(meta), Format::Csv) = (&t.meta, cli.format) {
                    let mut p = path.clone().into_os_string();
                    p.push(".meta.json");
                    let s = serde_json::to_vec_pretty(meta)?;
                    std::fs::write(&p, s).map_err(|e| Error::Io(format!("{}: {e}", PathBuf::from(&p).display())))?;
                }
                Ok(())
            }
            None => out.write_all(&bytes).map_err(|e| Error::Io(e.to_string())),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            diagnostic(err, e.kind(), &e.to_string());
            if e.is_validation() {
                2
            } else {
                3
            }
        }
    }
}

/// [`run_with`] on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
