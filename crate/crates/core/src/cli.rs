//! Command-line orchestration: plain `key=value` configuration with CLI
//! overrides, subcommand dispatch, CSV emission, and the self-check suite.
//!
//! Every run resolves its configuration up front (unknown keys are errors),
//! writes a `manifest.txt` echoing the resolved config — re-running from the
//! manifest alone reproduces the artifacts — and a `run.csv` with one line
//! per solve. Subcommands add their own CSV next to those. All numeric
//! output is printed with 17 significant digits so round-trips are exact,
//! and timing columns default to zero so reruns are bitwise identical
//! (`timing=true` opts into wall-clock values).

use crate::cell;
use crate::dns::{self, ComparisonRow};
use crate::error::{Error, Result};
use crate::geometry::HoleShape;
use crate::grid;
use crate::homogenized::{self, Forcing};
use crate::regimes::{self, Regime, ScalingFamily, ScalingKind};
use crate::solver::SolveOpts;
use crate::util::fmt_f64;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Version string stamped into provenance headers.
pub const VERSION: &str = concat!("cellflow ", env!("CARGO_PKG_VERSION"));

/// One configuration key a subcommand understands.
struct KeySpec {
    key: &'static str,
    /// `None` marks a required key.
    default: Option<&'static str>,
    help: &'static str,
}

/// Keys every subcommand understands.
const COMMON_KEYS: &[KeySpec] = &[
    KeySpec {
        key: "out",
        default: Some("out"),
        help: "output directory for CSVs, manifest, and dumps",
    },
    KeySpec {
        key: "tol",
        default: Some("1e-8"),
        help: "solver tolerance",
    },
    KeySpec {
        key: "timing",
        default: Some("false"),
        help: "emit wall-clock seconds (breaks bitwise rerun identity)",
    },
    KeySpec {
        key: "dump_fields",
        default: Some("false"),
        help: "write solution fields in the plain dump format",
    },
];

struct Subcommand {
    name: &'static str,
    keys: &'static [KeySpec],
    help: &'static str,
}

const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand {
        name: "classify",
        help: "print the limit regime of a scaling family",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec {
                key: "family",
                default: None,
                help: "powerlaw:C,GAMMA or logcritical:SIGMA_STAR",
            },
        ],
    },
    Subcommand {
        name: "cell",
        help: "solve the cell problem at one obstacle scale",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec { key: "eta", default: None, help: "obstacle-to-cell ratio" },
            KeySpec {
                key: "hole",
                default: Some("disk:0.5"),
                help: "hole shape, e.g. disk:0.5 / square:0.3",
            },
            KeySpec {
                key: "n",
                default: Some("auto"),
                help: "grid cells per side, or `auto` for the resolution rule",
            },
            KeySpec {
                key: "classical",
                default: Some("false"),
                help: "unit forcing instead of the c_eta^2-scaled forcing",
            },
        ],
    },
    Subcommand {
        name: "sweep",
        help: "cell problem across obstacle scales, with limit extrapolation",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec {
                key: "hole",
                default: Some("disk:0.5"),
                help: "hole shape",
            },
            KeySpec {
                key: "etas",
                default: Some("0.2,0.1,0.05,0.025"),
                help: "comma-separated obstacle scales",
            },
        ],
    },
    Subcommand {
        name: "poincare",
        help: "Poincaré constants of perforated cells",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec {
                key: "hole",
                default: Some("disk:0.5"),
                help: "hole shape",
            },
            KeySpec {
                key: "etas",
                default: Some("0.2,0.1,0.05,0.025"),
                help: "comma-separated obstacle scales",
            },
            KeySpec {
                key: "n",
                default: Some("auto"),
                help: "grid cells per side, or `auto`",
            },
        ],
    },
    Subcommand {
        name: "limit",
        help: "solve one effective model on the unit box",
        keys: &[
            KeySpec {
                key: "system",
                default: None,
                help: "stokes | darcy | brinkman",
            },
            KeySpec { key: "dim", default: Some("2"), help: "ambient dimension" },
            KeySpec { key: "n", default: Some("64"), help: "grid cells per side" },
            KeySpec {
                key: "f",
                default: Some("sinshear"),
                help: "forcing: sinshear | constant:fx,fy[,fz] | file:PATH",
            },
            KeySpec {
                key: "a",
                default: Some("scalar:1"),
                help: "permeability: scalar:V | matrix:row-major entries",
            },
            KeySpec {
                key: "sigma_star",
                default: Some(""),
                help: "critical obstacle scale (brinkman only)",
            },
        ],
    },
    Subcommand {
        name: "dns",
        help: "direct Stokes solve on a perforated box",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec {
                key: "epsilon",
                default: None,
                help: "hole spacing (fractions like 1/8 parsed exactly)",
            },
            KeySpec { key: "a", default: None, help: "hole size (fraction ok)" },
            KeySpec {
                key: "hole",
                default: Some("disk:0.5"),
                help: "hole shape",
            },
            KeySpec {
                key: "n",
                default: Some("auto"),
                help: "grid cells per side, or `auto` against n_cap",
            },
            KeySpec {
                key: "n_cap",
                default: Some("auto"),
                help: "grid budget (default 1024 in 2D, 128 in 3D)",
            },
            KeySpec {
                key: "f",
                default: Some("sinshear"),
                help: "forcing",
            },
        ],
    },
    Subcommand {
        name: "compare",
        help: "regime comparison study: perforated solves vs the limit model",
        keys: &[
            KeySpec { key: "dim", default: None, help: "ambient dimension" },
            KeySpec {
                key: "family",
                default: None,
                help: "powerlaw:C,GAMMA or logcritical:SIGMA_STAR",
            },
            KeySpec {
                key: "hole",
                default: Some("disk:0.5"),
                help: "hole shape",
            },
            KeySpec {
                key: "f",
                default: Some("sinshear"),
                help: "forcing",
            },
            KeySpec {
                key: "eps",
                default: None,
                help: "comma-separated epsilons (fractions ok)",
            },
            KeySpec {
                key: "n_cap",
                default: Some("auto"),
                help: "grid budget (default 1024 in 2D, 128 in 3D)",
            },
            KeySpec {
                key: "window_factor",
                default: Some("2"),
                help: "coarse-graining window in units of epsilon",
            },
        ],
    },
    Subcommand {
        name: "check",
        help: "run the full self-check suite",
        keys: &[],
    },
];

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: String,
    pub keys: BTreeMap<String, String>,
}

impl RunConfig {
    fn get(&self, key: &str) -> &str {
        self.keys
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_default()
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        parse_number(self.get(key))
            .map_err(|e| Error::Config(format!("key `{key}`: {e}")))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("key `{key}`: expected an integer, got `{}`", self.get(key))))
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "key `{key}`: expected true/false, got `{other}`"
            ))),
        }
    }

    fn timing(&self) -> bool {
        self.get_bool("timing").unwrap_or(false)
    }

    /// Zero out a duration unless timing was requested, so default runs are
    /// bitwise reproducible.
    fn sec(&self, s: f64) -> f64 {
        if self.timing() {
            s
        } else {
            0.0
        }
    }

    fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    fn opts(&self) -> Result<SolveOpts> {
        let tol = self.get_f64("tol")?;
        Ok(SolveOpts::with_tol(tol))
    }
}

/// Parse a number, accepting exact fractions like `1/16`.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: i64 = num
            .trim()
            .parse()
            .map_err(|_| format!("bad fraction numerator `{num}`"))?;
        let d: i64 = den
            .trim()
            .parse()
            .map_err(|_| format!("bad fraction denominator `{den}`"))?;
        if d == 0 {
            return Err("fraction with zero denominator".into());
        }
        return Ok(n as f64 / d as f64);
    }
    s.parse::<f64>().map_err(|_| format!("bad number `{s}`"))
}

fn parse_family(dim: usize, s: &str) -> Result<ScalingFamily> {
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("family must be kind:params, got `{s}`")))?;
    let kind = match kind {
        "powerlaw" => {
            let (c, g) = rest.split_once(',').ok_or_else(|| {
                Error::Config(format!("powerlaw needs C,GAMMA, got `{rest}`"))
            })?;
            ScalingKind::PowerLaw {
                coeff: parse_number(c).map_err(Error::Config)?,
                gamma: parse_number(g).map_err(Error::Config)?,
            }
        }
        "logcritical" => ScalingKind::LogCritical {
            sigma_star: parse_number(rest).map_err(Error::Config)?,
        },
        other => {
            return Err(Error::Config(format!("unknown family kind `{other}`")));
        }
    };
    ScalingFamily::new(dim, kind)
}

fn parse_forcing(s: &str) -> Result<Forcing> {
    if s == "sinshear" {
        return Ok(Forcing::SinShear);
    }
    if let Some(rest) = s.strip_prefix("constant:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(Error::Config(format!(
                "constant forcing needs 1..3 components, got `{rest}`"
            )));
        }
        let mut f = [0.0; 3];
        for (i, p) in parts.iter().enumerate() {
            f[i] = parse_number(p).map_err(Error::Config)?;
        }
        return Ok(Forcing::Constant(f));
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(Forcing::FromFile(PathBuf::from(path)));
    }
    Err(Error::Config(format!("unknown forcing `{s}`")))
}

fn parse_matrix(dim: usize, s: &str) -> Result<[[f64; 3]; 3]> {
    if let Some(v) = s.strip_prefix("scalar:") {
        let v = parse_number(v).map_err(Error::Config)?;
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate().take(dim) {
            row[i] = v;
        }
        return Ok(a);
    }
    if let Some(list) = s.strip_prefix("matrix:") {
        let vals: Vec<&str> = list.split(',').collect();
        if vals.len() != dim * dim {
            return Err(Error::Config(format!(
                "matrix needs {} entries in dimension {dim}, got {}",
                dim * dim,
                vals.len()
            )));
        }
        let mut a = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                a[i][j] = parse_number(vals[i * dim + j]).map_err(Error::Config)?;
            }
        }
        return Ok(a);
    }
    Err(Error::Config(format!(
        "permeability must be scalar:V or matrix:entries, got `{s}`"
    )))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| parse_number(p).map_err(Error::Config))
        .collect()
}

/// Parse command-line arguments plus an optional `--config` file into a
/// validated configuration. Unknown keys are errors.
pub fn parse_config(args: &[String]) -> Result<RunConfig> {
    let mut subcommand: Option<String> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut config_file: Option<String> = None;

    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if let Some(flag) = arg.strip_prefix("--") {
            let (key, value) = if let Some((k, v)) = flag.split_once('=') {
                (k.to_string(), v.to_string())
            } else if matches!(flag, "dump-fields" | "timing" | "classical") {
                // Bare boolean switches.
                (flag.to_string(), "true".to_string())
            } else {
                i += 1;
                let v = args.get(i).ok_or_else(|| {
                    Error::Config(format!("flag --{flag} needs a value"))
                })?;
                (flag.to_string(), v.clone())
            };
            let key = key.to_lowercase().replace('-', "_");
            if key == "config" {
                config_file = Some(value);
            } else {
                overrides.push((key, value));
            }
        } else if subcommand.is_none() {
            subcommand = Some(arg.clone());
        } else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        }
        i += 1;
    }

    // Config file first, CLI overrides second.
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read config `{path}`: {e}")))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{path}:{}: expected key=value", lineno + 1))
            })?;
            let k = k.trim().to_string();
            let v = v.trim().to_string();
            if k == "subcommand" {
                if subcommand.is_none() {
                    subcommand = Some(v);
                }
            } else {
                keys.insert(k, v);
            }
        }
    }
    for (k, v) in overrides {
        keys.insert(k, v);
    }

    let subcommand =
        subcommand.ok_or_else(|| Error::Config("no subcommand given (see --help)".into()))?;
    let schema = SUBCOMMANDS
        .iter()
        .find(|s| s.name == subcommand)
        .ok_or_else(|| Error::Config(format!("unknown subcommand `{subcommand}`")))?;

    // Validate: every provided key known, every required key present,
    // defaults filled in.
    let known = |k: &str| {
        COMMON_KEYS.iter().chain(schema.keys).any(|spec| spec.key == k)
    };
    for k in keys.keys() {
        if !known(k) {
            return Err(Error::Config(format!(
                "unknown key `{k}` for subcommand `{subcommand}`"
            )));
        }
    }
    for spec in COMMON_KEYS.iter().chain(schema.keys) {
        if !keys.contains_key(spec.key) {
            match spec.default {
                Some(d) => {
                    keys.insert(spec.key.to_string(), d.to_string());
                }
                None => {
                    return Err(Error::Config(format!(
                        "missing required key `{}` for subcommand `{subcommand}`",
                        spec.key
                    )));
                }
            }
        }
    }
    Ok(RunConfig {
        subcommand,
        keys,
    })
}

fn usage() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{VERSION}");
    let _ = writeln!(
        s,
        "usage: cellflow <subcommand> [--key value]... [--config FILE]\n"
    );
    for sub in SUBCOMMANDS {
        let _ = writeln!(s, "  {:<10} {}", sub.name, sub.help);
        for spec in sub.keys {
            let req = if spec.default.is_none() {
                " (required)"
            } else {
                ""
            };
            let _ = writeln!(s, "      --{:<14} {}{req}", spec.key, spec.help);
        }
    }
    let _ = writeln!(s, "\ncommon keys:");
    for spec in COMMON_KEYS {
        let _ = writeln!(
            s,
            "      --{:<14} {} [default {}]",
            spec.key,
            spec.help,
            spec.default.unwrap_or("-")
        );
    }
    let _ = writeln!(
        s,
        "\nenvironment: CELLFLOW_THREADS limits worker threads (jobs currently run\nsequentially in submission order; the variable is validated and echoed)."
    );
    s
}

/// One line of `run.csv`: a single linear solve.
struct RunRecord {
    problem_id: String,
    dim: usize,
    n: usize,
    iterations: usize,
    residual: f64,
    seconds: f64,
}

struct Artifacts {
    dir: PathBuf,
    records: Vec<RunRecord>,
}

impl Artifacts {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.out_dir();
        std::fs::create_dir_all(&dir).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("cannot create `{}`: {e}", dir.display()),
            ))
        })?;
        Ok(Artifacts {
            dir,
            records: Vec::new(),
        })
    }

    fn record(
        &mut self,
        cfg: &RunConfig,
        problem_id: impl Into<String>,
        dim: usize,
        n: usize,
        iterations: usize,
        residual: f64,
        seconds: f64,
    ) {
        self.records.push(RunRecord {
            problem_id: problem_id.into(),
            dim,
            n,
            iterations,
            residual,
            seconds: cfg.sec(seconds),
        });
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("cannot write `{}`: {e}", path.display()),
            ))
        })
    }

    /// Manifest plus run.csv; called once per successful run.
    fn finish(&self, cfg: &RunConfig) -> Result<()> {
        let mut manifest = format!("subcommand={}\n", cfg.subcommand);
        for (k, v) in &cfg.keys {
            let _ = writeln!(manifest, "{k}={v}");
        }
        if let Ok(threads) = std::env::var("CELLFLOW_THREADS") {
            let _ = writeln!(manifest, "# CELLFLOW_THREADS={threads}");
        }
        self.write("manifest.txt", &manifest)?;

        let mut csv = String::from("problem_id,dim,N,iterations,residual,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.problem_id,
                r.dim,
                r.n,
                r.iterations,
                fmt_f64(r.residual),
                fmt_f64(r.seconds)
            );
        }
        self.write("run.csv", &csv)
    }
}

fn validate_threads() -> Result<usize> {
    match std::env::var("CELLFLOW_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| {
                Error::Config(format!("CELLFLOW_THREADS must be a positive integer, got `{v}`"))
            }),
        Err(_) => Ok(1),
    }
}

fn sweep_csv(rows: &[cell::SweepRow], cfg: &RunConfig) -> String {
    let mut csv = String::from(
        "eta,c_eta,N,A11_energy,A12_energy,A11_avg,A12_avg,norm_w,norm_gradw,norm_q,poincare,iterations,seconds\n",
    );
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.eta),
            fmt_f64(r.c_eta),
            r.n,
            fmt_f64(r.a11_energy),
            fmt_f64(r.a12_energy),
            fmt_f64(r.a11_avg),
            fmt_f64(r.a12_avg),
            fmt_f64(r.norm_w),
            fmt_f64(r.norm_gradw),
            fmt_f64(r.norm_q),
            fmt_f64(r.poincare),
            r.iterations,
            fmt_f64(cfg.sec(r.seconds))
        );
    }
    csv
}

fn comparison_csv(rows: &[ComparisonRow], cfg: &RunConfig) -> String {
    let mut csv = String::new();
    let _ = writeln!(csv, "# {VERSION}");
    let mut echo = format!("subcommand={}", cfg.subcommand);
    for (k, v) in &cfg.keys {
        let _ = write!(echo, " {k}={v}");
    }
    let _ = writeln!(csv, "# config: {echo}");
    let _ = writeln!(
        csv,
        "epsilon,a_eps,sigma,N,rel_l2_velocity,rel_l2_pressure,rel_h1_velocity,absolute,ref_norm,norm_u,norm_gradu,iterations,seconds"
    );
    for r in rows {
        let h1 = r
            .rel_h1_velocity
            .map(fmt_f64)
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.epsilon),
            fmt_f64(r.a_eps),
            fmt_f64(r.sigma),
            r.n,
            fmt_f64(r.rel_l2_velocity),
            fmt_f64(r.rel_l2_pressure),
            h1,
            u8::from(r.absolute),
            fmt_f64(r.ref_norm),
            fmt_f64(r.norm_u),
            fmt_f64(r.norm_gradu),
            r.iterations,
            fmt_f64(cfg.sec(r.seconds))
        );
    }
    csv
}

fn dump_velocity_pressure(
    art: &Artifacts,
    name: &str,
    u: &grid::VelocityField,
    p: &grid::ScalarField,
) -> Result<()> {
    let dims = u.dims();
    let mut arrays: Vec<&[f64]> = u.comps.iter().map(|c| c.as_slice()).collect();
    arrays.push(&p.data);
    art.write(name, &grid::dump_fields(dims, &arrays))
}

fn run_classify(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let family = parse_family(dim, cfg.get("family"))?;
    let regime = regimes::classify(&family)?;
    let line = match regime {
        Regime::SmallHoles => "stokes (small holes)".to_string(),
        Regime::LargeHoles => "darcy (large holes)".to_string(),
        Regime::Critical { sigma_star } => {
            format!("critical sigma_star={sigma_star}")
        }
    };
    let _ = art; // no solves
    Ok(line)
}

fn run_cell(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let eta = cfg.get_f64("eta")?;
    let shape: HoleShape = cfg.get("hole").parse()?;
    let classical = cfg.get_bool("classical")?;
    let opts = cfg.opts()?;
    let n = match cfg.get("n") {
        "auto" => cell::n_for_eta(shape.delta1(), eta),
        other => other
            .parse()
            .map_err(|_| Error::Config(format!("key `n`: expected integer or auto, got `{other}`")))?,
    };
    let start = std::time::Instant::now();
    let delta3 = cell::delta3_for(dim, &shape, eta);
    let geom = crate::geometry::build_cell(dim, eta, shape, delta3)?;
    let sol = cell::solve_cell(&geom, n, classical, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    let ae = cell::permeability_energy(&sol);
    let aa = cell::permeability_average(&sol);
    let (poincare, _) = cell::poincare_constant(&sol.masks, 1e-9)?;
    let row = cell::SweepRow {
        eta,
        c_eta: sol.c_eta,
        n,
        a11_energy: ae[0][0],
        a12_energy: ae[0][1],
        a11_avg: aa[0][0],
        a12_avg: aa[0][1],
        a_energy: ae,
        a_avg: aa,
        norm_w: crate::ops::l2_norm_vel(&sol.w[0]),
        norm_gradw: crate::ops::h1_seminorm(&sol.w[0]),
        norm_q: crate::ops::l2_norm_scalar(&sol.q[0]),
        poincare,
        iterations: sol.reports.iter().map(|r| r.iterations).sum(),
        residual: sol.reports.iter().map(|r| r.residual).fold(0.0, f64::max),
        seconds,
    };
    art.record(cfg, format!("cell eta={}", fmt_f64(eta)), dim, n, row.iterations, row.residual, seconds);
    art.write("cell.csv", &sweep_csv(std::slice::from_ref(&row), cfg))?;
    if cfg.get_bool("dump_fields")? {
        for (i, (w, q)) in sol.w.iter().zip(&sol.q).enumerate() {
            dump_velocity_pressure(art, &format!("fields_cell_dir{i}.txt"), w, q)?;
        }
    }
    Ok(format!(
        "cell eta={} N={n} A11={} A12={}",
        fmt_f64(eta),
        fmt_f64(ae[0][0]),
        fmt_f64(ae[0][1])
    ))
}

fn run_sweep(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let shape: HoleShape = cfg.get("hole").parse()?;
    let etas = parse_list(cfg.get("etas"))?;
    let opts = cfg.opts()?;
    let rows = cell::sweep_eta(dim, &shape, &etas, &opts)?;
    for r in &rows {
        art.record(
            cfg,
            format!("sweep eta={}", fmt_f64(r.eta)),
            dim,
            r.n,
            r.iterations,
            r.residual,
            r.seconds,
        );
    }
    let mut csv = sweep_csv(&rows, cfg);
    // The vanishing-obstacle fit needs at least two scales; a single-row
    // sweep is still a valid run, just without the extrapolation footer.
    let summary = if rows.len() >= 2 {
        let est = cell::extrapolate_limit(dim, &rows)?;
        let _ = writeln!(
            csv,
            "# extrapolation,intercept={},slope={},max_residual={}",
            fmt_f64(est.intercept),
            fmt_f64(est.slope),
            fmt_f64(est.max_residual)
        );
        format!(
            "sweep {} rows, extrapolated A11 = {}",
            rows.len(),
            fmt_f64(est.intercept)
        )
    } else {
        format!("sweep {} row", rows.len())
    };
    art.write("sweep.csv", &csv)?;
    Ok(summary)
}

fn run_poincare(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let shape: HoleShape = cfg.get("hole").parse()?;
    let etas = parse_list(cfg.get("etas"))?;
    let mut csv = String::from("eta,c_eta,N,poincare,poincare_c_eta,iterations,seconds\n");
    let mut last = 0.0;
    for &eta in &etas {
        let start = std::time::Instant::now();
        let n = match cfg.get("n") {
            "auto" => cell::n_for_eta(shape.delta1(), eta),
            other => other.parse().map_err(|_| {
                Error::Config(format!("key `n`: expected integer or auto, got `{other}`"))
            })?,
        };
        let delta3 = cell::delta3_for(dim, &shape, eta);
        let geom = crate::geometry::build_cell(dim, eta, shape.clone(), delta3)?;
        let masks = std::sync::Arc::new(crate::geometry::rasterize_cell(
            &geom,
            n,
            crate::geometry::BcKind::Periodic,
        )?);
        let (poincare, iters) = cell::poincare_constant(&masks, 1e-9)?;
        let c = regimes::c_eta(dim, eta);
        let seconds = start.elapsed().as_secs_f64();
        art.record(
            cfg,
            format!("poincare eta={}", fmt_f64(eta)),
            dim,
            n,
            iters,
            0.0,
            seconds,
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f64(eta),
            fmt_f64(c),
            n,
            fmt_f64(poincare),
            fmt_f64(poincare * c),
            iters,
            fmt_f64(cfg.sec(seconds))
        );
        last = poincare;
    }
    art.write("poincare.csv", &csv)?;
    Ok(format!("poincare study, last constant {}", fmt_f64(last)))
}

fn run_limit(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let n = cfg.get_usize("n")?;
    let system = cfg.get("system").to_string();
    let forcing = parse_forcing(cfg.get("f"))?;
    let a = parse_matrix(dim, cfg.get("a"))?;
    let opts = cfg.opts()?;
    let sol = match system.as_str() {
        "stokes" => homogenized::solve_stokes(dim, n, &forcing, &opts)?,
        "darcy" => homogenized::solve_darcy(dim, n, &a, &forcing, &opts)?,
        "brinkman" => {
            let sigma_star = cfg.get_f64("sigma_star").map_err(|_| {
                Error::Config("brinkman needs --sigma-star".into())
            })?;
            homogenized::solve_brinkman(dim, n, &a, sigma_star, &forcing, &opts)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown system `{other}` (stokes | darcy | brinkman)"
            )));
        }
    };
    let sigma_star = if system == "brinkman" {
        cfg.get_f64("sigma_star")?
    } else {
        0.0
    };
    let norm_u = crate::ops::l2_norm_vel(&sol.u);
    let norm_p = crate::ops::l2_norm_scalar(&sol.p);
    art.record(
        cfg,
        format!("limit {system}"),
        dim,
        n,
        sol.report.iterations,
        sol.report.residual,
        sol.report.seconds,
    );
    let mut csv = String::from("system,dim,N,sigma_star,norm_u,norm_p,iterations,residual,seconds\n");
    let _ = writeln!(
        csv,
        "{system},{dim},{n},{},{},{},{},{},{}",
        fmt_f64(sigma_star),
        fmt_f64(norm_u),
        fmt_f64(norm_p),
        sol.report.iterations,
        fmt_f64(sol.report.residual),
        fmt_f64(cfg.sec(sol.report.seconds))
    );
    art.write("limit.csv", &csv)?;
    if cfg.get_bool("dump_fields")? {
        dump_velocity_pressure(art, "fields_limit.txt", &sol.u, &sol.p)?;
    }
    Ok(format!("{system} N={n} |u|={}", fmt_f64(norm_u)))
}

fn run_dns(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let epsilon = cfg.get_f64("epsilon")?;
    let a_eps = cfg.get_f64("a")?;
    let shape: HoleShape = cfg.get("hole").parse()?;
    let forcing = parse_forcing(cfg.get("f"))?;
    let opts = cfg.opts()?;
    let n_cap = match cfg.get("n_cap") {
        "auto" => {
            if dim == 2 {
                dns::DEFAULT_N_CAP_2D
            } else {
                dns::DEFAULT_N_CAP_3D
            }
        }
        other => other.parse().map_err(|_| {
            Error::Config(format!("key `n_cap`: expected integer or auto, got `{other}`"))
        })?,
    };
    let n = match cfg.get("n") {
        "auto" => dns::grid_for(dim, a_eps, &shape, n_cap, "dns")?,
        other => other.parse().map_err(|_| {
            Error::Config(format!("key `n`: expected integer or auto, got `{other}`"))
        })?,
    };
    let sol = dns::solve_dns(dim, epsilon, a_eps, shape, n, &forcing, &opts)?;
    let norm_u = crate::ops::l2_norm_vel(&sol.u);
    let norm_gradu = crate::ops::h1_seminorm(&sol.u);
    art.record(
        cfg,
        format!("dns eps={}", fmt_f64(epsilon)),
        dim,
        n,
        sol.report.iterations,
        sol.report.residual,
        sol.report.seconds,
    );
    let mut csv =
        String::from("epsilon,a_eps,sigma,N,holes,norm_u,norm_gradu,iterations,residual,seconds\n");
    let _ = writeln!(
        csv,
        "{},{},{},{n},{},{},{},{},{},{}",
        fmt_f64(epsilon),
        fmt_f64(a_eps),
        fmt_f64(sol.params.sigma),
        sol.geometry.n_holes(),
        fmt_f64(norm_u),
        fmt_f64(norm_gradu),
        sol.report.iterations,
        fmt_f64(sol.report.residual),
        fmt_f64(cfg.sec(sol.report.seconds))
    );
    art.write("dns.csv", &csv)?;
    if cfg.get_bool("dump_fields")? {
        dump_velocity_pressure(art, "fields_dns.txt", &sol.u, &sol.p)?;
    }
    Ok(format!(
        "dns eps={} holes={} N={n} |u|={}",
        fmt_f64(epsilon),
        sol.geometry.n_holes(),
        fmt_f64(norm_u)
    ))
}

fn run_compare(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let dim = cfg.get_usize("dim")?;
    let family = parse_family(dim, cfg.get("family"))?;
    let shape: HoleShape = cfg.get("hole").parse()?;
    let forcing = parse_forcing(cfg.get("f"))?;
    let eps = parse_list(cfg.get("eps"))?;
    let window_factor = cfg.get_f64("window_factor")?;
    let opts = cfg.opts()?;
    let n_cap = match cfg.get("n_cap") {
        "auto" => None,
        other => Some(other.parse().map_err(|_| {
            Error::Config(format!("key `n_cap`: expected integer or auto, got `{other}`"))
        })?),
    };
    let rows = dns::compare_regime(&family, &shape, &forcing, &eps, n_cap, window_factor, &opts)?;
    for r in &rows {
        art.record(
            cfg,
            format!("compare eps={}", fmt_f64(r.epsilon)),
            dim,
            r.n,
            r.iterations,
            0.0,
            r.seconds,
        );
    }
    art.write("comparison.csv", &comparison_csv(&rows, cfg))?;
    let worst = rows
        .iter()
        .map(|r| r.rel_l2_velocity)
        .fold(0.0, f64::max);
    Ok(format!(
        "compare {} rows, worst velocity error {}",
        rows.len(),
        fmt_f64(worst)
    ))
}

fn run_check(cfg: &RunConfig, art: &mut Artifacts) -> Result<(String, bool)> {
    let opts = cfg.opts()?;
    let reports = crate::acceptance::run_all(&art.dir, &opts);
    let mut csv = String::from("criterion,name,passed,observed,expected,detail,seconds\n");
    let mut all_passed = true;
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {:>2} {} — {}", r.index, r.name, r.detail);
        if !r.passed {
            all_passed = false;
            eprintln!(
                "FAIL check={} observed={} expected={}",
                r.name, r.observed, r.expected
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.index,
            r.name,
            u8::from(r.passed),
            r.observed.replace(',', ";"),
            r.expected.replace(',', ";"),
            r.detail.replace(',', ";"),
            fmt_f64(cfg.sec(r.seconds))
        );
    }
    art.write("check.csv", &csv)?;
    let summary = format!(
        "check: {}/{} criteria passed",
        reports.iter().filter(|r| r.passed).count(),
        reports.len()
    );
    Ok((summary, all_passed))
}

/// Entry point: parse, dispatch, report. Returns the process exit code.
pub fn run_main(args: &[String]) -> i32 {
    if args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", usage());
        return 0;
    }
    let cfg = match parse_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Err(e) = validate_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    let mut art = match Artifacts::new(&cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let outcome = match cfg.subcommand.as_str() {
        "classify" => run_classify(&cfg, &mut art).map(|s| (s, true)),
        "cell" => run_cell(&cfg, &mut art).map(|s| (s, true)),
        "sweep" => run_sweep(&cfg, &mut art).map(|s| (s, true)),
        "poincare" => run_poincare(&cfg, &mut art).map(|s| (s, true)),
        "limit" => run_limit(&cfg, &mut art).map(|s| (s, true)),
        "dns" => run_dns(&cfg, &mut art).map(|s| (s, true)),
        "compare" => run_compare(&cfg, &mut art).map(|s| (s, true)),
        "check" => run_check(&cfg, &mut art),
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    };
    match outcome {
        Ok((summary, ok)) => {
            if let Err(e) = art.finish(&cfg) {
                eprintln!("error: {e}");
                return 1;
            }
            println!("{summary}");
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse_exactly() {
        assert_eq!(parse_number("1/16").unwrap(), 0.0625);
        assert_eq!(parse_number("1/8").unwrap(), 0.125);
        assert_eq!(parse_number("3/4").unwrap(), 0.75);
        assert_eq!(parse_number("0.2").unwrap(), 0.2);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("x").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let args: Vec<String> = ["classify", "--dim", "2", "--family", "powerlaw:0.2,1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(parse_config(&args).is_ok());
        let bad: Vec<String> = ["classify", "--dim", "2", "--family", "powerlaw:0.2,1", "--frob", "3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        match parse_config(&bad) {
            Err(Error::Config(msg)) => assert!(msg.contains("frob"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn required_keys_and_defaults_resolve() {
        let args: Vec<String> = ["sweep", "--dim", "2"].iter().map(|s| s.to_string()).collect();
        let cfg = parse_config(&args).unwrap();
        assert_eq!(cfg.get("etas"), "0.2,0.1,0.05,0.025");
        assert_eq!(cfg.get("hole"), "disk:0.5");
        assert_eq!(cfg.get("tol"), "1e-8");
        let missing: Vec<String> = ["sweep"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(parse_config(&missing), Err(Error::Config(_))));
    }

    #[test]
    fn family_and_matrix_specs_parse() {
        let fam = parse_family(2, "powerlaw:0.2,1").unwrap();
        assert!(matches!(
            fam.kind,
            ScalingKind::PowerLaw { coeff, gamma } if coeff == 0.2 && gamma == 1.0
        ));
        let fam = parse_family(2, "logcritical:2").unwrap();
        assert!(matches!(fam.kind, ScalingKind::LogCritical { sigma_star } if sigma_star == 2.0));
        let a = parse_matrix(2, "scalar:0.3183").unwrap();
        assert_eq!(a[0][0], 0.3183);
        assert_eq!(a[1][1], 0.3183);
        assert_eq!(a[0][1], 0.0);
        let a = parse_matrix(2, "matrix:2,0.4,0.4,1.3").unwrap();
        assert_eq!(a[0][1], 0.4);
        assert!(parse_matrix(2, "matrix:1,2,3").is_err());
        assert!(parse_matrix(2, "frob:1").is_err());
    }
}
