use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use skipfree::excursion::{self, ExcursionError};
use skipfree::exit::{self, ExitError};
use skipfree::ladder::{self, LadderData, LadderError};
use skipfree::mc::{self, SimConfig, SimEstimate};
use skipfree::model::{self, ChainSpec, GeoTail};
use skipfree::scale::{ScaleError, ScaleTable};

mod model_file;
mod output;

use model_file::{load_spec, ModelFile};
use output::{json_num, write_record, Cell, Format, Table};

/// Statistical acceptance threshold for `simulate`, in standard errors.
const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "skipfree", version, about = "Fluctuation identities for upwards skip-free Lévy chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format; tables default to csv, records to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Aligned columns for csv, indented json.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drift direction, ψ'(0+), Φ(0) and Φ'(0+).
    Classify(ModelArg),
    /// Laplace exponent ψ and its derivative.
    Psi {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
    },
    /// Right inverse Φ of the Laplace exponent.
    Phi {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
    },
    /// Scale functions W^(q), Z^(q) and the scaled W on the lattice.
    Scale {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long)]
        n_max: usize,
    },
    /// First-passage and two-sided exit laws.
    Exit {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        #[arg(long)]
        y: f64,
    },
    /// Probability of ever going below -x.
    Ruin {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
    },
    /// Wiener–Hopf factors at an exponential time.
    Wh {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
    },
    /// Ladder-height data of the chain.
    Ladder(ModelArg),
    /// Parent chain from descending-ladder data.
    Reconstruct {
        /// Ascending ladder killing rate.
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        /// Descending ladder killing rate.
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        /// φ_1, φ_2, ...
        #[arg(long, value_delimiter = ',')]
        phi: Vec<f64>,
        /// Geometric tail of φ as `k0,c,a`; k0 must follow the listed coefficients.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        phi_tail: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        /// Also write the reconstructed model file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Excursion statistics, jump-count law and inverse local time exponent.
    Excursion {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 20)]
        k_max: usize,
        /// Print the generator of the reflected chain on {0, ..., m} instead.
        #[arg(long)]
        generator: Option<usize>,
    },
    /// Law of the infimum at an exponential time.
    Infimum {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 20)]
        k_max: usize,
    },
    /// Monte Carlo check of the analytic values.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        #[arg(long)]
        y: Option<f64>,
        /// Rate of the exponential horizon for the supremum law.
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value_t = 200)]
        level_cap: usize,
    },
}

/// A computed result that fails an internal consistency check.
#[derive(Debug)]
struct Inconsistent(String);

impl fmt::Display for Inconsistent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical inconsistency: {}", self.0)
    }
}

impl std::error::Error for Inconsistent {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Inconsistent>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<LadderError>() {
            if matches!(
                e,
                LadderError::NegativeMass { .. } | LadderError::NoRoot { .. } | LadderError::Inconsistent(_)
            ) {
                return 3;
            }
        }
        if let Some(ScaleError::Overflow(_)) = cause.downcast_ref::<ScaleError>() {
            return 3;
        }
        if let Some(ExitError::Scale(ScaleError::Overflow(_))) = cause.downcast_ref::<ExitError>() {
            return 3;
        }
    }
    2
}

struct Out {
    format: Option<Format>,
    pretty: bool,
}

impl Out {
    fn table(&self, table: &Table) -> Result<()> {
        let mut stdout = io::stdout().lock();
        table.write(&mut stdout, self.format.unwrap_or(Format::Csv), self.pretty)?;
        Ok(stdout.flush()?)
    }

    fn record(&self, record: &Value) -> Result<()> {
        let mut stdout = io::stdout().lock();
        write_record(&mut stdout, record, self.format.unwrap_or(Format::Json), self.pretty)?;
        Ok(stdout.flush()?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Out {
        format: cli.format,
        pretty: cli.pretty,
    };
    match run(cli.command, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command, out: &Out) -> Result<()> {
    match command {
        Command::Classify(m) => {
            let c = model::classify(&load_spec(&m.model)?);
            out.record(&json!({
                "direction": c.direction.as_str(),
                "psi_prime_0": json_num(c.psi_prime_0),
                "phi_0": json_num(c.phi_0),
                "phi_prime_0": json_num(c.phi_prime_0),
            }))
        }
        Command::Psi { model: m, beta } => {
            let spec = load_spec(&m.model)?;
            let mut t = Table::new(&["beta", "psi", "psi_prime"]);
            for b in beta {
                if !(b >= 0.0) {
                    bail!("beta must be nonnegative, got {b}");
                }
                t.push(vec![b.into(), model::psi(&spec, b).into(), model::psi_prime(&spec, b).into()]);
            }
            out.table(&t)
        }
        Command::Phi { model: m, q } => {
            let spec = load_spec(&m.model)?;
            let mut t = Table::new(&["q", "phi", "phi_prime"]);
            for q in q {
                if !(q >= 0.0) {
                    bail!("q must be nonnegative, got {q}");
                }
                t.push(vec![q.into(), model::phi(&spec, q).into(), model::phi_prime(&spec, q).into()]);
            }
            out.table(&t)
        }
        Command::Scale { model: m, q, n_max } => {
            let spec = load_spec(&m.model)?;
            check_rate(q)?;
            let table = ScaleTable::new(&spec, q, n_max);
            if let Some(k) = table.overflow_index() {
                eprintln!("warning: W^(q) overflows from k = {k}; see W_scaled");
            }
            let mut t = Table::new(&["k", "x", "W", "Z", "W_scaled"]);
            for k in 0..=n_max {
                t.push(vec![
                    k.into(),
                    (k as f64 * spec.h()).into(),
                    table.w()[k].into(),
                    table.z()[k].into(),
                    table.w_scaled()[k].into(),
                ]);
            }
            out.table(&t)
        }
        Command::Exit { model: m, q, x, y } => {
            let spec = load_spec(&m.model)?;
            check_rate(q)?;
            let laws = exit::exit_report(&spec, q, x, y)?;
            let mut t = Table::new(&["quantity", "value"]);
            for law in laws {
                t.push(vec![law.kind.as_str().into(), law.value.into()]);
            }
            out.table(&t)
        }
        Command::Ruin { model: m, x } => {
            let spec = load_spec(&m.model)?;
            let mut t = Table::new(&["x", "ruin_prob"]);
            for x in x {
                if !(x >= 0.0) {
                    bail!("x must be nonnegative, got {x}");
                }
                t.push(vec![x.into(), exit::ruin_prob(&spec, x).into()]);
            }
            out.table(&t)
        }
        Command::Wh { model: m, p, alpha, beta } => {
            let spec = load_spec(&m.model)?;
            if !(p > 0.0) {
                bail!("p must be positive, got {p}");
            }
            if !(alpha >= 0.0 && beta >= 0.0) {
                bail!("alpha and beta must be nonnegative");
            }
            let mut t = Table::new(&["quantity", "value"]);
            let rows = [
                ("sup_joint_lt", ladder::sup_joint_lt(&spec, p, alpha, beta)),
                ("inf_joint_lt", ladder::inf_joint_lt(&spec, p, alpha, beta)),
                ("kappa_star", ladder::kappa_star(&spec, p + alpha, beta)),
                ("kappa_hat", ladder::kappa_hat(&spec, p + alpha, beta)),
                ("ascending_exponent", ladder::ascending_exponent(&spec, beta)),
                ("descending_exponent", ladder::descending_exponent(&spec, beta)),
            ];
            for (name, v) in rows {
                t.push(vec![name.into(), v.into()]);
            }
            out.table(&t)
        }
        Command::Ladder(m) => {
            let data = ladder::extract_ladder(&load_spec(&m.model)?)?;
            out.record(&ladder_json(&data))
        }
        Command::Reconstruct {
            gamma,
            q,
            phi,
            phi_tail,
            h,
            out: path,
        } => {
            let phi_tail = match phi_tail.as_deref() {
                None => None,
                Some(&[k0, c, a]) => {
                    if !(k0 >= 1.0 && k0.fract() == 0.0) {
                        bail!("phi tail k0 must be a positive integer, got {k0}");
                    }
                    Some(GeoTail { k0: k0 as usize, c, a })
                }
                Some(_) => bail!("--phi-tail takes k0,c,a"),
            };
            let data = LadderData {
                h,
                gamma_asc: gamma,
                q_desc: q,
                phi,
                phi_tail,
                x_factor: 1.0,
            };
            let (spec, x) = ladder::reconstruct_parent(&data)?;
            let file = ModelFile::from_spec(&spec);
            if let Some(path) = path {
                let text = serde_json::to_string_pretty(&file)?;
                std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            out.record(&json!({ "model": serde_json::to_value(&file)?, "x": json_num(x) }))
        }
        Command::Excursion {
            model: m,
            theta,
            k_max,
            generator,
        } => {
            let spec = load_spec(&m.model)?;
            if let Some(size) = generator {
                if size == 0 {
                    bail!("--generator needs at least one state above 0");
                }
                let columns: Vec<String> =
                    std::iter::once("state".to_string()).chain((0..=size).map(|s| format!("to_{s}"))).collect();
                let names: Vec<&str> = columns.iter().map(String::as_str).collect();
                let mut t = Table::new(&names);
                for (s, row) in excursion::reflected_generator(&spec, size).into_iter().enumerate() {
                    t.push(std::iter::once(Cell::from(s)).chain(row.into_iter().map(Cell::from)).collect());
                }
                return out.table(&t);
            }
            if !(theta >= 0.0) {
                bail!("theta must be nonnegative, got {theta}");
            }
            let stats = excursion::excursion_stats(&spec).map_err(excursion_error)?;
            let ilt = excursion::ilt_exponent(&spec, theta).map_err(excursion_error)?;
            if ilt.truncation_warning {
                eprintln!(
                    "warning: inverse local time series not converged after {} terms (tail {:e})",
                    ilt.terms, ilt.tail
                );
            }
            let mut t = Table::new(&["quantity", "value"]);
            t.push(vec!["expected_length".into(), stats.expected_length.into()]);
            t.push(vec!["p_infinite".into(), stats.p_infinite.into()]);
            t.push(vec![format!("ilt_exponent({})", output::fmt_num(theta)).into(), ilt.value.into()]);
            if k_max > 0 {
                let pmf = excursion::n_pmf(&spec, k_max).map_err(excursion_error)?;
                for (i, p) in pmf.into_iter().enumerate() {
                    t.push(vec![format!("P(N={})", i + 1).into(), p.into()]);
                }
            }
            out.table(&t)
        }
        Command::Infimum { model: m, q, k_max } => {
            let spec = load_spec(&m.model)?;
            let pmf = exit::inf_pmf_table(&spec, q, k_max)?;
            let mut t = Table::new(&["k", "x", "pmf", "tail"]);
            for (k, p) in pmf.into_iter().enumerate() {
                let tail = exit::down_passage_lt(&spec, q, k as f64 * spec.h())?;
                t.push(vec![k.into(), (k as f64 * spec.h()).into(), p.into(), tail.into()]);
            }
            out.table(&t)
        }
        Command::Simulate {
            model: m,
            q,
            x,
            y,
            p,
            paths,
            seed,
            workers,
            level_cap,
        } => {
            let spec = load_spec(&m.model)?;
            check_rate(q)?;
            let cfg = SimConfig::new(seed, paths).with_workers(workers).with_level_cap(level_cap);
            let y = y.unwrap_or(spec.h());
            let rows = simulate(&spec, q, x, y, p, &cfg)?;
            let mut t = Table::new(&["quantity", "analytic", "mc_mean", "mc_stderr", "z"]);
            let mut outliers = Vec::new();
            for (name, analytic, est) in &rows {
                if !est.covers(*analytic, Z_LIMIT) {
                    outliers.push(name.clone());
                }
                t.push(vec![
                    name.clone().into(),
                    (*analytic).into(),
                    est.mean.into(),
                    est.std_error.into(),
                    est.z_score(*analytic).into(),
                ]);
            }
            out.table(&t)?;
            if !outliers.is_empty() {
                return Err(Inconsistent(format!(
                    "outside {Z_LIMIT} standard errors: {}",
                    outliers.join(", ")
                ))
                .into());
            }
            Ok(())
        }
    }
}

fn check_rate(q: f64) -> Result<()> {
    if !(q >= 0.0 && q.is_finite()) {
        bail!("q must be a nonnegative number, got {q}");
    }
    Ok(())
}

fn excursion_error(e: ExcursionError) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn ladder_json(d: &LadderData) -> Value {
    json!({
        "h": json_num(d.h),
        "gamma_asc": json_num(d.gamma_asc),
        "q_desc": json_num(d.q_desc),
        "phi": d.phi.iter().map(|&v| json_num(v)).collect::<Vec<_>>(),
        "phi_tail": d.phi_tail.map(|t| json!({"k0": t.k0, "c": json_num(t.c), "a": json_num(t.a)})),
        "x": json_num(d.x_factor),
    })
}

type Row = (String, f64, SimEstimate);

fn simulate(spec: &ChainSpec, q: f64, x: f64, y: f64, p: f64, cfg: &SimConfig) -> Result<Vec<Row>> {
    let mut rows: Vec<Row> = Vec::new();
    if spec.down_mass() > 0.0 || q > 0.0 {
        let e = mc::estimate_two_sided(spec, q, x, y, cfg)?;
        rows.push(("two_sided_up".into(), exit::two_sided_up(spec, q, x, y)?, e.up));
        rows.push(("down_before_up".into(), exit::down_before_up(spec, q, x, y)?, e.down));
    }
    if q > 0.0 {
        let e = mc::estimate_ruin_lt(spec, q, x, cfg)?;
        rows.push(("down_passage_lt".into(), exit::down_passage_lt(spec, q, x)?, e));
    } else if model::classify(spec).direction == model::Direction::ToPlusInfinity {
        let e = mc::estimate_ruin_lt(spec, 0.0, x, cfg)?;
        rows.push(("ruin_prob".into(), exit::ruin_prob(spec, x), e));
    }
    if !(p > 0.0) {
        bail!("p must be positive, got {p}");
    }
    let sup = mc::estimate_sup_at_exp(spec, p, cfg)?;
    rows.push(("sup_failure".into(), exit::sup_at_exp(spec, p), sup.failure));
    if let Ok(stats) = excursion::excursion_stats(spec) {
        let e = mc::estimate_excursion(spec, cfg)?;
        rows.push(("excursion_p_infinite".into(), stats.p_infinite, e.infinite_fraction));
        if stats.expected_length.is_finite() {
            rows.push(("excursion_length".into(), stats.expected_length, e.length));
            rows.push(("excursion_jumps".into(), stats.expected_length * spec.total_rate(), e.jumps));
        }
    }
    Ok(rows)
}
