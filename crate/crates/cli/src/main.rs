//! `rankid` command-line front end.
//!
//! Reports go to stdout (or `--out`), logs to stderr. Exit codes: 0 on success, 1 when
//! the mathematics fails on valid input, 2 for configuration and I/O problems.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rankid::diagnostics::{snr_sweep, SnrGrid};
use rankid::estimators::CirculantSystem;
use rankid::identifiability::{
    analytic_value, build_design_matrix, design_matrix_for, observable_design_matrix, rank_identifiability,
    tucker_identity_check, DesignMatrix, IdentifiabilityVerdict,
};
use rankid::latent::simulate;
use rankid::moments::required_sharing_sets;
use rankid::oracle::oracle_batch;
use rankid::pipeline::run_pipeline;
use rankid::seed::DEFAULT_SEED;
use rankid::{DenseTensor, Error, ModelSpec, MomentId, PipelineConfig, Result, Topology};

#[derive(Parser, Debug)]
#[command(name = "rankid", version, about = "Rank identifiability and moment-based rank estimation for tensor factorizations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
    Text,
}

/// Flags shared by every command. Each can also come from the `--config` file; flags win.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Common {
    /// JSON file with defaults for any of these options.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Model spec (JSON).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Input tensor (.tns text or binary).
    #[arg(long, global = true)]
    tensor: Option<PathBuf>,
    /// Output path; reports default to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true)]
    topology: Option<String>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    #[arg(long, global = true)]
    pairs: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    normalize: Option<bool>,
    #[arg(long, global = true)]
    block_mode: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; the default uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also report nearest-integer ranks.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    round: Option<bool>,
    /// Keep bootstrap samples in JSON output.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    samples: Option<bool>,
    /// Oracle observables separated by `;`, e.g. `1;1,2;G;G,1;E[Y]^2`.
    #[arg(long, global = true)]
    sets: Option<String>,
    /// Oracle Monte-Carlo replicates.
    #[arg(long, global = true)]
    mc: Option<usize>,
    /// SNR grid (JSON).
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Also write the noiseless rate tensor here (simulate).
    #[arg(long, global = true)]
    rate_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a tensor from the generative model.
    Simulate,
    /// Exact rank-identifiability verdict from the monomial design matrix.
    Identify,
    /// Bootstrap rank estimates from an observed tensor.
    Estimate,
    /// Monte-Carlo pure terms next to their closed forms.
    Oracle,
    /// Leading-order SNR over a grid of prior settings.
    Snr,
}

macro_rules! merge {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Common { config: None, $($f: $flags.$f.clone().or($file.$f.clone())),* }
    };
}

impl Common {
    fn resolve(self) -> Result<Common> {
        let Some(path) = &self.config else { return Ok(self) };
        let text = fs::read_to_string(path)?;
        let file: Common = serde_json::from_str(&text)?;
        Ok(merge!(
            self, file, model, tensor, out, format, topology, order, bootstrap, pairs, alpha, normalize,
            block_mode, seed, threads, round, samples, sets, mc, grid, rate_out
        ))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn spec(&self) -> Result<ModelSpec> {
        let path = self.model.as_ref().ok_or_else(|| Error::Config("--model is required".into()))?;
        ModelSpec::from_json(&fs::read_to_string(path)?)
    }

    fn pipeline(&self) -> PipelineConfig {
        let d = PipelineConfig::default();
        PipelineConfig {
            bootstrap: self.bootstrap.unwrap_or(d.bootstrap),
            n_pairs: self.pairs.unwrap_or(d.n_pairs),
            alpha: self.alpha.unwrap_or(d.alpha),
            normalize: self.normalize.unwrap_or(d.normalize),
            block_mode: self.block_mode.unwrap_or(d.block_mode),
            seed: self.seed(),
            ..d
        }
    }

    fn emit(&self, body: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, body)?,
            None => std::io::stdout().lock().write_all(body.as_bytes())?,
        }
        Ok(())
    }
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let spec = c.spec()?;
    let out = c.out.as_ref().ok_or_else(|| Error::Config("simulate needs --out for the tensor".into()))?;
    let sim = simulate(&spec, c.seed())?;
    sim.observed.save(out)?;
    if let Some(p) = &c.rate_out {
        sim.rate.save(p)?;
    }
    let y = &sim.observed;
    println!("entries\t{}", y.len());
    println!("dims\t{:?}", y.dims());
    println!("mean\t{:.6}", y.mean());
    println!("variance\t{:.6}", y.variance());
    Ok(())
}

fn monomial_table(dm: &DesignMatrix) -> String {
    let mut s = String::new();
    let width = dm.rows.iter().map(|r| r.moment.to_string().len()).max().unwrap_or(0).max(8);
    let _ = writeln!(s, "{:width$}  {}", "moment", dm.layout.names.join(" | "));
    for r in &dm.rows {
        let cells: Vec<String> = r
            .exponents
            .iter()
            .zip(&dm.layout.names)
            .map(|(e, n)| format!("{e:>w$}", w = n.len()))
            .collect();
        let _ = writeln!(s, "{:width$}  {}", r.moment.to_string(), cells.join(" | "));
    }
    s
}

fn verdict_lines(v: &IdentifiabilityVerdict) -> String {
    let word = if v.identifiable { "identifiable" } else { "not identifiable" };
    let mut s = format!("verdict: {word} (reduced rank {} of {})\n", v.reduced_rank, v.n_rank_symbols);
    for w in &v.witness {
        let terms: Vec<String> = w.terms.iter().map(|(c, m)| format!("{c}*log {m}")).collect();
        let _ = writeln!(s, "  {} -> rank part [{}]", terms.join(" + "), w.rank_part.join(", "));
    }
    s
}

fn tt_formula(p: usize, m: usize) -> String {
    let v = |modes: &[usize]| {
        let k: Vec<String> = modes.iter().map(|x| x.to_string()).collect();
        format!("v{{{}}}", k.join(","))
    };
    let (a, b, c, d) = if p == 1 {
        (v(&[1, 2]), v(&[3]), v(&[2]), v(&[1, 3]))
    } else if p == m - 1 && m == 3 {
        (v(&[2, 3]), v(&[1]), v(&[2]), v(&[1, 3]))
    } else if p == m - 1 {
        (v(&[m - 1, m]), v(&[m - 3]), v(&[m]), v(&[m - 3, m - 1]))
    } else {
        (v(&[p - 1, p, p + 1]), v(&[p - 1, p + 2]), v(&[p - 1, p + 1]), v(&[p - 1, p, p + 2]))
    };
    format!("r{p} = {a} {b} / ({c} {d})")
}

fn fmt_complex(re: f64, im: f64) -> String {
    let clean = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
    let (re, im) = (clean(re), clean(im));
    if im == 0.0 {
        format!("{re}")
    } else {
        format!("{re}{}{:.6}i", if im < 0.0 { "-" } else { "+" }, im.abs())
    }
}

#[derive(Serialize)]
struct IdentifyReport {
    topology: Topology,
    order: usize,
    design: DesignMatrix,
    verdict: IdentifiabilityVerdict,
    formulas: Vec<String>,
    eigenvalues: Vec<String>,
    identity_residuals: Vec<Vec<i64>>,
    observable_verdict: Option<IdentifiabilityVerdict>,
}

fn identify_report(c: &Common) -> Result<IdentifyReport> {
    let (topology, order, dm) = if c.model.is_some() {
        let spec = c.spec()?;
        (spec.topology, spec.order, build_design_matrix(&spec)?)
    } else {
        let top: Topology = c
            .topology
            .as_deref()
            .ok_or_else(|| Error::Config("identify needs --model or --topology with --order".into()))?
            .parse()?;
        let m = c.order.ok_or_else(|| Error::Config("--order is required with --topology".into()))?;
        if m < 2 {
            return Err(Error::Config(format!("order must be at least 2, got {m}")));
        }
        (top, m, design_matrix_for(top, m)?)
    };
    let verdict = rank_identifiability(&dm);
    let mut formulas = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut identity_residuals = Vec::new();
    let mut observable_verdict = None;
    match topology {
        Topology::CP if order >= 3 => formulas.push("r = v{1,2} E[Y]^2 / (v{1} v{2})".into()),
        Topology::TT if order >= 3 => formulas.extend((1..order).map(|p| tt_formula(p, order))),
        Topology::TR if order >= 3 => {
            formulas.push("xi_p = E[Y]^2 v{p,p+1} / (v{p} v{p+1})".into());
            formulas.push("log r_p + log r_{p-1} - log r_{p+1} = log(xi_p xi_{p-1} / xi_{p+1})".into());
            let sys = CirculantSystem::new(order)?;
            eigenvalues = sys.eigenvalues.iter().map(|l| fmt_complex(l.re, l.im)).collect();
        }
        Topology::Tucker => {
            identity_residuals = tucker_identity_check(&dm)?;
            observable_verdict = Some(rank_identifiability(&observable_design_matrix(topology, order)?));
        }
        _ => {}
    }
    Ok(IdentifyReport { topology, order, design: dm, verdict, formulas, eigenvalues, identity_residuals, observable_verdict })
}

fn cmd_identify(c: &Common) -> Result<()> {
    let r = identify_report(c)?;
    if c.format == Some(Format::Json) {
        return c.emit(&(serde_json::to_string_pretty(&r)? + "\n"));
    }
    let mut s = format!("topology: {}\norder: {}\n", r.topology, r.order);
    s += &monomial_table(&r.design);
    s += &verdict_lines(&r.verdict);
    for f in &r.formulas {
        let _ = writeln!(s, "estimator: {f}");
    }
    if !r.eigenvalues.is_empty() {
        let _ = writeln!(s, "circulant eigenvalues: {}", r.eigenvalues.join(", "));
    }
    for (p, res) in r.identity_residuals.iter().enumerate() {
        let nz: Vec<String> = res
            .iter()
            .zip(&r.design.layout.names)
            .filter(|(e, _)| **e != 0)
            .map(|(e, n)| format!("{e}*{n}"))
            .collect();
        let shown = if nz.is_empty() { "0".to_string() } else { nz.join(" + ") };
        let _ = writeln!(s, "identity residual mode {}: {shown}", p + 1);
    }
    if let Some(v) = &r.observable_verdict {
        s += "estimable observables only:\n";
        s += &verdict_lines(v);
    }
    c.emit(&s)
}

fn cmd_estimate(c: &Common) -> Result<()> {
    let tensor = c.tensor.as_ref().ok_or_else(|| Error::Config("estimate needs --tensor".into()))?;
    let topology: Topology = match (&c.topology, &c.model) {
        (Some(t), _) => t.parse()?,
        (None, Some(_)) => c.spec()?.topology,
        (None, None) => return Err(Error::Config("estimate needs --topology or --model".into())),
    };
    if !Path::new(tensor).exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("tensor file {} not found", tensor.display()),
        )));
    }
    let y = DenseTensor::load(tensor)?;
    let rep = run_pipeline(&y, topology, &c.pipeline())?;
    let round = c.round.unwrap_or(false);
    match c.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            c.emit(&String::from_utf8_lossy(&buf))
        }
        Format::Json => {
            let mut v: serde_json::Value = serde_json::from_str(&rep.to_json(c.samples.unwrap_or(false))?)?;
            if round {
                let rounded: Vec<Option<i64>> =
                    rep.estimates.iter().map(|e| e.median.map(|m| m.round() as i64)).collect();
                v["rounded"] = serde_json::to_value(rounded)?;
            }
            c.emit(&(serde_json::to_string_pretty(&v)? + "\n"))
        }
        Format::Text => {
            let mut s = format!("topology: {}\n", rep.topology);
            for e in &rep.estimates {
                match (e.median, e.ci) {
                    (Some(m), Some([lo, hi])) => {
                        let _ = write!(s, "{}\t{m:.4}\t[{lo:.4}, {hi:.4}]", e.label);
                        if round {
                            let _ = write!(s, "\t{}", m.round() as i64);
                        }
                    }
                    _ => {
                        let _ = write!(s, "{}\tunavailable", e.label);
                    }
                }
                let _ = writeln!(s, "\tinvalid {}", e.n_invalid);
            }
            if let Some(r) = rep.max_circulant_residual {
                let _ = writeln!(s, "circulant residual\t{r:.3e}");
            }
            c.emit(&s)
        }
    }
}

#[derive(Serialize)]
struct OracleRow {
    moment: MomentId,
    analytic: f64,
    estimate: f64,
    std_error: f64,
    z: f64,
}

fn cmd_oracle(c: &Common) -> Result<()> {
    let spec = c.spec()?;
    let moments: Vec<MomentId> = match &c.sets {
        Some(s) => s.split(';').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect::<Result<_>>()?,
        None if spec.topology == Topology::Tucker => rankid::identifiability::design_moments(spec.topology, spec.order),
        None => required_sharing_sets(&spec)?.into_iter().map(MomentId::Pure).collect(),
    };
    let rows: Vec<OracleRow> = if moments.is_empty() {
        Vec::new()
    } else {
        let est = oracle_batch(&spec, &moments, c.mc.unwrap_or(10_000), c.seed())?;
        moments
            .iter()
            .zip(est)
            .map(|(&m, e)| {
                let analytic = analytic_value(&spec, m)?;
                let z = if e.std_error > 0.0 { (e.estimate - analytic) / e.std_error } else { 0.0 };
                Ok(OracleRow { moment: m, analytic, estimate: e.estimate, std_error: e.std_error, z })
            })
            .collect::<Result<_>>()?
    };
    match c.format.unwrap_or(Format::Text) {
        Format::Json => c.emit(&(serde_json::to_string_pretty(&rows)? + "\n")),
        Format::Csv | Format::Text => {
            let sep = if c.format == Some(Format::Csv) { "," } else { "\t" };
            let mut s = ["moment", "analytic", "estimate", "std_error", "z"].join(sep) + "\n";
            for r in &rows {
                let name = if sep == "," { format!("\"{}\"", r.moment) } else { r.moment.to_string() };
                let _ = writeln!(
                    s,
                    "{name}{sep}{:.6e}{sep}{:.6e}{sep}{:.3e}{sep}{:.3}",
                    r.analytic, r.estimate, r.std_error, r.z
                );
            }
            c.emit(&s)
        }
    }
}

fn cmd_snr(c: &Common) -> Result<()> {
    let grid = match &c.grid {
        Some(p) => serde_json::from_str::<SnrGrid>(&fs::read_to_string(p)?)?,
        None => SnrGrid::default(),
    };
    let sweep = snr_sweep(&grid)?;
    match c.format.unwrap_or(Format::Csv) {
        Format::Json => c.emit(&(serde_json::to_string_pretty(&sweep)? + "\n")),
        _ => {
            let mut buf = Vec::new();
            sweep.write_csv(&mut buf)?;
            c.emit(&String::from_utf8_lossy(&buf))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common.resolve()?;
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate => cmd_simulate(&c),
        Command::Identify => cmd_identify(&c),
        Command::Estimate => cmd_estimate(&c),
        Command::Oracle => cmd_oracle(&c),
        Command::Snr => cmd_snr(&c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rankid: {e}");
            ExitCode::from(if e.is_config_or_io() { 2 } else { 1 })
        }
    }
}
