//! Command implementations behind the `mixscale` binary: data ingestion,
//! run configuration, and one function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::divergence::{kl_mixed, l1_mixed, DivergenceConfig, DivergenceEstimate};
use crate::error::{Error, Result};
use crate::lab::{
    canonical_truth, contraction_experiment, lemma_report_csv, lemma_report_text, random_lemma_suite,
    ContractionConfig, Lemma,
};
use crate::mixture::LatentMixture;
use crate::rng::substream;
use crate::rounding::{enumerate_outcomes, MixedDensity};
use crate::sampler::{predictive_density, run, DpConfig, NiwParams, PosteriorDraws};
use crate::schema::{Levels, MixedPoint, MixedSchema};

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "MIXSCALE_SEED";

/// A parsed data file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: MixedSchema,
    pub rows: Vec<MixedPoint>,
    /// SHA-256 of the raw file bytes, hex
    pub digest: String,
    /// (1-based data row number, reason)
    pub rejected: Vec<(usize, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a CSV file whose header names every schema column.
pub fn ingest(path: &Path, schema: &MixedSchema) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    ingest_bytes(&bytes, schema)
}

pub fn ingest_bytes(bytes: &[u8], schema: &MixedSchema) -> Result<Dataset> {
    let digest = sha256_hex(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let cont_idx: Vec<usize> = schema
        .continuous()
        .iter()
        .filter_map(|c| {
            let i = find(&c.name);
            if i.is_none() {
                missing.push(c.name.clone());
            }
            i
        })
        .collect();
    let disc_idx: Vec<usize> = schema
        .discrete()
        .iter()
        .filter_map(|d| {
            let i = find(&d.name);
            if i.is_none() {
                missing.push(d.name.clone());
            }
            i
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing columns: {}", missing.join(", "))));
    }

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 1;
        let record = match record {
            Ok(rec) => rec,
            Err(e) => {
                rejected.push((line, format!("unreadable row: {e}")));
                continue;
            }
        };
        match parse_row(&record, schema, &cont_idx, &disc_idx) {
            Ok(p) => rows.push(p),
            Err(reason) => rejected.push((line, reason)),
        }
    }
    let total = rows.len() + rejected.len();
    if total == 0 {
        return Err(Error::Data("data file has no rows".into()));
    }
    if 2 * rejected.len() > total {
        let sample: Vec<String> = rejected
            .iter()
            .take(5)
            .map(|(l, why)| format!("row {l}: {why}"))
            .collect();
        return Err(Error::Data(format!(
            "{} of {total} rows rejected (first: {})",
            rejected.len(),
            sample.join("; ")
        )));
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
        digest,
        rejected,
    })
}

fn parse_row(
    record: &csv::StringRecord,
    schema: &MixedSchema,
    cont_idx: &[usize],
    disc_idx: &[usize],
) -> std::result::Result<MixedPoint, String> {
    let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
        match record.get(i) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(format!("{name}: missing value")),
        }
    };
    let mut y1 = Vec::with_capacity(cont_idx.len());
    for (c, &i) in schema.continuous().iter().zip(cont_idx) {
        let s = field(i, &c.name)?;
        let v: f64 = s.parse().map_err(|_| format!("{}: not a number: {s:?}", c.name))?;
        if !v.is_finite() {
            return Err(format!("{}: not finite", c.name));
        }
        if !c.map.in_range(v) {
            return Err(format!("{}: value {v} outside the map range", c.name));
        }
        y1.push(v);
    }
    let mut y2 = Vec::with_capacity(disc_idx.len());
    for (d, &i) in schema.discrete().iter().zip(disc_idx) {
        let s = field(i, &d.name)?;
        let v: u64 = s
            .parse()
            .map_err(|_| format!("{}: not a nonnegative integer: {s:?}", d.name))?;
        if let Levels::Finite(q) = d.levels {
            if v >= q {
                return Err(format!("{}: level out of range ({v} >= {q})", d.name));
            }
        }
        y2.push(v);
    }
    Ok(MixedPoint::new(y1, y2))
}

/// Writes points as CSV with the schema's column names.
pub fn write_points<W: std::io::Write>(schema: &MixedSchema, points: &[MixedPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = schema.continuous().iter().map(|c| c.name.as_str()).collect();
    header.extend(schema.discrete().iter().map(|d| d.name.as_str()));
    w.write_record(&header)?;
    for p in points {
        let mut rec: Vec<String> = p.y1.iter().map(|v| format!("{v}")).collect();
        rec.extend(p.y2.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Optional settings file; every field can also be given as a flag, and
/// flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub k_max: Option<usize>,
    pub alpha: Option<f64>,
    pub truncation_sweeps: Option<usize>,
    pub kappa0: Option<f64>,
    pub nu0: Option<f64>,
    pub tail_tol: Option<f64>,
    pub quad_rel_tol: Option<f64>,
    pub mc_samples: Option<usize>,
    pub compact_min_weight: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            schema, data, out, seed, threads, iterations, burn_in, thin, k_max, alpha, truncation_sweeps,
            kappa0, nu0, tail_tol, quad_rel_tol, mc_samples, compact_min_weight
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn dp_config(&self) -> DpConfig {
        let d = DpConfig::default();
        DpConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            k_max: self.k_max.unwrap_or(d.k_max),
            truncation_sweeps: self.truncation_sweeps.unwrap_or(d.truncation_sweeps),
            iterations: self.iterations.unwrap_or(d.iterations),
            burn_in: self.burn_in.unwrap_or(d.burn_in.min(self.iterations.unwrap_or(d.iterations) / 2)),
            thin: self.thin.unwrap_or(d.thin),
            seed: self.seed(),
            ..d
        }
    }

    pub fn divergence_config(&self) -> DivergenceConfig {
        let d = DivergenceConfig::default();
        DivergenceConfig {
            tail_mass_tol: self.tail_tol.unwrap_or(d.tail_mass_tol),
            quad_rel_tol: self.quad_rel_tol.unwrap_or(d.quad_rel_tol),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            seed: self.seed(),
            ..d
        }
    }

    /// Checks that referenced input paths exist.
    pub fn validate(&self) -> Result<()> {
        for p in [&self.schema, &self.data].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Precondition(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Master seed for all randomness
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Settings file (TOML); flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Omitted discrete tail mass per density [default: 1e-6]
    #[arg(long, global = true)]
    pub tail_tol: Option<f64>,
    /// Relative tolerance of divergence quadrature [default: 1e-8]
    #[arg(long, global = true)]
    pub quad_rel_tol: Option<f64>,
    /// Monte Carlo sample size for divergences [default: 20000]
    #[arg(long, global = true)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "mixscale", version, about = "Rounding-prior density estimation for mixed-scale data")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the Dirichlet-process rounding model to a data file
    Fit(FitArgs),
    /// Evaluate a density file at points or on a grid
    Density(DensityArgs),
    /// Draw samples from a density file
    Sample(SampleArgs),
    /// KL divergence and L1 distance between two density files
    Divergence(DivergenceArgs),
    /// Lemma checks and the contraction experiment
    Lab(LabArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Schema file (TOML)
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Data file (CSV with header)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total Gibbs sweeps including burn-in [default: 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded before draws are kept [default: min(1000, iterations/2)]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Keep every n-th sweep after burn-in [default: 10]
    #[arg(long)]
    pub thin: Option<usize>,
    /// Stick-breaking truncation level [default: 30]
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Dirichlet-process concentration [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Truncated-normal coordinate sweeps per Gibbs sweep [default: 1]
    #[arg(long)]
    pub truncation_sweeps: Option<usize>,
    /// Prior mean precision scale [default: 0.01]
    #[arg(long)]
    pub kappa0: Option<f64>,
    /// Prior degrees of freedom [default: p + 2]
    #[arg(long)]
    pub nu0: Option<f64>,
    /// Predictive components below this weight are dropped from the
    /// predictive density file [default: 1e-8]
    #[arg(long)]
    pub compact_min_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Density file (TOML)
    #[arg(long)]
    pub density: PathBuf,
    /// CSV of points to evaluate
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub points: Option<PathBuf>,
    /// Grid LO:HI:N applied to every continuous column, crossed with every
    /// discrete outcome kept by the tail tolerance
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Output CSV (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Density file (TOML)
    #[arg(long)]
    pub density: PathBuf,
    /// Number of draws
    #[arg(long, short = 'n', default_value_t = 1000)]
    pub n: usize,
    /// Output CSV (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Kl,
    L1,
    Both,
}

#[derive(Debug, Args)]
pub struct DivergenceArgs {
    /// Reference density file
    #[arg(long)]
    pub f0: PathBuf,
    /// Compared density file
    #[arg(long)]
    pub f: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Both)]
    pub metric: Metric,
    /// Output file (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabArgs {
    #[command(subcommand)]
    pub experiment: Experiment,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// KL non-expansion of the rounding map on random instances
    Lemma1(LemmaArgs),
    /// L1 non-expansion of the rounding map on random instances
    Lemma2(LemmaArgs),
    /// Posterior L1 error against the canonical truth across sample sizes
    Contraction(ContractionArgs),
}

#[derive(Debug, Args)]
pub struct LemmaArgs {
    /// Number of random instances
    #[arg(long, default_value_t = 100)]
    pub random: usize,
    /// Largest latent dimension
    #[arg(long, default_value_t = 3)]
    pub p_max: usize,
    /// Output directory for report.txt and report.csv (default: stdout only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContractionArgs {
    /// Comma-separated sample sizes
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub replications: usize,
    #[arg(long, default_value_t = 400)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 30)]
    pub k_max: usize,
    /// Exponent t of the reference curve n^(-1/2) (log n)^t
    #[arg(long, default_value_t = 0.5)]
    pub reference_log_power: f64,
    /// Output directory for report.txt and report.csv (default: stdout only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(RunConfig {
            seed: self.seed,
            threads: self.threads,
            tail_tol: self.tail_tol,
            quad_rel_tol: self.quad_rel_tol,
            mc_samples: self.mc_samples,
            ..RunConfig::default()
        }))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Error::Precondition(m)) if m.starts_with("usage:") => {
            eprintln!("error: {m}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = cli.common.run_config()?;
    if let Some(t) = cfg.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match cli.command {
        Command::Fit(a) => {
            let flags = RunConfig {
                schema: a.schema,
                data: a.data,
                out: a.out,
                iterations: a.iterations,
                burn_in: a.burn_in,
                thin: a.thin,
                k_max: a.k_max,
                alpha: a.alpha,
                truncation_sweeps: a.truncation_sweeps,
                kappa0: a.kappa0,
                nu0: a.nu0,
                compact_min_weight: a.compact_min_weight,
                ..RunConfig::default()
            };
            cmd_fit(&cfg.overlay(flags)).map(|_| ())
        }
        Command::Density(a) => {
            let text = cmd_density(&a.density, a.points.as_deref(), a.grid.as_deref(), &cfg)?;
            emit(a.out.as_deref(), &text)
        }
        Command::Sample(a) => {
            let text = cmd_sample(&a.density, a.n, cfg.seed())?;
            emit(a.out.as_deref(), &text)
        }
        Command::Divergence(a) => {
            let text = cmd_divergence(&a.f0, &a.f, a.metric, &cfg)?;
            emit(a.out.as_deref(), &text)
        }
        Command::Lab(a) => cmd_lab(a.experiment, &cfg),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Paths written by [`cmd_fit`].
#[derive(Debug, Clone)]
pub struct FitArtifacts {
    pub draws: PathBuf,
    pub metadata: PathBuf,
    pub predictive: Option<PathBuf>,
    pub marginals: Option<PathBuf>,
    pub rejected: PathBuf,
}

/// Ingests the data, runs the sampler and writes draws, metadata, the
/// predictive density and a discrete-marginal fit table. On sampler failure
/// an `error.txt` with diagnostics is written before the error is returned.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitArtifacts> {
    let schema_path = cfg
        .schema
        .as_ref()
        .ok_or_else(|| Error::Precondition("usage: fit needs --schema".into()))?;
    let data_path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Precondition("usage: fit needs --data".into()))?;
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Precondition("usage: fit needs --out".into()))?;
    cfg.validate()?;
    fs::create_dir_all(out)?;

    let schema = MixedSchema::from_toml_str(&fs::read_to_string(schema_path)?)?;
    let data = ingest(data_path, &schema)?;
    let rejected = out.join("rejected.csv");
    {
        let mut w = csv::Writer::from_path(&rejected)?;
        w.write_record(["row", "reason"])?;
        for (row, why) in &data.rejected {
            w.write_record([row.to_string(), why.clone()])?;
        }
        w.flush()?;
    }

    let mut niw = NiwParams::from_data(&data.rows, &schema)?;
    if cfg.kappa0.is_some() || cfg.nu0.is_some() {
        niw = NiwParams::new(
            niw.m0.clone(),
            cfg.kappa0.unwrap_or(niw.kappa0),
            cfg.nu0.unwrap_or(niw.nu0),
            niw.psi(),
        )?;
    }
    let dp = cfg.dp_config();
    let draws = match run(&data.rows, &schema, &niw, &dp) {
        Ok(d) => d,
        Err(e) => {
            fs::write(
                out.join("error.txt"),
                format!("sampler failed: {e}\nseed = {}\nrows = {}\ndigest = {}\n", dp.seed, data.len(), data.digest),
            )?;
            return Err(e);
        }
    };

    let draws_path = out.join("draws.txt");
    fs::write(&draws_path, draws.draws_text())?;
    let metadata = out.join("metadata.json");
    fs::write(&metadata, fit_metadata(&draws, &data))?;

    let (mut predictive_path, mut marginals_path) = (None, None);
    if !draws.draws.is_empty() {
        let full = predictive_density(&draws)?;
        let compact = MixedDensity::new(
            schema.clone(),
            full.latent().compact(cfg.compact_min_weight.unwrap_or(1e-8)),
        )?;
        let p = out.join("predictive.toml");
        fs::write(&p, compact.to_toml_string())?;
        predictive_path = Some(p);
        let m = out.join("marginals.csv");
        fs::write(&m, marginal_table(&data, &full, cfg.divergence_config().tail_mass_tol)?)?;
        marginals_path = Some(m);
    }
    Ok(FitArtifacts {
        draws: draws_path,
        metadata,
        predictive: predictive_path,
        marginals: marginals_path,
        rejected,
    })
}

fn fit_metadata(draws: &PosteriorDraws, data: &Dataset) -> String {
    let inner: serde_json::Value = serde_json::from_str(&draws.metadata_json()).expect("valid JSON");
    let mut obj = serde_json::Map::new();
    obj.insert("sampler".into(), inner);
    obj.insert("data_file_sha256".into(), data.digest.clone().into());
    obj.insert("rows_used".into(), data.len().into());
    obj.insert("rows_rejected".into(), data.rejected.len().into());
    serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("serializable")
}

/// Empirical versus predictive probability of every discrete outcome.
fn marginal_table(data: &Dataset, f: &MixedDensity, tail_tol: f64) -> Result<String> {
    let schema = f.schema();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = schema.discrete().iter().map(|d| d.name.clone()).collect();
    header.push("empirical".into());
    header.push("predictive".into());
    w.write_record(&header)?;
    if schema.p2() > 0 {
        let mut freq: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for y in &data.rows {
            *freq.entry(y.y2.clone()).or_default() += 1.0 / data.len() as f64;
        }
        let bounds = f.support_bounds(tail_tol);
        let mut outcomes: BTreeMap<Vec<u64>, ()> = enumerate_outcomes(&bounds).into_iter().map(|o| (o, ())).collect();
        for k in freq.keys() {
            outcomes.insert(k.clone(), ());
        }
        for y2 in outcomes.keys() {
            let mut rec: Vec<String> = y2.iter().map(|v| v.to_string()).collect();
            rec.push(format!("{:.6e}", freq.get(y2).copied().unwrap_or(0.0)));
            rec.push(format!("{:.6e}", f.discrete_marginal(y2)?));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn load_density(path: &Path) -> Result<MixedDensity> {
    MixedDensity::from_toml_str(&fs::read_to_string(path)?)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Precondition(format!("usage: grid must be LO:HI:N, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !(hi >= lo) {
        return Err(bad());
    }
    Ok((0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect())
}

/// Log-density table for the rows of `points`, or for a grid.
pub fn cmd_density(density: &Path, points: Option<&Path>, grid: Option<&str>, cfg: &RunConfig) -> Result<String> {
    let f = load_density(density)?;
    let schema = f.schema();
    let mut buf = Vec::new();
    match (points, grid) {
        (Some(p), None) => {
            let data = ingest(p, schema)?;
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header: Vec<String> = schema
                .continuous()
                .iter()
                .map(|c| c.name.clone())
                .chain(schema.discrete().iter().map(|d| d.name.clone()))
                .collect();
            header.push("log_density".into());
            header.push("density".into());
            w.write_record(&header)?;
            for y in &data.rows {
                let lf = f.log_density(y)?;
                let mut rec: Vec<String> = y.y1.iter().map(|v| format!("{v}")).collect();
                rec.extend(y.y2.iter().map(|v| v.to_string()));
                rec.push(format!("{lf:.12e}"));
                rec.push(format!("{:.12e}", lf.exp()));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        (None, Some(g)) => {
            let axis = parse_grid(g)?;
            let mut y1_points: Vec<Vec<f64>> = vec![Vec::new()];
            for _ in 0..schema.p1() {
                y1_points = y1_points
                    .into_iter()
                    .flat_map(|prefix| {
                        axis.iter().map(move |&v| {
                            let mut next = prefix.clone();
                            next.push(v);
                            next
                        })
                    })
                    .collect();
            }
            // grid points outside a map's range are skipped
            y1_points.retain(|p| p.iter().zip(schema.continuous()).all(|(v, c)| c.map.in_range(*v)));
            let outcomes = if schema.p2() > 0 {
                f.discrete_support_enumeration(cfg.divergence_config().tail_mass_tol)?
            } else {
                vec![Vec::new()]
            };
            f.write_density_grid(&y1_points, &outcomes, &mut buf)?;
        }
        _ => return Err(Error::Precondition("usage: give exactly one of --points and --grid".into())),
    }
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// `n` pushforward draws as CSV.
pub fn cmd_sample(density: &Path, n: usize, seed: u64) -> Result<String> {
    let f = load_density(density)?;
    let mut rng = substream(seed, &[0x7361_6d70]);
    let points = f.pushforward_sample(n, &mut rng);
    let mut buf = Vec::new();
    write_points(f.schema(), &points, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

fn estimate_record(metric: &str, e: &DivergenceEstimate) -> String {
    let mut s = format!(
        "metric={metric} value={:.12e} std_error={:.3e} quad_error={:.3e} tolerance={:.3e} method={} tail_mass_tol={:.1e}",
        e.value,
        e.std_error,
        e.quad_error,
        e.tolerance(),
        e.method,
        e.tail_mass_tol
    );
    for d in &e.diagnostics {
        s.push_str(&format!(" diagnostic=\"{d}\""));
    }
    s.push('\n');
    s
}

pub fn cmd_divergence(f0: &Path, f: &Path, metric: Metric, cfg: &RunConfig) -> Result<String> {
    let (a, b) = (load_density(f0)?, load_density(f)?);
    let dcfg = cfg.divergence_config();
    let mut out = String::new();
    if matches!(metric, Metric::Kl | Metric::Both) {
        out.push_str(&estimate_record("kl", &kl_mixed(&a, &b, &dcfg)?));
    }
    if matches!(metric, Metric::L1 | Metric::Both) {
        out.push_str(&estimate_record("l1", &l1_mixed(&a, &b, &dcfg)?));
    }
    Ok(out)
}

pub fn cmd_lab(experiment: Experiment, cfg: &RunConfig) -> Result<()> {
    let dcfg = cfg.divergence_config();
    match experiment {
        Experiment::Lemma1(LemmaArgs { p_max: 0, .. }) | Experiment::Lemma2(LemmaArgs { p_max: 0, .. }) => {
            Err(Error::Precondition("usage: --p-max must be at least 1".into()))
        }
        Experiment::Lemma1(a) => lemma_suite(Lemma::Kl, &a, &dcfg),
        Experiment::Lemma2(a) => lemma_suite(Lemma::L1, &a, &dcfg),
        Experiment::Contraction(a) => {
            let cc = ContractionConfig {
                n_grid: a.n_grid.clone(),
                replications: a.replications,
                dp: DpConfig {
                    iterations: a.iterations,
                    burn_in: a.burn_in,
                    thin: a.thin,
                    k_max: a.k_max,
                    ..DpConfig::default()
                },
                seed: cfg.seed(),
                reference_log_power: a.reference_log_power,
                ..ContractionConfig::default()
            };
            let report = contraction_experiment(&canonical_truth(), &cc)?;
            let text = report.to_text();
            write_reports(a.out.as_deref(), &text, &report.to_csv())
        }
    }
}

fn lemma_suite(lemma: Lemma, a: &LemmaArgs, cfg: &DivergenceConfig) -> Result<()> {
    let results = random_lemma_suite(lemma, a.random, cfg.seed, a.p_max, cfg);
    let text = lemma_report_text(lemma, &results);
    write_reports(a.out.as_deref(), &text, &lemma_report_csv(&results))?;
    let held = results.iter().filter(|r| r.as_ref().is_ok_and(|r| r.holds())).count();
    if held != results.len() {
        return Err(Error::Numerical(format!(
            "{} non-expansion held in {held}/{} instances",
            lemma.name(),
            results.len()
        )));
    }
    Ok(())
}

fn write_reports(out: Option<&Path>, text: &str, csv: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), text)?;
        fs::write(dir.join("report.csv"), csv)?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

/// Reads a draws file written by `fit`.
pub fn load_draws(path: &Path) -> Result<Vec<LatentMixture>> {
    PosteriorDraws::parse_draws(&fs::read_to_string(path)?)
}
