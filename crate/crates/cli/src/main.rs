mod config;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use covadj::data::{expand_covariates, load_csv, ColumnKind, CsvSchema, ExpansionSpec};
use covadj::estimators::{
    estimate, tau_hat, AliasPolicy, DegeneratePolicy, EstimatorConfig, EstimatorKind, LambdaChoice, OlsIntercept,
    Selected,
};
use covadj::randomization::{assign_all, RandomizationScheme, Unit, Variant};
use covadj::sim::{emit_reports, run_replications, ModelId, ModelSpec, ReportFormat, SimConfig, SCHEMA_VERSION};
use covadj::variance::{confidence_interval, df_adjust, variance_components};
use covadj::Matrix;

use crate::config::{usage, Flags, Resolved, UsageError};

#[derive(Parser)]
#[command(name = "covadj", version, about = "Regression-adjusted treatment effects under covariate-adaptive randomization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study of the estimator family on a built-in model.
    Simulate(SimulateArgs),
    /// Estimate the treatment effect from a trial CSV.
    Analyze(AnalyzeArgs),
    /// Assign treatments to the units of a CSV.
    Randomize(RandomizeArgs),
    /// Polynomial and interaction expansion of covariate columns.
    Expand(ExpandArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1, 2 or 3.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// sr, sbr, efron, wei or ps.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    pi: Option<f64>,
    /// Biased-coin probability for efron and ps.
    #[arg(long)]
    pbc: Option<f64>,
    /// Comma-separated minimization weights (default: equal).
    #[arg(long)]
    weights: Option<String>,
    /// Covariate dimension used by the Lasso estimators.
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated estimator names, or `all`.
    #[arg(long)]
    estimators: Option<String>,
    /// cv, rate or fixed.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_value: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    cv_folds: Option<usize>,
    /// fail or fallback.
    #[arg(long)]
    degenerate: Option<String>,
    /// global or centered.
    #[arg(long)]
    ols_intercept: Option<String>,
    /// Leave stratum-defining columns out of the OLS covariates.
    #[arg(long)]
    exclude_strata: bool,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// csv, markdown or json.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct LambdaArgs {
    /// cv, rate or fixed.
    #[arg(long, default_value = "cv")]
    lambda: String,
    #[arg(long)]
    lambda_value: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    lambda_c: f64,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    data: PathBuf,
    #[arg(long, default_value = "tau")]
    estimator: String,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long, default_value = "a")]
    assignment: String,
    #[arg(long, default_value = "stratum")]
    stratum: String,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long)]
    covariates: Option<String>,
    #[command(flatten)]
    lambda: LambdaArgs,
    /// fail or fallback.
    #[arg(long, default_value = "fail")]
    degenerate: String,
    /// global or centered.
    #[arg(long, default_value = "global")]
    ols_intercept: String,
    /// Allocation used in the variance; defaults to the observed n1/n.
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RandomizeArgs {
    data: PathBuf,
    /// sr, sbr, efron, wei or ps.
    #[arg(long, default_value = "sr")]
    scheme: String,
    /// Stratum column; defaults to the combination of the margins.
    #[arg(long)]
    stratum: Option<String>,
    /// Comma-separated minimization factor columns.
    #[arg(long)]
    margins: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    #[arg(long, default_value_t = 6)]
    block_size: usize,
    #[arg(long, default_value_t = 0.75)]
    pbc: f64,
    #[arg(long)]
    weights: Option<String>,
    /// Name of the appended assignment column.
    #[arg(long, default_value = "a")]
    column: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpandArgs {
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    binary: Vec<String>,
    /// Also form continuous-by-binary products.
    #[arg(long)]
    cross: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Randomize(a) => cmd_randomize(a),
        Command::Expand(a) => cmd_expand(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn parse_weights(s: Option<&str>) -> Result<Option<Vec<f64>>> {
    s.map(|s| {
        split_list(s)
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| usage(format!("invalid weight `{w}`"))))
            .collect()
    })
    .transpose()
}

fn build_scheme(name: &str, pi: f64, block: usize, pbc: f64, weights: impl FnOnce() -> Vec<f64>) -> Result<RandomizationScheme> {
    let variant = match name.to_ascii_lowercase().as_str() {
        "sr" | "simple" => Variant::Simple,
        "sbr" | "block" => Variant::StratifiedBlock { block_size: block },
        "efron" | "bcd" | "coin" => Variant::StratifiedBiasedCoin { bias: pbc },
        "wei" => Variant::WeiAdaptive,
        "ps" | "minimization" => Variant::PocockSimon { bias: pbc, weights: weights() },
        other => return Err(usage(format!("unknown scheme `{other}` (expected sr, sbr, efron, wei or ps)"))),
    };
    RandomizationScheme::new(variant, pi).map_err(|e| usage(e.to_string()))
}

fn lambda_choice(mode: &str, value: Option<f64>, c: f64, folds: usize) -> Result<LambdaChoice> {
    Ok(match mode.to_ascii_lowercase().as_str() {
        "cv" => {
            if folds < 2 {
                return Err(usage("cross-validation needs at least 2 folds"));
            }
            LambdaChoice::Cv { folds }
        }
        "rate" => LambdaChoice::Rate { c },
        "fixed" => {
            let lambda = value.ok_or_else(|| usage("--lambda fixed needs --lambda-value"))?;
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(usage("lambda must be a non-negative number"));
            }
            LambdaChoice::Fixed { lambda }
        }
        other => return Err(usage(format!("unknown lambda mode `{other}` (expected cv, rate or fixed)"))),
    })
}

fn degenerate_policy(s: &str) -> Result<DegeneratePolicy> {
    match s {
        "fail" => Ok(DegeneratePolicy::Fail),
        "fallback" | "common" => Ok(DegeneratePolicy::CommonFallback),
        other => Err(usage(format!("unknown degenerate-stratum policy `{other}`"))),
    }
}

fn ols_intercept(s: &str) -> Result<OlsIntercept> {
    match s {
        "global" => Ok(OlsIntercept::Global),
        "centered" | "stratum" => Ok(OlsIntercept::StratumCentered),
        other => Err(usage(format!("unknown OLS intercept mode `{other}`"))),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not an error.
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

const SIM_KEYS: &[&str] = &[
    "model",
    "n",
    "reps",
    "scheme",
    "block_size",
    "pi",
    "pbc",
    "weights",
    "p",
    "estimators",
    "lambda",
    "lambda_value",
    "lambda_c",
    "cv_folds",
    "degenerate",
    "ols_intercept",
    "exclude_strata",
    "level",
    "mu0",
    "mu1",
    "seed",
    "format",
    "out",
    "threads",
];

const SIM_DEFAULTS: &[(&str, &str)] = &[
    ("model", "1"),
    ("n", "200"),
    ("reps", "1000"),
    ("scheme", "sr"),
    ("block_size", "6"),
    ("pi", "0.5"),
    ("pbc", "0.75"),
    ("p", "100"),
    ("estimators", "all"),
    ("lambda", "cv"),
    ("lambda_c", "1"),
    ("cv_folds", "5"),
    ("degenerate", "fail"),
    ("ols_intercept", "global"),
    ("exclude_strata", "false"),
    ("level", "0.95"),
    ("mu0", "0"),
    ("mu1", "0"),
    ("format", "csv"),
];

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let file = match &a.config {
        Some(path) => config::load(path, SIM_KEYS)?,
        None => BTreeMap::new(),
    };
    let mut flags = Flags::default();
    flags.put("model", a.model);
    flags.put("n", a.n);
    flags.put("reps", a.reps);
    flags.put("scheme", a.scheme);
    flags.put("block_size", a.block_size);
    flags.put("pi", a.pi);
    flags.put("pbc", a.pbc);
    flags.put("weights", a.weights);
    flags.put("p", a.p);
    flags.put("estimators", a.estimators);
    flags.put("lambda", a.lambda);
    flags.put("lambda_value", a.lambda_value);
    flags.put("lambda_c", a.lambda_c);
    flags.put("cv_folds", a.cv_folds);
    flags.put("degenerate", a.degenerate);
    flags.put("ols_intercept", a.ols_intercept);
    flags.put("exclude_strata", a.exclude_strata.then_some(true));
    flags.put("level", a.level);
    flags.put("mu0", a.mu0);
    flags.put("mu1", a.mu1);
    flags.put("seed", a.seed);
    flags.put("format", a.format);
    flags.put("out", a.out.map(|p| p.display().to_string()));
    flags.put("threads", a.threads);
    let mut r = Resolved::layer(SIM_DEFAULTS, file, flags.0);

    let seed = resolve_seed(r.opt("seed")?);
    r.set("seed", seed.to_string());
    let models: Vec<ModelId> = match r.str("model")? {
        "all" => vec![ModelId::Model1, ModelId::Model2, ModelId::Model3],
        list => split_list(list)
            .iter()
            .map(|m| match ModelId::parse(m) {
                Some(id) if id != ModelId::Custom => Ok(id),
                _ => Err(usage(format!("unknown model `{m}` (expected 1, 2, 3 or all)"))),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if models.is_empty() {
        return Err(usage("no model given"));
    }
    let (mu0, mu1) = (r.parse("mu0")?, r.parse("mu1")?);
    let weights = parse_weights(r.get("weights"))?;
    let estimators = match r.str("estimators")? {
        "all" => EstimatorKind::TABLE.to_vec(),
        list => split_list(list)
            .iter()
            .map(|e| EstimatorKind::parse(e).ok_or_else(|| usage(format!("unknown estimator `{e}`"))))
            .collect::<Result<Vec<_>>>()?,
    };
    let format_name = r.str("format")?;
    let format = ReportFormat::parse(format_name).ok_or_else(|| usage(format!("unknown format `{format_name}`")))?;
    let lambda = lambda_choice(r.str("lambda")?, r.opt("lambda_value")?, r.parse("lambda_c")?, r.parse("cv_folds")?)?;
    let degenerate = degenerate_policy(r.str("degenerate")?)?;
    let intercept = ols_intercept(r.str("ols_intercept")?)?;

    let mut configs = Vec::with_capacity(models.len());
    for id in models {
        let model = ModelSpec::new(id, r.parse("p")?)
            .and_then(|m| m.with_intercepts(mu0, mu1))
            .map_err(|e| usage(e.to_string()))?;
        let scheme = build_scheme(r.str("scheme")?, r.parse("pi")?, r.parse("block_size")?, r.parse("pbc")?, || {
            weights.clone().unwrap_or_else(|| model.equal_weights())
        })?;
        let mut cfg = SimConfig::new(model, scheme, r.parse("n")?, r.parse("reps")?, seed);
        cfg.estimators = estimators.clone();
        cfg.level = r.parse("level")?;
        cfg.estimator.lambda = lambda.clone();
        cfg.estimator.degenerate = degenerate;
        cfg.estimator.ols_intercept = intercept;
        cfg.ols_exclude_strata = r.bool("exclude_strata")?;
        cfg.threads = r.opt("threads")?;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        configs.push(cfg);
    }
    let out = r.get("out").map(PathBuf::from);

    let mut reports = Vec::with_capacity(configs.len());
    for cfg in &configs {
        reports.push(run_replications(cfg)?);
    }

    // The echo leaves out settings that cannot change the numbers.
    let mut echo = r.0.clone();
    echo.remove("threads");
    echo.remove("out");
    let truths: Vec<(String, f64)> = reports
        .iter()
        .map(|rep| (format!("true_tau_model{}", rep.config.model.id.label()), rep.true_tau))
        .collect();
    let text = match format {
        ReportFormat::Json => {
            let mut v: serde_json::Value = serde_json::from_str(&emit_reports(&reports, format))?;
            v["resolved"] = json!(echo);
            let mut s = serde_json::to_string_pretty(&v)?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s: String = echo.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect();
            s.push_str(&format!("# schema_version = {SCHEMA_VERSION}\n"));
            s.extend(truths.iter().map(|(k, v)| format!("# {k} = {v}\n")));
            s + &emit_reports(&reports, format)
        }
        ReportFormat::Markdown => {
            let mut s = String::from("<!--\n");
            s.extend(echo.iter().map(|(k, v)| format!("{k} = {v}\n")));
            s.push_str(&format!("schema_version = {SCHEMA_VERSION}\n"));
            s.extend(truths.iter().map(|(k, v)| format!("{k} = {v}\n")));
            s.push_str("-->\n\n");
            s + &emit_reports(&reports, format)
        }
    };
    write_output(out.as_deref(), &text)
}

fn open_error(path: &Path, e: covadj::Error) -> anyhow::Error {
    match e {
        covadj::Error::Io { .. } | covadj::Error::Schema(_) | covadj::Error::Parse { .. } | covadj::Error::Csv(_) => {
            usage(format!("{}: {e}", path.display()))
        }
        other => anyhow::Error::new(other),
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let kind = EstimatorKind::parse(&a.estimator).ok_or_else(|| usage(format!("unknown estimator `{}`", a.estimator)))?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage("--level must lie in (0, 1)"));
    }
    let schema = CsvSchema {
        outcome: a.outcome.clone(),
        assignment: a.assignment.clone(),
        stratum: a.stratum.clone(),
        covariates: a.covariates.as_deref().map(split_list),
    };
    let ds = load_csv(&a.data, &schema).map_err(|e| open_error(&a.data, e))?;
    let needs_seed = kind.is_lasso() && a.lambda.lambda == "cv";
    let seed = if needs_seed { resolve_seed(a.seed) } else { a.seed.unwrap_or(0) };
    let cfg = EstimatorConfig {
        lambda: lambda_choice(&a.lambda.lambda, a.lambda.lambda_value, a.lambda.lambda_c, a.lambda.cv_folds)?,
        seed,
        degenerate: degenerate_policy(&a.degenerate)?,
        ols_intercept: ols_intercept(&a.ols_intercept)?,
        alias: AliasPolicy::Drop,
        ..EstimatorConfig::default()
    };
    let pi = a.pi.unwrap_or(ds.n_treated() as f64 / ds.n() as f64);
    if !(pi > 0.0 && pi < 1.0) {
        return Err(usage(format!("allocation {pi} must lie in (0, 1)")));
    }

    let est = estimate(&ds, kind, &cfg)?;
    let ve = variance_components(&est, pi)?;
    let ci = confidence_interval(est.tau_hat, ve.se_tau, a.level)?;
    let adjusted = match &est.adjustment {
        Some(_) => Some(df_adjust(&ve, &est)?),
        None => None,
    };
    let ci_adj = adjusted
        .as_ref()
        .map(|v| confidence_interval(est.tau_hat, v.se_tau, a.level))
        .transpose()?;
    let base = variance_components(&tau_hat(&ds)?, pi)?;
    let reduction = 1.0 - ve.total / base.total;
    let selected = est.adjustment.as_ref().map(|adj| adj.selected.clone());

    if a.json {
        let v = json!({
            "schema_version": SCHEMA_VERSION,
            "config": {
                "data": a.data.display().to_string(),
                "estimator": kind.name(),
                "outcome": a.outcome,
                "assignment": a.assignment,
                "stratum": a.stratum,
                "covariates": ds.covariate_names(),
                "lambda": cfg.lambda,
                "degenerate": cfg.degenerate,
                "ols_intercept": cfg.ols_intercept,
                "pi": pi,
                "level": a.level,
                "seed": seed,
            },
            "n": ds.n(),
            "strata": ds.k(),
            "estimate": est.tau_hat,
            "se_unadj": ve.se_tau,
            "se_adj": adjusted.as_ref().map(|v| v.se_tau),
            "ci_unadj": [ci.lower, ci.upper],
            "ci_adj": ci_adj.map(|c| [c.lower, c.upper]),
            "selected": selected,
            "variance_reduction": reduction,
            "variance": ve,
        });
        return write_output(None, &format!("{}\n", serde_json::to_string_pretty(&v)?));
    }
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "estimator           {}", kind.name())?;
    writeln!(out, "n                   {} ({} strata, {} treated)", ds.n(), ds.k(), ds.n_treated())?;
    writeln!(out, "estimate            {:.6}", est.tau_hat)?;
    writeln!(out, "se (unadjusted)     {:.6}", ve.se_tau)?;
    writeln!(
        out,
        "{:.0}% ci (unadj)     [{:.6}, {:.6}]",
        100.0 * a.level,
        ci.lower,
        ci.upper
    )?;
    if let (Some(v), Some(c)) = (&adjusted, &ci_adj) {
        writeln!(out, "se (adjusted)       {:.6}", v.se_tau)?;
        writeln!(out, "{:.0}% ci (adj)       [{:.6}, {:.6}]", 100.0 * a.level, c.lower, c.upper)?;
    }
    match &selected {
        Some(Selected::Common { treated, control }) => writeln!(out, "selected            treated {treated}, control {control}")?,
        Some(Selected::Specific { treated, control }) => {
            for k in 0..treated.len() {
                writeln!(
                    out,
                    "selected [{}]       treated {}, control {}",
                    ds.stratum_label(k),
                    treated[k],
                    control[k]
                )?;
            }
        }
        None => {}
    }
    writeln!(out, "variance reduction  {:.2}%", 100.0 * reduction)?;
    write_output(None, &out)
}

/// Reads a CSV as header plus string records.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((headers, rows))
}

fn column(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| usage(format!("missing column `{name}`")))
}

fn encode(values: impl Iterator<Item = String>) -> Vec<usize> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    values
        .map(|v| {
            let next = seen.len();
            *seen.entry(v).or_insert(next)
        })
        .collect()
}

fn cmd_randomize(a: RandomizeArgs) -> Result<()> {
    let (headers, rows) = read_table(&a.data)?;
    let margin_cols = a
        .margins
        .as_deref()
        .map(split_list)
        .unwrap_or_default()
        .iter()
        .map(|m| column(&headers, m))
        .collect::<Result<Vec<_>>>()?;
    let cell = |r: &csv::StringRecord, j: usize| r.get(j).unwrap_or("").trim().to_string();
    let margin_codes: Vec<Vec<usize>> = margin_cols
        .iter()
        .map(|&j| encode(rows.iter().map(|r| cell(r, j))))
        .collect();
    let strata = match &a.stratum {
        Some(s) => {
            let j = column(&headers, s)?;
            encode(rows.iter().map(|r| cell(r, j)))
        }
        None => encode(rows.iter().map(|r| {
            margin_cols.iter().map(|&j| cell(r, j)).collect::<Vec<_>>().join("|")
        })),
    };
    let units: Vec<Unit> = (0..rows.len())
        .map(|i| Unit {
            stratum: strata[i],
            margins: margin_codes.iter().map(|c| c[i]).collect(),
        })
        .collect();
    let weights = parse_weights(a.weights.as_deref())?;
    let n_margins = margin_cols.len();
    if a.scheme == "ps" && n_margins == 0 {
        return Err(usage("minimization needs --margins"));
    }
    let scheme = build_scheme(&a.scheme, a.pi, a.block_size, a.pbc, || {
        weights.unwrap_or_else(|| vec![1.0; n_margins])
    })?;
    let seed = resolve_seed(a.seed);
    let treated = assign_all(&scheme, &units, seed).map_err(|e| match e {
        covadj::Error::Contract(m) => usage(m),
        other => anyhow::Error::new(other),
    })?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = headers.clone();
    header.push(a.column.clone());
    wtr.write_record(&header)?;
    for (r, t) in rows.iter().zip(&treated) {
        let mut rec: Vec<String> = r.iter().map(str::to_string).collect();
        rec.push(if *t { "1".into() } else { "0".into() });
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_output(a.out.as_deref(), &String::from_utf8(bytes)?)
}

fn cmd_expand(a: ExpandArgs) -> Result<()> {
    let (headers, rows) = read_table(&a.data)?;
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for c in &a.continuous {
        names.push(c.clone());
        kinds.push(ColumnKind::Continuous);
    }
    for c in &a.binary {
        names.push(c.clone());
        kinds.push(ColumnKind::Binary);
    }
    if names.is_empty() {
        return Err(usage("nothing to expand: give --continuous and/or --binary"));
    }
    let cols = names.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &j in &cols {
        for (i, r) in rows.iter().enumerate() {
            let v = r.get(j).unwrap_or("").trim();
            let x: f64 = v
                .parse()
                .map_err(|_| usage(format!("row {}, column `{}`: `{v}` is not a number", i + 1, headers[j])))?;
            data.push(x);
        }
    }
    let x = Matrix::from_col_major(rows.len(), cols.len(), data)?;
    let e = expand_covariates(&x, &names, &ExpansionSpec { kinds, cross: a.cross })?;

    let keep: Vec<usize> = (0..headers.len()).filter(|j| !cols.contains(j)).collect();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = keep.iter().map(|&j| headers[j].clone()).chain(e.names.iter().cloned()).collect();
    wtr.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let rec: Vec<String> = keep
            .iter()
            .map(|&j| r.get(j).unwrap_or("").to_string())
            .chain((0..e.matrix.cols()).map(|j| format!("{:?}", e.matrix.get(i, j))))
            .collect();
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_output(a.out.as_deref(), &String::from_utf8(bytes)?)
}
