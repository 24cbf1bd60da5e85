use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use abandonq::harness::{
    emit, phase_diagram, run_sweep, Columns, Estimator, Format, Model, ReportKind, Row, SweepConfig,
};
use abandonq::jsq_engine::{exact_stationary_small, exact_estimand, simulate_stationary, Estimand};
use abandonq::ssq_bounds::constants_table;
use abandonq::ssq_exact::{moment_lp, prob_empty, stationary_pmf, DEFAULT_TOL};
use abandonq::{Error, QueueParams, Result};

/// Bounds and ground truth for overloaded queues with abandonment.
#[derive(Parser)]
#[command(name = "abandonq", version)]
struct Cli {
    /// JSON file with the subcommand's arguments (a sweep config for
    /// `sweep` and `phase`). Replaces the per-subcommand flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 3 when a bound is reported invalid or misses its truth.
    #[arg(long, global = true)]
    strict_regime: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact single-server stationary law: summary or full pmf.
    SsqExact(SsqExactArgs),
    /// Single-server bounds next to the exact truth.
    SsqBounds(SsqBoundsArgs),
    /// Truncated exact JSQ solve (n <= 3).
    JsqSolve(JsqSolveArgs),
    /// Event simulation of JSQ (or the single server when n = 1).
    JsqSim(JsqSimArgs),
    /// Numeric Wasserstein-p distance to the normal law, with its bounds.
    Wp(WpArgs),
    /// Stein certificate for W_p against the numeric value.
    Certify(CertifyArgs),
    /// Parameter sweep from a config file.
    Sweep,
    /// Tail-exponent phase diagram from a config file.
    Phase,
}

fn cap60() -> usize {
    60
}

fn p2() -> Vec<f64> {
    vec![2.0]
}

fn horizon() -> f64 {
    1e5
}

fn burn_in() -> f64 {
    1e3
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default)]
struct ModelArgs {
    #[arg(long)]
    lambda: Option<f64>,
    /// Service rates, comma separated (one entry for the single server).
    #[arg(long, alias = "mu", value_delimiter = ',')]
    mus: Vec<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "C")]
    #[serde(rename = "C")]
    c: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl ModelArgs {
    fn params(&self) -> Result<QueueParams> {
        let need = |x: Option<f64>, name: &str| x.ok_or_else(|| Error::Invalid(format!("--{name} is required")));
        if self.mus.is_empty() {
            return Err(Error::Invalid("--mus is required".into()));
        }
        QueueParams::new(
            need(self.lambda, "lambda")?,
            self.mus.clone(),
            need(self.gamma, "gamma")?,
            self.c.unwrap_or(1.0),
            self.alpha.unwrap_or(0.0),
            self.epsilon,
        )
    }
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct SsqExactArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Emit the whole pmf instead of the summary.
    #[arg(long)]
    pmf: bool,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct SsqBoundsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Report kinds: p0, lp_norm, mgf_log, wp, tail, certificate.
    #[arg(long, value_delimiter = ',', default_value = "p0")]
    kinds: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    a: Vec<f64>,
    /// Emit the constant table instead of the reports.
    #[arg(long)]
    constants: bool,
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct JsqSolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 60)]
    #[serde(default = "cap60")]
    cap: usize,
    /// Emit states with probability above this floor instead of the summary.
    #[arg(long)]
    states_above: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    #[serde(default = "p2")]
    p: Vec<f64>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct JsqSimArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e5)]
    #[serde(default = "horizon")]
    horizon: f64,
    #[arg(long, default_value_t = 1e3)]
    #[serde(default = "burn_in")]
    burn_in: f64,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    #[serde(default = "p2")]
    p: Vec<f64>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct WpArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    #[serde(default = "p2")]
    p: Vec<f64>,
    #[arg(long, default_value_t = 60)]
    #[serde(default = "cap60")]
    cap: usize,
}

#[derive(Args, Deserialize, Default)]
#[serde(default)]
struct CertifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    #[serde(default = "p2")]
    p: Vec<f64>,
    #[arg(long, default_value_t = 60)]
    #[serde(default = "cap60")]
    cap: usize,
}

/// A named scalar, with a confidence half-width for estimates.
#[derive(Serialize)]
struct ValueRow {
    name: String,
    value: f64,
    ci_halfwidth: Option<f64>,
}

impl Columns for ValueRow {
    fn header() -> &'static [&'static str] {
        &["name", "value", "ci_halfwidth"]
    }
}

fn vrow(name: &str, value: f64) -> ValueRow {
    ValueRow { name: name.into(), value, ci_halfwidth: None }
}

#[derive(Serialize)]
struct PmfRow {
    state: String,
    q_tilde: Option<f64>,
    prob: f64,
    ln_prob: f64,
}

impl Columns for PmfRow {
    fn header() -> &'static [&'static str] {
        &["state", "q_tilde", "prob", "ln_prob"]
    }
}

fn load<T: DeserializeOwned>(cli: &Cli, from_flags: T) -> Result<T> {
    match &cli.config {
        Some(path) => Ok(serde_json::from_str(&fs::read_to_string(path)?)?),
        None => Ok(from_flags),
    }
}

fn parse_kinds(names: &[String]) -> Result<Vec<ReportKind>> {
    names
        .iter()
        .map(|s| serde_json::from_value(serde_json::Value::String(s.clone())).map_err(Error::from))
        .collect()
}

fn single_gamma(model: Model, params: QueueParams, outputs: Vec<ReportKind>, p: &[f64], cap: usize) -> SweepConfig {
    SweepConfig {
        model,
        gamma_grid: vec![params.gamma],
        params,
        a_grid: None,
        delta_grid: None,
        d_grid: vec![1.0],
        p_grid: (!p.is_empty()).then(|| p.to_vec()),
        theta_grid: None,
        phi: None,
        estimator: Estimator::Exact,
        outputs,
        seed: 0,
        format: Format::Csv,
        cap,
        tol: DEFAULT_TOL,
    }
}

fn model_of(params: &QueueParams) -> Model {
    if params.n() == 1 {
        Model::Ssq
    } else {
        Model::Jsq
    }
}

enum Output {
    Rows(Vec<Row>),
    Phase(Vec<abandonq::harness::PhaseRow>),
    Values(Vec<ValueRow>),
    Pmf(Vec<PmfRow>),
}

fn run(cli: &Cli, cmd: &Cmd) -> Result<(Output, Option<Format>)> {
    let mut cfg_format = None;
    let out = match cmd {
        Cmd::SsqExact(a) => {
            let a: SsqExactArgs = load(cli, SsqExactArgs { model: a.model.clone(), pmf: a.pmf, tol: a.tol })?;
            let params = a.model.params()?;
            if params.n() != 1 {
                return Err(Error::Invalid("ssq-exact needs a single service rate".into()));
            }
            let pmf = stationary_pmf(&params, a.tol.unwrap_or(DEFAULT_TOL))?;
            if a.pmf {
                Output::Pmf(
                    pmf.log_probs
                        .iter()
                        .enumerate()
                        .map(|(i, l)| PmfRow { state: i.to_string(), q_tilde: Some(pmf.normalized(i)), prob: l.exp(), ln_prob: *l })
                        .collect(),
                )
            } else {
                let c = params.fluid_center();
                Output::Values(vec![
                    vrow("p0", prob_empty(&pmf)),
                    vrow("mean", pmf.mean()),
                    vrow("fluid_center", c),
                    vrow("l2_centered", moment_lp(&pmf, c, 2.0)?),
                    vrow("support_len", pmf.len() as f64),
                    vrow("truncation_tail", pmf.truncation_tail),
                ])
            }
        }
        Cmd::SsqBounds(a) => {
            let a: SsqBoundsArgs = load(
                cli,
                SsqBoundsArgs {
                    model: a.model.clone(),
                    kinds: a.kinds.clone(),
                    p: a.p.clone(),
                    theta: a.theta.clone(),
                    a: a.a.clone(),
                    constants: a.constants,
                },
            )?;
            let params = a.model.params()?;
            if a.constants {
                let t = constants_table(&params)?;
                Output::Values(t.entries().into_iter().map(|(k, v)| vrow(&k, v)).collect())
            } else {
                let kinds = if a.kinds.is_empty() { vec![ReportKind::P0] } else { parse_kinds(&a.kinds)? };
                let mut cfg = single_gamma(Model::Ssq, params, kinds, &a.p, 60);
                cfg.theta_grid = (!a.theta.is_empty()).then(|| a.theta.clone());
                cfg.a_grid = (!a.a.is_empty()).then(|| a.a.clone());
                Output::Rows(run_sweep(&cfg)?)
            }
        }
        Cmd::JsqSolve(a) => {
            let a: JsqSolveArgs = load(
                cli,
                JsqSolveArgs { model: a.model.clone(), cap: a.cap, states_above: a.states_above, p: a.p.clone() },
            )?;
            let params = a.model.params()?;
            let j = exact_stationary_small(&params, a.cap)?;
            if let Some(floor) = a.states_above {
                Output::Pmf(
                    j.triplets(floor)
                        .into_iter()
                        .map(|(x, pr)| PmfRow {
                            state: x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
                            q_tilde: None,
                            prob: pr,
                            ln_prob: pr.ln(),
                        })
                        .collect(),
                )
            } else {
                let mut rows = vec![vrow("residual", j.residual), vrow("leak", j.leak), vrow("sweeps", j.sweeps as f64)];
                for e in summary_estimands(&params, &a.p) {
                    rows.push(vrow(&e.name(), exact_estimand(&params, &j, &e)?));
                }
                Output::Values(rows)
            }
        }
        Cmd::JsqSim(a) => {
            let a: JsqSimArgs = load(
                cli,
                JsqSimArgs { model: a.model.clone(), horizon: a.horizon, burn_in: a.burn_in, p: a.p.clone() },
            )?;
            let params = a.model.params()?;
            let es = summary_estimands(&params, &a.p);
            let est = simulate_stationary(&params, a.horizon, a.burn_in, cli.seed.unwrap_or(0), &es)?;
            Output::Values(
                est.into_iter()
                    .map(|(k, v)| ValueRow { name: k, value: v.value, ci_halfwidth: Some(v.ci_halfwidth) })
                    .collect(),
            )
        }
        Cmd::Wp(a) => {
            let a: WpArgs = load(cli, WpArgs { model: a.model.clone(), p: a.p.clone(), cap: a.cap })?;
            let params = a.model.params()?;
            let kind = if params.n() == 1 { ReportKind::Wp } else { ReportKind::WpJsq };
            Output::Rows(run_sweep(&single_gamma(model_of(&params), params, vec![kind], &a.p, a.cap))?)
        }
        Cmd::Certify(a) => {
            let a: CertifyArgs = load(cli, CertifyArgs { model: a.model.clone(), p: a.p.clone(), cap: a.cap })?;
            let params = a.model.params()?;
            let cfg = single_gamma(model_of(&params), params, vec![ReportKind::Certificate], &a.p, a.cap);
            Output::Rows(run_sweep(&cfg)?)
        }
        Cmd::Sweep | Cmd::Phase => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Invalid("sweep and phase need --config".into()))?;
            let mut cfg = SweepConfig::from_json(&fs::read_to_string(path)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg_format = Some(cfg.format);
            if matches!(cmd, Cmd::Sweep) {
                Output::Rows(run_sweep(&cfg)?)
            } else {
                Output::Phase(phase_diagram(&cfg)?)
            }
        }
    };
    Ok((out, cfg_format))
}

fn summary_estimands(params: &QueueParams, ps: &[f64]) -> Vec<Estimand> {
    let mut es = vec![Estimand::TotalEmpty, Estimand::SumZeroMass];
    for i in 0..params.n() {
        es.push(Estimand::MeanQueue { i });
    }
    for p in ps {
        es.push(Estimand::QhatSumMoment { p: *p });
        if params.n() > 1 {
            es.push(Estimand::PerpMoment { p: *p });
        }
    }
    es
}

fn write_out(cli: &Cli, out: &Output, format: Format) -> Result<()> {
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    match out {
        Output::Rows(r) => emit(r, format, &mut sink)?,
        Output::Phase(r) => emit(r, format, &mut sink)?,
        Output::Values(r) => emit(r, format, &mut sink)?,
        Output::Pmf(r) => emit(r, format, &mut sink)?,
    }
    sink.flush()?;
    Ok(())
}

fn violations(out: &Output) -> usize {
    match out {
        Output::Rows(r) => r.iter().filter(|x| !x.valid || x.contains == Some(false)).count(),
        Output::Phase(r) => r.iter().filter(|x| !x.bound_valid).count(),
        _ => 0,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli, &cli.cmd).and_then(|(out, cfg_format)| {
        let format = match cli.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Json) => Format::Json,
            None => cfg_format.unwrap_or_default(),
        };
        write_out(&cli, &out, format)?;
        Ok(violations(&out))
    });
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(v) if cli.strict_regime => {
            eprintln!("strict regime: {v} row(s) invalid or outside their bounds");
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
