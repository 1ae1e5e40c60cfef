//! Command-line driver: run configuration, the four run methods and the
//! files they write.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, LayerSpec};
use crate::ode::{registry, rk4_solve, Expr, OdeProblem};
use crate::pwnn::{
    load_solution, run_pinn, run_pwnn_observed, save_solution, Jump, Partition, PiecewiseSolution, PwnnRun, RunEvent,
    RunReport,
};
use crate::trainer::TrainingConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pinn,
    #[default]
    Pwnn,
    Rk4,
    /// PWNN, PINN and RK4 on a shared grid.
    Compare,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pinn => "pinn",
            Method::Pwnn => "pwnn",
            Method::Rk4 => "rk4",
            Method::Compare => "compare",
        })
    }
}

/// Either a registry name (`problem = "example3"`) or an inline
/// `[problem]` table with expression strings.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Named(String),
    Inline(OdeProblem),
}

impl ProblemSource {
    pub fn resolve(&self) -> Result<OdeProblem> {
        match self {
            ProblemSource::Named(name) => registry::get(name),
            ProblemSource::Inline(p) => Ok(p.clone()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineProblem {
    #[serde(default = "default_problem_name")]
    name: String,
    rhs: Vec<Expr>,
    y0: Vec<f64>,
    t_end: f64,
    #[serde(default)]
    analytic: Option<Vec<Expr>>,
    #[serde(default)]
    invariants: Vec<InlineInvariant>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineInvariant {
    label: Option<String>,
    expr: Expr,
    value: f64,
}

fn default_problem_name() -> String {
    "custom".into()
}

impl InlineProblem {
    fn build(self) -> Result<OdeProblem> {
        let mut p = OdeProblem::new(self.name, self.rhs, self.y0, self.t_end)?;
        if let Some(a) = self.analytic {
            p = p.with_analytic(a)?;
        }
        for inv in self.invariants {
            let label = inv.label.unwrap_or_else(|| inv.expr.to_string());
            p = p.with_invariant(&label, inv.expr, inv.value)?;
        }
        Ok(p)
    }
}

impl<'de> Deserialize<'de> for ProblemSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ProblemSource;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a registry name or a problem table")
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<ProblemSource, E> {
                registry::get(s).map_err(E::custom)?;
                Ok(ProblemSource::Named(s.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<ProblemSource, A::Error> {
                let def = InlineProblem::deserialize(de::value::MapAccessDeserializer::new(map))?;
                def.build().map(ProblemSource::Inline).map_err(de::Error::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub segments: usize,
    /// Full list `0 = a_0 < ... < a_p = T`; overrides `segments`.
    pub breakpoints: Option<Vec<f64>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            segments: 1,
            breakpoints: None,
        }
    }
}

impl PartitionConfig {
    pub fn build(&self, t_end: f64) -> Result<Partition> {
        match &self.breakpoints {
            Some(b) => Partition::explicit(b.clone()),
            None => Partition::equal(t_end, self.segments),
        }
    }

    fn is_single(&self) -> bool {
        match &self.breakpoints {
            Some(b) => b.len() == 2,
            None => self.segments == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20],
            activation: Activation::Tanh,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, outputs: usize) -> Result<LayerSpec> {
        Ok(LayerSpec::with_hidden(&self.hidden, outputs)?.with_activation(self.activation))
    }
}

/// Settings for the single-network baseline. Unset fields default to the
/// network shape of `[network]` and to `p` times the per-segment point
/// count and iteration budget, so both methods see the same totals.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub hidden: Option<Vec<usize>>,
    pub points: Option<usize>,
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Evaluation grid size on `[0, T]`.
    pub grid: usize,
    pub rk4_step: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("pwnn-out"),
            grid: 1001,
            rk4_step: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: Option<ProblemSource>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub pinn: PinnConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// `origin` names the source in error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<OdeProblem> {
        let problem = self
            .problem
            .as_ref()
            .ok_or_else(|| Error::Config("problem: not set (use --problem or a config file)".into()))?
            .resolve()?;
        self.training
            .validate()
            .map_err(|e| Error::Config(format!("training: {e}")))?;
        if self.method == Method::Pinn && !self.partition.is_single() {
            return Err(Error::Config("partition: method = pinn requires a single segment".into()));
        }
        if self.output.grid < 2 {
            return Err(Error::Config("output.grid: need at least 2 points".into()));
        }
        if !(self.output.rk4_step > 0.0 && self.output.rk4_step.is_finite()) {
            return Err(Error::Config("output.rk4_step: must be positive".into()));
        }
        self.partition
            .build(problem.t_end)
            .map_err(|e| Error::Config(format!("partition: {e}")))?;
        self.network
            .spec(problem.dim())
            .map_err(|e| Error::Config(format!("network: {e}")))?;
        Ok(problem)
    }

    fn pinn_setup(&self, problem: &OdeProblem) -> Result<(LayerSpec, TrainingConfig)> {
        let p = self.partition.build(problem.t_end)?.segments();
        let hidden = self.pinn.hidden.as_ref().unwrap_or(&self.network.hidden);
        let spec = LayerSpec::with_hidden(hidden, problem.dim())?.with_activation(self.network.activation);
        let config = TrainingConfig {
            points: self.pinn.points.unwrap_or(self.training.points * p),
            max_iterations: self.pinn.max_iterations.unwrap_or(self.training.max_iterations * p),
            ..self.training.clone()
        };
        Ok((spec, config))
    }
}

#[derive(Parser, Debug)]
#[command(name = "pwnn", version, about = "Piecewise neural network solver for ODE initial value problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train and/or integrate, writing CSV and JSON artifacts.
    Run(RunArgs),
    /// List the built-in problems.
    Problems,
    /// Evaluate a saved piecewise solution at the given points.
    Eval {
        /// Directory holding partition.json.
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true, allow_negative_numbers = true)]
        x: Vec<f64>,
    },
}

/// Flags override the config file.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub segments: Option<usize>,
    /// Collocation points per segment.
    #[arg(long)]
    pub points: Option<usize>,
    /// Learning rate per round, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Feed x to the first layer unscaled.
    #[arg(long)]
    pub raw_input: bool,
    #[arg(long, short)]
    pub quiet: bool,
}

impl RunArgs {
    pub fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(name) = self.problem {
            registry::get(&name)?;
            cfg.problem = Some(ProblemSource::Named(name));
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(p) = self.segments {
            cfg.partition = PartitionConfig {
                segments: p,
                breakpoints: None,
            };
        }
        let t = &mut cfg.training;
        if let Some(v) = self.points {
            t.points = v;
        }
        if let Some(v) = self.lr {
            t.learning_rates = v;
        }
        if let Some(v) = self.iters {
            t.max_iterations = v;
        }
        if let Some(v) = self.rounds {
            t.rounds = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if self.raw_input {
            t.normalize_input = false;
        }
        if let Some(v) = self.hidden {
            cfg.network.hidden = v;
        }
        if let Some(v) = self.grid {
            cfg.output.grid = v;
        }
        if let Some(v) = self.out {
            cfg.output.dir = v;
        }
        Ok(cfg)
    }
}

/// Max and mean absolute deviation per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Deviation {
    fn between(a: &[Vec<f64>], b: &[Vec<f64>]) -> Self {
        let n = a.first().map_or(0, Vec::len);
        let mut max = vec![0.0f64; n];
        let mut sum = vec![0.0; n];
        for (ya, yb) in a.iter().zip(b) {
            for i in 0..n {
                let d = (ya[i] - yb[i]).abs();
                max[i] = max[i].max(d);
                sum[i] += d;
            }
        }
        let mean = sum.iter().map(|s| s / a.len() as f64).collect();
        Self { max, mean }
    }

    pub fn overall_max(&self) -> f64 {
        self.max.iter().copied().fold(0.0, f64::max)
    }
}

/// Largest `|g(y(x)) - value|` over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantDrift {
    pub label: String,
    pub max_drift: f64,
}

fn invariant_drift(problem: &OdeProblem, xs: &[f64], ys: &[Vec<f64>]) -> Vec<InvariantDrift> {
    problem
        .invariants
        .iter()
        .map(|inv| InvariantDrift {
            label: inv.label.clone(),
            max_drift: xs
                .iter()
                .zip(ys)
                .map(|(&x, y)| (inv.expr.eval(x, y) - inv.value).abs())
                .fold(0.0, f64::max),
        })
        .collect()
}

/// Summary of one trained solution (`pwnn` or `pinn`).
#[derive(Clone, Debug, Serialize)]
pub struct TrainedSummary {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub report: RunReport,
    pub round_means: Vec<f64>,
    /// Against RK4 on the evaluation grid.
    pub deviation: Option<Deviation>,
    pub analytic_deviation: Option<Deviation>,
    pub invariants: Vec<InvariantDrift>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Rk4Summary {
    pub problem: String,
    pub h: f64,
    pub steps: usize,
    pub analytic_deviation: Option<Deviation>,
    pub invariants: Vec<InvariantDrift>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareSummary {
    pub problem: String,
    pub pwnn_deviation: Deviation,
    pub pinn_deviation: Deviation,
    /// PINN max deviation over PWNN max deviation.
    pub deviation_ratio: f64,
    pub jumps: Vec<Jump>,
    pub pwnn_round_table: Vec<Vec<f64>>,
    pub pwnn_round_means: Vec<f64>,
    pub pinn_round_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum RunOutcome {
    Trained(Box<TrainedSummary>),
    Rk4(Rk4Summary),
    Compare(Box<CompareSummary>),
}

/// `n` equidistant points on `[0, t_end]`, the last one exactly `t_end`.
pub fn grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { t_end } else { t_end * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Rounds as rows, segments as columns, plus the row mean.
pub fn emit_round_table(report: &RunReport) -> String {
    let table = report.loss_table();
    let p = table.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("round");
    for k in 1..=p {
        out.push_str(&format!("\tm_{k}"));
    }
    out.push_str("\tmean\n");
    for (i, row) in table.iter().enumerate() {
        out.push_str(&(i + 1).to_string());
        for v in row {
            out.push_str(&format!("\t{v:.2e}"));
        }
        for _ in row.len()..p {
            out.push_str("\t-");
        }
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        out.push_str(&format!("\t{mean:.2e}\n"));
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn component_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}y{i}")).collect()
}

fn write_solution_csv(path: &Path, xs: &[f64], ys: &[Vec<f64>]) -> Result<()> {
    let n = ys.first().map_or(0, Vec::len);
    let mut header = vec!["x".to_string()];
    header.extend(component_header("", n));
    write_csv(
        path,
        &header,
        xs.iter().zip(ys).map(|(&x, y)| {
            let mut row = vec![num(x)];
            row.extend(y.iter().map(|&v| num(v)));
            row
        }),
    )
}

fn write_traces(dir: &Path, report: &RunReport) -> Result<()> {
    let header: Vec<String> = ["iteration", "residual", "ic", "total"].map(String::from).to_vec();
    for r in &report.records {
        write_csv(
            &dir.join(format!("loss_segment{}_round{}.csv", r.segment, r.round)),
            &header,
            r.trace
                .iter()
                .map(|t| vec![t.iteration.to_string(), num(t.residual), num(t.ic), num(t.total)]),
        )?;
    }
    Ok(())
}

fn write_jumps(path: &Path, jumps: &[Jump], n: usize) -> Result<()> {
    let mut header = vec!["k".to_string(), "at".to_string()];
    header.extend(component_header("left_", n));
    header.extend(component_header("right_", n));
    header.push("max_norm".into());
    header.push("euclidean".into());
    write_csv(
        path,
        &header,
        jumps.iter().map(|j| {
            let mut row = vec![j.k.to_string(), num(j.at)];
            row.extend(j.left.iter().chain(&j.right).map(|&v| num(v)));
            row.push(num(j.max_norm));
            row.push(num(j.euclidean));
            row
        }),
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn evaluate_on(sol: &PiecewiseSolution, xs: &[f64]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|&x| sol.evaluate(x)).collect()
}

struct Reference {
    xs: Vec<f64>,
    rk4: Vec<Vec<f64>>,
    analytic: Option<Vec<Vec<f64>>>,
    steps: usize,
}

fn reference(problem: &OdeProblem, out: &OutputConfig) -> Result<Reference> {
    let xs = grid(problem.t_end, out.grid);
    let traj = rk4_solve(problem, out.rk4_step, problem.t_end)?;
    let rk4 = xs.iter().map(|&x| traj.value_at(problem, x)).collect::<Result<Vec<_>>>()?;
    let analytic = problem
        .analytic
        .as_ref()
        .map(|_| xs.iter().map(|&x| problem.analytic_at(x).expect("analytic present")).collect());
    Ok(Reference {
        xs,
        rk4,
        analytic,
        steps: traj.xs.len() - 1,
    })
}

/// Writes the per-method artifacts for a finished or aborted training run.
fn write_trained(
    dir: &Path,
    problem: &OdeProblem,
    reference: &Reference,
    result: std::result::Result<&PwnnRun, (&RunReport, &Error)>,
) -> Result<TrainedSummary> {
    fs::create_dir_all(dir)?;
    let (report, error) = match result {
        Ok(run) => (&run.report, None),
        Err((partial, e)) => (partial, Some(e)),
    };
    write_traces(dir, report)?;
    fs::write(dir.join("round_table.txt"), emit_round_table(report))?;
    let mut summary = TrainedSummary {
        status: if error.is_some() { "aborted".into() } else { "ok".into() },
        error: error.map(error_chain),
        report: report.clone(),
        round_means: report.round_means(),
        deviation: None,
        analytic_deviation: None,
        invariants: Vec::new(),
    };
    if let Ok(run) = result {
        let ys = evaluate_on(&run.solution, &reference.xs)?;
        write_solution_csv(&dir.join("solution.csv"), &reference.xs, &ys)?;
        write_jumps(&dir.join("jumps.csv"), &run.report.jumps, problem.dim())?;
        save_solution(&dir.join("model"), &run.solution)?;
        summary.deviation = Some(Deviation::between(&ys, &reference.rk4));
        summary.analytic_deviation = reference.analytic.as_ref().map(|a| Deviation::between(&ys, a));
        summary.invariants = invariant_drift(problem, &reference.xs, &ys);
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn train(
    cfg: &RunConfig,
    problem: &OdeProblem,
    method: Method,
    log: &mut dyn FnMut(&str),
) -> std::result::Result<PwnnRun, Error> {
    match method {
        Method::Pinn => {
            let (spec, config) = cfg.pinn_setup(problem)?;
            log(&format!(
                "pinn: {:?}, {} points, {} iterations x {} rounds",
                spec.sizes(),
                config.points,
                config.max_iterations,
                config.rounds
            ));
            let run = run_pinn(problem, &spec, &config)?;
            for r in &run.report.records {
                log(&format!("pinn round {} loss {:.3e}", r.round, r.final_loss.total));
            }
            Ok(run)
        }
        _ => {
            let partition = cfg.partition.build(problem.t_end)?;
            let spec = cfg.network.spec(problem.dim())?;
            let mut observer = |ev: &RunEvent| {
                if let RunEvent::AfterTraining {
                    round,
                    segment,
                    final_loss,
                    ..
                } = ev
                {
                    log(&format!("pwnn round {round} segment {segment} loss {:.3e}", final_loss.total));
                }
            };
            run_pwnn_observed(problem, &partition, &spec, &cfg.training, &mut observer)
        }
    }
}

fn train_and_write(
    cfg: &RunConfig,
    problem: &OdeProblem,
    reference: &Reference,
    method: Method,
    dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<(PwnnRun, TrainedSummary)> {
    match train(cfg, problem, method, log) {
        Ok(run) => {
            let summary = write_trained(dir, problem, reference, Ok(&run))?;
            Ok((run, summary))
        }
        Err(e) => {
            if let Error::Aborted { partial, .. } = &e {
                write_trained(dir, problem, reference, Err((partial, &e)))?;
            }
            Err(e)
        }
    }
}

/// Runs `cfg` and writes everything under `cfg.output.dir`.
pub fn run(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<RunOutcome> {
    let problem = cfg.validate()?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    let reference = reference(&problem, &cfg.output)?;
    match cfg.method {
        Method::Rk4 => {
            let summary = write_rk4(dir, &problem, &reference, cfg.output.rk4_step)?;
            Ok(RunOutcome::Rk4(summary))
        }
        Method::Pinn | Method::Pwnn => {
            let (_, summary) = train_and_write(cfg, &problem, &reference, cfg.method, dir, log)?;
            Ok(RunOutcome::Trained(Box::new(summary)))
        }
        Method::Compare => {
            write_rk4(&dir.join("rk4"), &problem, &reference, cfg.output.rk4_step)?;
            let (pw, pw_sum) = train_and_write(cfg, &problem, &reference, Method::Pwnn, &dir.join("pwnn"), log)?;
            let (pi, pi_sum) = train_and_write(cfg, &problem, &reference, Method::Pinn, &dir.join("pinn"), log)?;
            let pw_ys = evaluate_on(&pw.solution, &reference.xs)?;
            let pi_ys = evaluate_on(&pi.solution, &reference.xs)?;
            write_comparison(&dir.join("comparison.csv"), &reference, &pw_ys, &pi_ys)?;
            let pwnn_deviation = pw_sum.deviation.clone().expect("finished run");
            let pinn_deviation = pi_sum.deviation.clone().expect("finished run");
            let summary = CompareSummary {
                problem: problem.name.clone(),
                deviation_ratio: pinn_deviation.overall_max() / pwnn_deviation.overall_max(),
                pwnn_deviation,
                pinn_deviation,
                jumps: pw.report.jumps.clone(),
                pwnn_round_table: pw.report.loss_table(),
                pwnn_round_means: pw.report.round_means(),
                pinn_round_losses: pi.report.round_means(),
            };
            fs::write(dir.join("round_table.txt"), emit_round_table(&pw.report))?;
            fs::write(
                dir.join("convergence_table.txt"),
                convergence_table(&summary.pinn_round_losses, &summary.pwnn_round_means),
            )?;
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(RunOutcome::Compare(Box::new(summary)))
        }
    }
}

fn write_rk4(dir: &Path, problem: &OdeProblem, reference: &Reference, h: f64) -> Result<Rk4Summary> {
    fs::create_dir_all(dir)?;
    write_solution_csv(&dir.join("solution.csv"), &reference.xs, &reference.rk4)?;
    let summary = Rk4Summary {
        problem: problem.name.clone(),
        h,
        steps: reference.steps,
        analytic_deviation: reference.analytic.as_ref().map(|a| Deviation::between(&reference.rk4, a)),
        invariants: invariant_drift(problem, &reference.xs, &reference.rk4),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_comparison(path: &Path, reference: &Reference, pwnn: &[Vec<f64>], pinn: &[Vec<f64>]) -> Result<()> {
    let n = reference.rk4.first().map_or(0, Vec::len);
    let mut header = vec!["x".to_string()];
    for prefix in ["pwnn_", "pinn_", "rk4_", "pwnn_dev_", "pinn_dev_"] {
        header.extend(component_header(prefix, n));
    }
    let rows = (0..reference.xs.len()).map(|j| {
        let (r, a, b) = (&reference.rk4[j], &pwnn[j], &pinn[j]);
        let mut row = vec![num(reference.xs[j])];
        row.extend(a.iter().chain(b).chain(r).map(|&v| num(v)));
        row.extend((0..n).map(|i| num((a[i] - r[i]).abs())));
        row.extend((0..n).map(|i| num((b[i] - r[i]).abs())));
        row
    });
    write_csv(path, &header, rows)
}

/// Mean final loss per round for both methods side by side.
pub fn convergence_table(pinn: &[f64], pwnn: &[f64]) -> String {
    let mut out = String::from("round\tpinn\tpwnn\n");
    for i in 0..pinn.len().max(pwnn.len()) {
        let cell = |v: Option<&f64>| v.map_or("-".to_string(), |v| format!("{v:.2e}"));
        out.push_str(&format!("{}\t{}\t{}\n", i + 1, cell(pinn.get(i)), cell(pwnn.get(i))));
    }
    out
}

fn error_chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Expr { .. } | Error::UnknownProblem { .. } | Error::LayerSpec(_) | Error::Partition(_) => 2,
        _ => 1,
    }
}

/// Entry point used by the `pwnn` binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let quiet = args.quiet;
            let cfg = args.into_config()?;
            let mut log = |line: &str| {
                if !quiet {
                    eprintln!("{line}");
                }
            };
            let outcome = run(&cfg, &mut log)?;
            if !quiet {
                match outcome {
                    RunOutcome::Trained(s) => {
                        if let Some(d) = &s.deviation {
                            eprintln!("max deviation from rk4: {:.3e}", d.overall_max());
                        }
                    }
                    RunOutcome::Rk4(s) => eprintln!("rk4: {} steps", s.steps),
                    RunOutcome::Compare(s) => eprintln!(
                        "max deviation from rk4: pwnn {:.3e}, pinn {:.3e}",
                        s.pwnn_deviation.overall_max(),
                        s.pinn_deviation.overall_max()
                    ),
                }
                eprintln!("wrote {}", cfg.output.dir.display());
            }
            Ok(())
        }
        Command::Problems => {
            for name in registry::NAMES {
                let p = registry::get(name)?;
                println!("{name}\tdim {}\tT {}", p.dim(), p.t_end);
            }
            Ok(())
        }
        Command::Eval { model, x } => {
            let sol = load_solution(&model)?;
            let mut header = vec!["x".to_string()];
            header.extend(component_header("", sol.dim()));
            println!("{}", header.join(","));
            for x in x {
                let y = sol.evaluate(x)?;
                let cells: Vec<String> = std::iter::once(x).chain(y).map(num).collect();
                println!("{}", cells.join(","));
            }
            Ok(())
        }
    }
}
