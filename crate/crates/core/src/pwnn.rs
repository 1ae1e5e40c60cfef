//! Piecewise training over a partition of `[0, T]`.
//!
//! Segments are trained left to right. In round 1 the first segment starts
//! from Xavier weights and every later segment starts from its trained left
//! neighbour; in later rounds each segment restarts from its own previous
//! parameters. The initial-value target of segment `k` is the value of the
//! trained segment `k - 1` at the shared breakpoint.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{read_snapshot, write_snapshot, Activation, LayerSpec, NetworkParameters, SegmentNetwork};
use crate::ode::{sample_collocation, OdeProblem};
use crate::trainer::{gradient_spot_check, train_into, GradientCheck, LossBreakdown, SegmentLoss, TraceRow, TrainingConfig};

/// Breakpoints `0 = a_0 < a_1 < ... < a_p = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    breakpoints: Vec<f64>,
}

impl Partition {
    /// `p` equal segments: `a_k = k T / p`.
    pub fn equal(t_end: f64, p: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Partition(format!("interval end must be positive, got {t_end}")));
        }
        if p == 0 {
            return Err(Error::Partition("need at least one segment".into()));
        }
        let mut breakpoints: Vec<f64> = (0..=p).map(|k| k as f64 * t_end / p as f64).collect();
        breakpoints[p] = t_end;
        Ok(Self { breakpoints })
    }

    pub fn explicit(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Partition("need at least two breakpoints".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Partition(format!("first breakpoint must be 0, got {}", breakpoints[0])));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::Partition("non-finite breakpoint".into()));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::Partition(format!(
                "breakpoints must increase strictly ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Interval of 0-based segment `k`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    /// 0-based owner of `x`: `[0, a_1]` is segment 0, `(a_{k-1}, a_k]` is
    /// segment `k - 1`.
    pub fn locate(&self, x: f64) -> Result<usize> {
        let t = self.t_end();
        if !(0.0..=t).contains(&x) {
            return Err(Error::Domain { x, lo: 0.0, hi: t });
        }
        let inner = &self.breakpoints[1..];
        Ok(inner.partition_point(|&a| a < x).min(self.segments() - 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSolution {
    pub partition: Partition,
    pub segments: Vec<SegmentNetwork>,
}

impl PiecewiseSolution {
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        let k = self.partition.locate(x)?;
        self.segments[k].evaluate(x)
    }

    pub fn dim(&self) -> usize {
        self.segments[0].spec().outputs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    /// 1-based index of the interior breakpoint `a_k`.
    pub k: usize,
    pub at: f64,
    /// `N^k(a_k)`, the value the piecewise solution reports.
    pub left: Vec<f64>,
    /// `N^{k+1}(a_k)`.
    pub right: Vec<f64>,
    pub max_norm: f64,
    pub euclidean: f64,
}

pub fn jump_report(sol: &PiecewiseSolution) -> Result<Vec<Jump>> {
    let p = sol.partition.segments();
    (1..p)
        .map(|k| {
            let at = sol.partition.breakpoints()[k];
            let left = sol.segments[k - 1].evaluate(at)?;
            let right = sol.segments[k].evaluate(at)?;
            let diffs = left.iter().zip(&right).map(|(a, b)| (a - b).abs());
            let max_norm = diffs.clone().fold(0.0, f64::max);
            let euclidean = diffs.map(|d| d * d).sum::<f64>().sqrt();
            Ok(Jump {
                k,
                at,
                left,
                right,
                max_norm,
                euclidean,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Xavier,
    /// Copied from the 1-based segment `from` of the same round.
    Transfer { from: usize },
    PreviousRound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRound {
    /// 1-based.
    pub round: usize,
    /// 1-based.
    pub segment: usize,
    pub interval: (f64, f64),
    pub learning_rate: f64,
    pub init: InitSource,
    pub ic_point: f64,
    pub ic_target: Vec<f64>,
    pub iterations: usize,
    pub final_loss: LossBreakdown,
    pub wall_time_s: f64,
    /// Per-iteration losses; written to CSV rather than the summary.
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub spec: LayerSpec,
    pub breakpoints: Vec<f64>,
    pub config: TrainingConfig,
    pub gradient_check: Option<GradientCheck>,
    /// Ordered by round, then segment.
    pub records: Vec<SegmentRound>,
    pub jumps: Vec<Jump>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn rounds(&self) -> usize {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len().saturating_sub(1)
    }

    pub fn record(&self, round: usize, segment: usize) -> Option<&SegmentRound> {
        self.records.iter().find(|r| r.round == round && r.segment == segment)
    }

    /// Final total loss per round (rows) and segment (columns).
    pub fn loss_table(&self) -> Vec<Vec<f64>> {
        (1..=self.rounds())
            .map(|i| {
                self.records
                    .iter()
                    .filter(|r| r.round == i)
                    .map(|r| r.final_loss.total)
                    .collect()
            })
            .collect()
    }

    /// Mean final total loss of each round.
    pub fn round_means(&self) -> Vec<f64> {
        self.loss_table()
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

/// Observation points inside [`run_pwnn_observed`].
#[derive(Debug)]
pub enum RunEvent<'a> {
    BeforeTraining {
        round: usize,
        segment: usize,
        params: &'a [f64],
        ic_point: f64,
        ic_target: &'a [f64],
    },
    AfterTraining {
        round: usize,
        segment: usize,
        params: &'a [f64],
        final_loss: LossBreakdown,
    },
}

/// Seed for the collocation sample of 0-based segment `k`.
fn collocation_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Clone, Debug)]
pub struct PwnnRun {
    pub solution: PiecewiseSolution,
    pub report: RunReport,
}

fn check_inputs(problem: &OdeProblem, partition: &Partition, spec: &LayerSpec, config: &TrainingConfig) -> Result<()> {
    problem.validate()?;
    config.validate()?;
    if spec.outputs() != problem.dim() {
        return Err(Error::LayerSpec(format!(
            "network has {} outputs, problem dimension is {}",
            spec.outputs(),
            problem.dim()
        )));
    }
    if (partition.t_end() - problem.t_end).abs() > 1e-12 * problem.t_end {
        return Err(Error::Partition(format!(
            "partition ends at {}, problem at {}",
            partition.t_end(),
            problem.t_end
        )));
    }
    Ok(())
}

pub fn run_pwnn(problem: &OdeProblem, partition: &Partition, spec: &LayerSpec, config: &TrainingConfig) -> Result<PwnnRun> {
    run_pwnn_observed(problem, partition, spec, config, &mut |_| {})
}

pub fn run_pwnn_observed(
    problem: &OdeProblem,
    partition: &Partition,
    spec: &LayerSpec,
    config: &TrainingConfig,
    observer: &mut dyn FnMut(&RunEvent<'_>),
) -> Result<PwnnRun> {
    check_inputs(problem, partition, spec, config)?;
    let start = Instant::now();
    let p = partition.segments();
    let colloc: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let (a, b) = partition.interval(k);
            sample_collocation(a, b, config.points, config.sampling, collocation_seed(config.seed, k))
        })
        .collect::<Result<_>>()?;

    let mut report = RunReport {
        problem: problem.name.clone(),
        method: "pwnn".into(),
        seed: config.seed,
        spec: spec.clone(),
        breakpoints: partition.breakpoints().to_vec(),
        config: config.clone(),
        gradient_check: None,
        records: Vec::with_capacity(p * config.rounds),
        jumps: Vec::new(),
        wall_time_s: 0.0,
    };
    let mut nets: Vec<Option<SegmentNetwork>> = vec![None; p];
    let mut round1_targets: Vec<Vec<f64>> = Vec::with_capacity(p);

    for round in 1..=config.rounds {
        for k in 0..p {
            let interval = partition.interval(k);
            let (params, init) = match (round, k) {
                (1, 0) => (NetworkParameters::xavier(spec, config.seed), InitSource::Xavier),
                (1, _) => (
                    nets[k - 1].as_ref().unwrap().params.clone(),
                    InitSource::Transfer { from: k },
                ),
                _ => (nets[k].as_ref().unwrap().params.clone(), InitSource::PreviousRound),
            };
            let ic_point = interval.0;
            let ic_target = if k == 0 {
                problem.y0.clone()
            } else if round > 1 && config.freeze_ic_after_round1 {
                round1_targets[k].clone()
            } else {
                nets[k - 1].as_ref().unwrap().evaluate(ic_point)?
            };
            if round == 1 {
                round1_targets.push(ic_target.clone());
            }
            let mut net = SegmentNetwork::new(params, interval, ic_target.clone(), config.normalize_input)?;
            let mut loss = SegmentLoss::new(&net, problem, &colloc[k], ic_point, &ic_target)?;

            let abort = |report: &RunReport, e: Error| Error::Aborted {
                round,
                segment: k + 1,
                source: Box::new(e),
                partial: Box::new(report.clone()),
            };
            if round == 1 && k == 0 && config.gradient_check {
                match gradient_spot_check(&mut loss, net.params.as_flat(), 10, config.seed, 1e-4) {
                    Ok(check) => report.gradient_check = Some(check),
                    Err(e) => return Err(abort(&report, e)),
                }
            }

            observer(&RunEvent::BeforeTraining {
                round,
                segment: k + 1,
                params: net.params.as_flat(),
                ic_point,
                ic_target: &ic_target,
            });
            let seg_start = Instant::now();
            let mut trace = Vec::with_capacity(config.max_iterations + 1);
            let result = train_into(&mut net, &mut loss, config, round, &mut trace);
            let mut record = SegmentRound {
                round,
                segment: k + 1,
                interval,
                learning_rate: config.learning_rate(round),
                init,
                ic_point,
                ic_target,
                iterations: trace.len().saturating_sub(1),
                final_loss: trace.last().map_or_else(LossBreakdown::default, |r| LossBreakdown {
                    residual: r.residual,
                    ic: r.ic,
                    total: r.total,
                }),
                wall_time_s: 0.0,
                trace,
            };
            match result {
                Ok((final_loss, iterations)) => {
                    record.final_loss = final_loss;
                    record.iterations = iterations;
                    record.wall_time_s = seg_start.elapsed().as_secs_f64();
                    report.records.push(record);
                }
                Err(e) => {
                    record.wall_time_s = seg_start.elapsed().as_secs_f64();
                    report.records.push(record);
                    report.wall_time_s = start.elapsed().as_secs_f64();
                    return Err(abort(&report, e));
                }
            }
            observer(&RunEvent::AfterTraining {
                round,
                segment: k + 1,
                params: net.params.as_flat(),
                final_loss: report.records.last().unwrap().final_loss,
            });
            nets[k] = Some(net);
        }
    }

    let solution = PiecewiseSolution {
        partition: partition.clone(),
        segments: nets.into_iter().map(Option::unwrap).collect(),
    };
    report.jumps = jump_report(&solution)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(PwnnRun { solution, report })
}

/// One network over the whole interval, re-trained from its own parameters
/// in each round. Collocation and initialization match a one-segment
/// piecewise run with the same seed.
pub fn run_pinn(problem: &OdeProblem, spec: &LayerSpec, config: &TrainingConfig) -> Result<PwnnRun> {
    let partition = Partition::equal(problem.t_end, 1)?;
    check_inputs(problem, &partition, spec, config)?;
    let start = Instant::now();
    let colloc = sample_collocation(0.0, problem.t_end, config.points, config.sampling, collocation_seed(config.seed, 0))?;
    let mut net = SegmentNetwork::new(
        NetworkParameters::xavier(spec, config.seed),
        (0.0, problem.t_end),
        problem.y0.clone(),
        config.normalize_input,
    )?;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let seg_start = Instant::now();
        let out = crate::trainer::train_segment(net, problem, &colloc, 0.0, &problem.y0, config, round).map_err(|e| {
            Error::Aborted {
                round,
                segment: 1,
                source: Box::new(e),
                partial: Box::new(RunReport {
                    problem: problem.name.clone(),
                    method: "pinn".into(),
                    seed: config.seed,
                    spec: spec.clone(),
                    breakpoints: partition.breakpoints().to_vec(),
                    config: config.clone(),
                    gradient_check: None,
                    records: records.clone(),
                    jumps: Vec::new(),
                    wall_time_s: start.elapsed().as_secs_f64(),
                }),
            }
        })?;
        records.push(SegmentRound {
            round,
            segment: 1,
            interval: (0.0, problem.t_end),
            learning_rate: config.learning_rate(round),
            init: if round == 1 { InitSource::Xavier } else { InitSource::PreviousRound },
            ic_point: 0.0,
            ic_target: problem.y0.clone(),
            iterations: out.iterations,
            final_loss: out.final_loss,
            wall_time_s: seg_start.elapsed().as_secs_f64(),
            trace: out.trace,
        });
        net = out.net;
    }
    let solution = PiecewiseSolution {
        partition: partition.clone(),
        segments: vec![net],
    };
    let report = RunReport {
        problem: problem.name.clone(),
        method: "pinn".into(),
        seed: config.seed,
        spec: spec.clone(),
        breakpoints: partition.breakpoints().to_vec(),
        config: config.clone(),
        gradient_check: None,
        records,
        jumps: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(PwnnRun { solution, report })
}

#[derive(Serialize, Deserialize)]
struct SolutionManifest {
    breakpoints: Vec<f64>,
    sizes: Vec<usize>,
    activation: Activation,
    normalize_input: bool,
    initial_values: Vec<Vec<f64>>,
    files: Vec<String>,
}

/// Writes `partition.json` plus one `segment{k}.bin` snapshot per segment.
pub fn save_solution(dir: &Path, sol: &PiecewiseSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let spec = sol.segments[0].spec();
    let mut files = Vec::new();
    for (k, seg) in sol.segments.iter().enumerate() {
        let name = format!("segment{}.bin", k + 1);
        write_snapshot(&dir.join(&name), &seg.params)?;
        files.push(name);
    }
    let manifest = SolutionManifest {
        breakpoints: sol.partition.breakpoints().to_vec(),
        sizes: spec.sizes().to_vec(),
        activation: spec.activation(),
        normalize_input: sol.segments[0].input_map != crate::network::InputMap::Raw,
        initial_values: sol.segments.iter().map(|s| s.initial_value.clone()).collect(),
        files,
    };
    std::fs::write(dir.join("partition.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_solution(dir: &Path) -> Result<PiecewiseSolution> {
    let manifest: SolutionManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("partition.json"))?)?;
    let partition = Partition::explicit(manifest.breakpoints)?;
    if manifest.files.len() != partition.segments() || manifest.initial_values.len() != partition.segments() {
        return Err(Error::Partition("manifest segment count does not match breakpoints".into()));
    }
    let mut segments = Vec::with_capacity(partition.segments());
    for (k, file) in manifest.files.iter().enumerate() {
        let params = read_snapshot(&dir.join(file), manifest.activation)?;
        if params.spec().sizes() != manifest.sizes.as_slice() {
            return Err(Error::Snapshot {
                path: dir.join(file),
                message: format!("layer sizes {:?} differ from manifest {:?}", params.spec().sizes(), manifest.sizes),
            });
        }
        segments.push(SegmentNetwork::new(
            params,
            partition.interval(k),
            manifest.initial_values[k].clone(),
            manifest.normalize_input,
        )?);
    }
    Ok(PiecewiseSolution { partition, segments })
}
