#![allow(dead_code)]

use pwnn_core::network::SegmentNetwork;
use pwnn_core::pwnn::{Partition, RunEvent};
use pwnn_core::trainer::SegmentLoss;
use pwnn_core::{LayerSpec, NetworkParameters, OdeProblem, PiecewiseSolution, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Equidistant grid on `[0, t_end]`.
pub fn grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { t_end } else { t_end * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Largest absolute component deviation of `sol` from `reference` on `xs`.
pub fn max_deviation(sol: &PiecewiseSolution, xs: &[f64], reference: impl Fn(f64) -> Vec<f64>) -> f64 {
    xs.iter()
        .map(|&x| {
            let y = sol.evaluate(x).unwrap();
            y.iter()
                .zip(reference(x))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Worst violation of `|analytic - fd| <= max(rel * max(|analytic|, |fd|), abs)`
/// over all parameters, as a ratio (pass when <= 1).
pub fn fd_gradient_ratio(loss: &mut SegmentLoss, params: &[f64], h: f64, rel: f64, abs: f64) -> f64 {
    let analytic = loss.gradient(params).unwrap();
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = loss.evaluate(&probe).unwrap().total;
        probe[i] = params[i] - h;
        let down = loss.evaluate(&probe).unwrap().total;
        probe[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let tol = (rel * analytic[i].abs().max(fd.abs())).max(abs);
        worst = worst.max((analytic[i] - fd).abs() / tol);
    }
    worst
}

/// Random network (Xavier weights, random biases) on a random sub-interval
/// of `[0, t_end]` with a random collocation batch and initial target.
pub struct RandomCase {
    pub net: SegmentNetwork,
    pub colloc: Vec<f64>,
    pub ic_target: Vec<f64>,
}

pub fn random_case(spec: &LayerSpec, t_end: f64, points: usize, normalize: bool, seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = NetworkParameters::xavier(spec, seed).export_flat();
    for (_, fan_out, _, b_off) in spec.layers() {
        for b in &mut flat[b_off..b_off + fan_out] {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let params = NetworkParameters::from_flat(spec, flat).unwrap();
    let lo = rng.gen_range(0.0..t_end * 0.8);
    let hi = lo + rng.gen_range(0.5..t_end - lo).max(0.5);
    let ic_target: Vec<f64> = (0..spec.outputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut colloc: Vec<f64> = (0..points).map(|_| rng.gen_range(lo..hi)).collect();
    colloc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let net = SegmentNetwork::new(params, (lo, hi), ic_target.clone(), normalize).unwrap();
    RandomCase { net, colloc, ic_target }
}

/// Checks, from observer events alone, that every handoff is bit-identical:
/// round-1 transfer from the left neighbour, later rounds starting from the
/// segment's own previous parameters, and initial-value targets equal to
/// the predecessor's value at the breakpoint.
pub struct HandoffChecker {
    spec: LayerSpec,
    partition: Partition,
    normalize: bool,
    seed: u64,
    y0: Vec<f64>,
    freeze: bool,
    after: Vec<Vec<Option<Vec<f64>>>>,
    round1_targets: Vec<Option<Vec<f64>>>,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl HandoffChecker {
    pub fn new(problem: &OdeProblem, partition: &Partition, spec: &LayerSpec, config: &TrainingConfig) -> Self {
        Self {
            spec: spec.clone(),
            partition: partition.clone(),
            normalize: config.normalize_input,
            seed: config.seed,
            y0: problem.y0.clone(),
            freeze: config.freeze_ic_after_round1,
            after: Vec::new(),
            round1_targets: vec![None; partition.segments()],
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn after_params(&self, round: usize, segment: usize) -> Option<&Vec<f64>> {
        self.after.get(round - 1)?.get(segment - 1)?.as_ref()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    pub fn observe(&mut self, ev: &RunEvent) {
        match ev {
            RunEvent::BeforeTraining {
                round,
                segment,
                params,
                ic_point,
                ic_target,
            } => {
                let (r, k) = (*round, *segment);
                let expected_params = match (r, k) {
                    (1, 1) => Some(NetworkParameters::xavier(&self.spec, self.seed).export_flat()),
                    (1, _) => self.after_params(1, k - 1).cloned(),
                    _ => self.after_params(r - 1, k).cloned(),
                };
                self.checks += 1;
                match expected_params {
                    Some(p) if Self::bits(&p) == Self::bits(params) => {}
                    _ => self.failures.push(format!("params handoff round {r} segment {k}")),
                }
                let (lo, _) = self.partition.interval(k - 1);
                self.checks += 1;
                if ic_point.to_bits() != lo.to_bits() {
                    self.failures.push(format!("ic point round {r} segment {k}"));
                }
                let expected_target = if k == 1 {
                    Some(self.y0.clone())
                } else if r > 1 && self.freeze {
                    self.round1_targets[k - 1].clone()
                } else {
                    self.after_params(r, k - 1).map(|p| {
                        let params = NetworkParameters::from_flat(&self.spec, p.clone()).unwrap();
                        let prev = SegmentNetwork::new(
                            params,
                            self.partition.interval(k - 2),
                            vec![0.0; self.spec.outputs()],
                            self.normalize,
                        )
                        .unwrap();
                        prev.evaluate(lo).unwrap()
                    })
                };
                self.checks += 1;
                match expected_target {
                    Some(t) if Self::bits(&t) == Self::bits(ic_target) => {}
                    _ => self.failures.push(format!("ic target round {r} segment {k}")),
                }
                if r == 1 {
                    self.round1_targets[k - 1] = Some(ic_target.to_vec());
                }
            }
            RunEvent::AfterTraining {
                round, segment, params, ..
            } => {
                let (r, k) = (*round, *segment);
                while self.after.len() < r {
                    self.after.push(vec![None; self.partition.segments()]);
                }
                self.after[r - 1][k - 1] = Some(params.to_vec());
            }
        }
    }
}
