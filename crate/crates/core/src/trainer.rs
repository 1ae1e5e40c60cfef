//! Physics-residual loss for one segment network and its Adam training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Node, Tape};
use crate::error::{Error, Result};
use crate::network::SegmentNetwork;
use crate::ode::{OdeProblem, SamplingMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Per-round learning rates; a single entry applies to every round.
    pub learning_rates: Vec<f64>,
    pub max_iterations: usize,
    /// Stop once the total loss drops below this.
    pub epsilon: f64,
    /// Collocation points per segment.
    pub points: usize,
    pub seed: u64,
    pub rounds: usize,
    pub sampling: SamplingMode,
    /// Return the lowest-loss iterate instead of the last one.
    pub keep_best: bool,
    /// Keep the round-1 initial-value targets in later rounds.
    pub freeze_ic_after_round1: bool,
    /// Map each segment onto [-1, 1] before the first layer.
    pub normalize_input: bool,
    /// Finite-difference spot check of the loss gradient before training.
    pub gradient_check: bool,
    pub adam: AdamParams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.01],
            max_iterations: 10_000,
            epsilon: 1e-8,
            points: 100,
            seed: 0,
            rounds: 1,
            sampling: SamplingMode::Equidistant,
            keep_best: false,
            freeze_ic_after_round1: false,
            normalize_input: true,
            gradient_check: true,
            adam: AdamParams::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Training(m));
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0) || !lr.is_finite()) {
            return bad(format!("learning rates must be positive, got {:?}", self.learning_rates));
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.rounds < 1 {
            return bad("rounds must be at least 1".into());
        }
        if self.learning_rates.len() != 1 && self.learning_rates.len() < self.rounds {
            return bad(format!(
                "{} learning rates for {} rounds",
                self.learning_rates.len(),
                self.rounds
            ));
        }
        if self.points < 2 {
            return bad(format!("need at least 2 collocation points, got {}", self.points));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam parameters {a:?}"));
        }
        Ok(())
    }

    /// Learning rate of 1-based `round`.
    pub fn learning_rate(&self, round: usize) -> f64 {
        if self.learning_rates.len() == 1 {
            self.learning_rates[0]
        } else {
            self.learning_rates[round - 1]
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub ic: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub ic: f64,
    pub total: f64,
}

impl TraceRow {
    fn new(iteration: usize, l: LossBreakdown) -> Self {
        Self {
            iteration,
            residual: l.residual,
            ic: l.ic,
            total: l.total,
        }
    }
}

/// The segment loss recorded once on a tape:
///
/// `1/(M n) sum_j sum_i (N_i'(x_j) - f_i(x_j, N(x_j)))^2 + 1/n sum_i (N_i(a) - target_i)^2`
///
/// Replaying it for new parameters only rewrites the parameter leaves.
pub struct SegmentLoss {
    tape: Tape,
    residual: Node,
    ic: Node,
    total: Node,
}

impl SegmentLoss {
    pub fn new(
        net: &SegmentNetwork,
        problem: &OdeProblem,
        colloc: &[f64],
        ic_point: f64,
        ic_target: &[f64],
    ) -> Result<Self> {
        let n = problem.dim();
        if net.spec().outputs() != n {
            return Err(Error::Shape {
                expected: n,
                actual: net.spec().outputs(),
            });
        }
        if ic_target.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: ic_target.len(),
            });
        }
        if colloc.is_empty() {
            return Err(Error::Training("empty collocation set".into()));
        }
        let mut tape = Tape::new();
        let block = tape.params(net.params.as_flat());

        let mut squares = Vec::with_capacity(colloc.len() * n);
        for &xj in colloc {
            let x = tape.input(xj);
            let out = net.record(&mut tape, block, x);
            for (i, rhs) in problem.rhs.iter().enumerate() {
                let d = tape.tangent_of(out[i])?;
                let f = rhs.record(&mut tape, x, &out);
                let r = tape.sub(d, f);
                squares.push(tape.square(r));
            }
        }
        let sum = tape.sum(&squares);
        let residual = tape.scale(sum, 1.0 / (colloc.len() * n) as f64);

        let a = tape.input(ic_point);
        let out = net.record(&mut tape, block, a);
        let ic_sq: Vec<Node> = out
            .iter()
            .zip(ic_target)
            .map(|(&o, &t)| {
                let c = tape.constant(t);
                let diff = tape.sub(o, c);
                tape.square(diff)
            })
            .collect();
        let ic_sum = tape.sum(&ic_sq);
        let ic = tape.scale(ic_sum, 1.0 / n as f64);
        let total = tape.add(residual, ic);
        Ok(Self {
            tape,
            residual,
            ic,
            total,
        })
    }

    pub fn param_count(&self) -> usize {
        self.tape.param_block().map_or(0, |b| b.len())
    }

    fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            residual: self.tape.value(self.residual),
            ic: self.tape.value(self.ic),
            total: self.tape.value(self.total),
        }
    }

    pub fn evaluate(&mut self, params: &[f64]) -> Result<LossBreakdown> {
        self.tape.set_params(params)?;
        self.tape.forward()?;
        Ok(self.breakdown())
    }

    /// Loss at `params` with its parameter gradient written into `grad`.
    pub fn value_and_grad(&mut self, params: &[f64], grad: &mut [f64]) -> Result<LossBreakdown> {
        let l = self.evaluate(params)?;
        self.tape.backward(self.total);
        self.tape.param_gradient(grad)?;
        Ok(l)
    }

    pub fn gradient(&mut self, params: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; params.len()];
        self.value_and_grad(params, &mut g)?;
        Ok(g)
    }
}

/// Loss breakdown of `net` on a segment.
pub fn segment_loss(
    net: &SegmentNetwork,
    problem: &OdeProblem,
    colloc: &[f64],
    ic_point: f64,
    ic_target: &[f64],
) -> Result<LossBreakdown> {
    let mut loss = SegmentLoss::new(net, problem, colloc, ic_point, ic_target)?;
    loss.evaluate(net.params.as_flat())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub params: AdamParams,
}

impl AdamState {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            params,
        }
    }
}

pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(Error::Shape {
            expected: state.m.len(),
            actual: grad.len(),
        });
    }
    let AdamParams { beta1, beta2, eps } = state.params;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for k in 0..theta.len() {
        let g = grad[k];
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: SegmentNetwork,
    /// Loss at every iterate, starting with the initial parameters as
    /// iteration 0.
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
    /// Adam steps taken.
    pub iterations: usize,
}

/// Trains `net` in place. Rows are appended to `trace` as they are
/// produced so a caller still holds them after a divergence.
pub(crate) fn train_into(
    net: &mut SegmentNetwork,
    loss: &mut SegmentLoss,
    config: &TrainingConfig,
    round: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<(LossBreakdown, usize)> {
    let lr = config.learning_rate(round);
    let mut theta = net.params.export_flat();
    let mut grad = vec![0.0; theta.len()];
    let mut state = AdamState::new(theta.len(), config.adam);

    let mut cur = loss
        .value_and_grad(&theta, &mut grad)
        .map_err(|e| Error::divergence(0, e))?;
    trace.push(TraceRow::new(0, cur));
    let mut best = (cur, theta.clone());

    let mut it = 1;
    while it <= config.max_iterations && cur.total >= config.epsilon {
        adam_step(&mut theta, &grad, &mut state, lr)?;
        cur = loss
            .value_and_grad(&theta, &mut grad)
            .map_err(|e| Error::divergence(it, e))?;
        trace.push(TraceRow::new(it, cur));
        if config.keep_best && cur.total < best.0.total {
            best = (cur, theta.clone());
        }
        it += 1;
    }
    let steps = it - 1;
    if config.keep_best {
        cur = best.0;
        theta = best.1;
    }
    net.params.import_flat(&theta)?;
    Ok((cur, steps))
}

/// Full-batch Adam on one segment until `max_iterations` steps have been
/// taken or the total loss falls below `epsilon`. `round` is 1-based and
/// selects the learning rate.
pub fn train_segment(
    mut net: SegmentNetwork,
    problem: &OdeProblem,
    colloc: &[f64],
    ic_point: f64,
    ic_target: &[f64],
    config: &TrainingConfig,
    round: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut loss = SegmentLoss::new(&net, problem, colloc, ic_point, ic_target)?;
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    let (final_loss, iterations) = train_into(&mut net, &mut loss, config, round, &mut trace)?;
    Ok(TrainOutcome {
        net,
        trace,
        final_loss,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub indices: Vec<usize>,
    pub max_rel_error: f64,
}

/// Compares the tape gradient with central differences on `count` random
/// parameters. Fails with [`Error::GradientCheck`] above `rel_tol`
/// (absolute floor `1e-7`).
pub fn gradient_spot_check(
    loss: &mut SegmentLoss,
    params: &[f64],
    count: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<GradientCheck> {
    let analytic = loss.gradient(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.to_vec();
    let mut indices = Vec::with_capacity(count);
    let mut max_rel: f64 = 0.0;
    for _ in 0..count {
        let k = rng.gen_range(0..params.len());
        let h = 1e-6 * params[k].abs().max(1.0);
        probe[k] = params[k] + h;
        let up = loss.evaluate(&probe)?.total;
        probe[k] = params[k] - h;
        let down = loss.evaluate(&probe)?.total;
        probe[k] = params[k];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[k] - numeric).abs();
        let scale = analytic[k].abs().max(numeric.abs());
        if err > rel_tol * scale && err > 1e-7 {
            return Err(Error::GradientCheck {
                index: k,
                analytic: analytic[k],
                numeric,
            });
        }
        if scale > 0.0 {
            max_rel = max_rel.max(err / scale);
        }
        indices.push(k);
    }
    Ok(GradientCheck {
        indices,
        max_rel_error: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkParameters};
    use crate::ode::{registry, sample_collocation, Expr};

    fn zero_problem() -> OdeProblem {
        OdeProblem::new("zero", vec![Expr::Num(0.0), Expr::Num(0.0)], vec![0.0, 0.0], 1.0).unwrap()
    }

    fn tanh_net() -> SegmentNetwork {
        let spec = LayerSpec::with_hidden(&[1], 1).unwrap();
        let p = NetworkParameters::from_flat(&spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        SegmentNetwork::new(p, (0.0, 2.0), vec![0.0], false).unwrap()
    }

    #[test]
    fn zero_network_solves_zero_problem() {
        let spec = LayerSpec::with_hidden(&[5, 5], 2).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::zeros(&spec), (0.0, 1.0), vec![0.0; 2], false).unwrap();
        let xs = sample_collocation(0.0, 1.0, 10, SamplingMode::Equidistant, 0).unwrap();
        let l = segment_loss(&net, &zero_problem(), &xs, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn tanh_solves_riccati_exactly() {
        let p = OdeProblem::new("riccati", vec![Expr::parse("1 - y1^2").unwrap()], vec![0.0], 2.0).unwrap();
        let xs = sample_collocation(0.0, 2.0, 25, SamplingMode::Equidistant, 0).unwrap();
        let l = segment_loss(&tanh_net(), &p, &xs, 0.0, &[0.0]).unwrap();
        assert!(l.total.abs() < 1e-14, "{l:?}");
        assert_eq!(l.ic, 0.0);
    }

    #[test]
    fn breakdown_is_additive_and_nonnegative() {
        let p = registry::get("example1").unwrap();
        let spec = LayerSpec::with_hidden(&[6], 2).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::xavier(&spec, 3), (0.0, 2.0), vec![0.0, 1.0], false).unwrap();
        let xs = sample_collocation(0.0, 2.0, 10, SamplingMode::Equidistant, 0).unwrap();
        let l = segment_loss(&net, &p, &xs, 0.0, &p.y0).unwrap();
        assert!(l.residual > 0.0 && l.ic >= 0.0);
        assert_eq!(l.total, l.residual + l.ic);
    }

    #[test]
    fn shape_errors() {
        let p = registry::get("example2_sir").unwrap();
        let xs = [0.0, 1.0];
        assert!(SegmentLoss::new(&tanh_net(), &p, &xs, 0.0, &p.y0).is_err());
        let spec = LayerSpec::with_hidden(&[3], 3).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::zeros(&spec), (0.0, 1.0), vec![0.0; 3], false).unwrap();
        assert!(SegmentLoss::new(&net, &p, &xs, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut theta = vec![0.5, -1.0, 2.0];
        let mut st = AdamState::new(3, AdamParams::default());
        adam_step(&mut theta, &[0.0; 3], &mut st, 0.01).unwrap();
        assert_eq!(theta, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut theta = vec![0.0];
        let mut st = AdamState::new(1, AdamParams::default());
        adam_step(&mut theta, &[1.0], &mut st, 0.01).unwrap();
        assert!((st.m[0] - 0.1).abs() < 1e-16);
        assert!((st.v[0] - 0.001).abs() < 1e-16);
        assert!((theta[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-16);
    }

    #[test]
    fn adam_is_deterministic() {
        let g = [0.3, -2.0, 1e-4];
        let run = || {
            let mut th = vec![1.0, 2.0, 3.0];
            let mut st = AdamState::new(3, AdamParams::default());
            for _ in 0..2 {
                adam_step(&mut th, &g, &mut st, 0.05).unwrap();
            }
            (th, st)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.1.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(2, AdamParams::default());
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut st, 0.1).is_err());
    }

    fn small_setup() -> (SegmentNetwork, OdeProblem, Vec<f64>) {
        let p = registry::get("example1").unwrap();
        let spec = LayerSpec::with_hidden(&[8], 2).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::xavier(&spec, 1), (0.0, 2.0), p.y0.clone(), false).unwrap();
        let xs = sample_collocation(0.0, 2.0, 20, SamplingMode::Equidistant, 0).unwrap();
        (net, p, xs)
    }

    #[test]
    fn infinite_epsilon_takes_no_steps() {
        let (net, p, xs) = small_setup();
        let cfg = TrainingConfig {
            epsilon: f64::INFINITY,
            ..Default::default()
        };
        let before = segment_loss(&net, &p, &xs, 0.0, &p.y0).unwrap();
        let out = train_segment(net.clone(), &p, &xs, 0.0, &p.y0.clone(), &cfg, 1).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.final_loss, before);
        assert_eq!(out.net, net);
    }

    #[test]
    fn single_iteration_is_one_adam_step() {
        let (net, p, xs) = small_setup();
        let cfg = TrainingConfig {
            max_iterations: 1,
            learning_rates: vec![0.01],
            ..Default::default()
        };
        let out = train_segment(net.clone(), &p, &xs, 0.0, &p.y0.clone(), &cfg, 1).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.trace.len(), 2);

        let mut loss = SegmentLoss::new(&net, &p, &xs, 0.0, &p.y0).unwrap();
        let mut theta = net.params.export_flat();
        let g = loss.gradient(&theta).unwrap();
        let mut st = AdamState::new(theta.len(), AdamParams::default());
        adam_step(&mut theta, &g, &mut st, 0.01).unwrap();
        assert_eq!(out.net.params.as_flat(), theta.as_slice());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (net, p, xs) = small_setup();
        let cfg = TrainingConfig {
            max_iterations: 300,
            ..Default::default()
        };
        let a = train_segment(net.clone(), &p, &xs, 0.0, &p.y0.clone(), &cfg, 1).unwrap();
        let b = train_segment(net, &p, &xs, 0.0, &p.y0.clone(), &cfg, 1).unwrap();
        assert!(a.final_loss.total < 0.1 * a.trace[0].total);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_loss, a.trace.last().map(|r| LossBreakdown { residual: r.residual, ic: r.ic, total: r.total }).unwrap());
    }

    #[test]
    fn keep_best_returns_minimum() {
        let (net, p, xs) = small_setup();
        let cfg = TrainingConfig {
            max_iterations: 200,
            learning_rates: vec![0.2],
            keep_best: true,
            ..Default::default()
        };
        let out = train_segment(net, &p, &xs, 0.0, &p.y0.clone(), &cfg, 1).unwrap();
        let min = out.trace.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
        assert_eq!(out.final_loss.total, min);
    }

    #[test]
    fn divergence_carries_iteration() {
        // y' = y^2 blows up; a huge learning rate drives parameters off
        let p = OdeProblem::new("b", vec![Expr::parse("exp(y1 * 1000)").unwrap()], vec![1.0], 1.0).unwrap();
        let spec = LayerSpec::with_hidden(&[4], 1).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::xavier(&spec, 0), (0.0, 1.0), vec![1.0], false).unwrap();
        let xs = [0.0, 0.5, 1.0];
        let cfg = TrainingConfig {
            max_iterations: 100,
            learning_rates: vec![10.0],
            ..Default::default()
        };
        match train_segment(net, &p, &xs, 0.0, &[1.0], &cfg, 1) {
            Err(Error::Divergence { source, .. }) => {
                assert!(matches!(*source, Error::NonFinite { .. }));
            }
            other => panic!("{:?}", other.map(|o| o.final_loss)),
        }
    }

    #[test]
    fn config_validation() {
        let ok = TrainingConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainingConfig { learning_rates: vec![], ..ok.clone() },
            TrainingConfig { learning_rates: vec![-0.1], ..ok.clone() },
            TrainingConfig { max_iterations: 0, ..ok.clone() },
            TrainingConfig { epsilon: -1.0, ..ok.clone() },
            TrainingConfig { rounds: 0, ..ok.clone() },
            TrainingConfig { rounds: 3, learning_rates: vec![0.1, 0.01], ..ok.clone() },
            TrainingConfig { points: 1, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let sched = TrainingConfig { rounds: 2, learning_rates: vec![1e-3, 1e-4, 1e-5], ..ok };
        assert!(sched.validate().is_ok());
        assert_eq!(sched.learning_rate(2), 1e-4);
    }

    #[test]
    fn spot_check_passes_on_real_loss() {
        let (net, p, xs) = small_setup();
        let mut loss = SegmentLoss::new(&net, &p, &xs, 0.0, &p.y0).unwrap();
        let rep = gradient_spot_check(&mut loss, net.params.as_flat(), 10, 5, 1e-4).unwrap();
        assert_eq!(rep.indices.len(), 10);
        assert!(rep.max_rel_error < 1e-4);
    }
}
