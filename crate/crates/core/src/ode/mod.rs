//! Initial value problems, the fixed-step RK4 reference integrator and
//! collocation sampling.

pub mod expr;
pub mod registry;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use expr::Expr;

/// A quantity `g(y)` that stays at `value` along exact trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub label: String,
    pub expr: Expr,
    pub value: f64,
}

/// `dy/dx = f(x, y)` on `(0, t_end)` with `y(0) = y0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeProblem {
    pub name: String,
    pub rhs: Vec<Expr>,
    pub y0: Vec<f64>,
    pub t_end: f64,
    /// Exact solution components as functions of `x` only.
    #[serde(default)]
    pub analytic: Option<Vec<Expr>>,
    #[serde(default)]
    pub invariants: Vec<Invariant>,
}

impl OdeProblem {
    pub fn new(name: impl Into<String>, rhs: Vec<Expr>, y0: Vec<f64>, t_end: f64) -> Result<Self> {
        let p = Self {
            name: name.into(),
            rhs,
            y0,
            t_end,
            analytic: None,
            invariants: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_analytic(mut self, analytic: Vec<Expr>) -> Result<Self> {
        self.analytic = Some(analytic);
        self.validate()?;
        Ok(self)
    }

    pub fn with_invariant(mut self, label: &str, expr: Expr, value: f64) -> Result<Self> {
        self.invariants.push(Invariant {
            label: label.to_string(),
            expr,
            value,
        });
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Problem("empty state".into()));
        }
        if self.rhs.len() != n {
            return Err(Error::Problem(format!(
                "{} right-hand sides for a {n}-dimensional state",
                self.rhs.len()
            )));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Problem(format!("interval end must be positive, got {}", self.t_end)));
        }
        if self.y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Problem("non-finite initial value".into()));
        }
        let check_arity = |what: &str, e: &Expr| {
            if e.state_arity() > n {
                Err(Error::Problem(format!("{what} `{e}` refers to y{} but n = {n}", e.state_arity())))
            } else {
                Ok(())
            }
        };
        for e in &self.rhs {
            check_arity("right-hand side", e)?;
        }
        for inv in &self.invariants {
            check_arity("invariant", &inv.expr)?;
        }
        if let Some(sol) = &self.analytic {
            if sol.len() != n {
                return Err(Error::Problem(format!("analytic solution has {} components", sol.len())));
            }
            for (i, e) in sol.iter().enumerate() {
                if e.state_arity() > 0 {
                    return Err(Error::Problem(format!("analytic component {} depends on the state", i + 1)));
                }
                let v0 = e.eval(0.0, &[]);
                if (v0 - self.y0[i]).abs() > 1e-12 {
                    return Err(Error::Problem(format!(
                        "analytic component {} gives {v0} at x = 0, initial value is {}",
                        i + 1,
                        self.y0[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rhs_into(&self, x: f64, y: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.rhs) {
            *o = e.eval(x, y);
        }
    }

    pub fn rhs(&self, x: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.rhs_into(x, y, &mut out);
        out
    }

    pub fn analytic_at(&self, x: f64) -> Option<Vec<f64>> {
        self.analytic
            .as_ref()
            .map(|sol| sol.iter().map(|e| e.eval(x, &[])).collect())
    }
}

/// Output of [`rk4_solve`]: `xs[i] = i * h` except possibly a shorter final
/// step that lands exactly on the requested end point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub h: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
}

fn rk4_step(p: &OdeProblem, x: f64, y: &[f64], h: f64, k: &mut [Vec<f64>; 5]) -> Vec<f64> {
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = k;
    p.rhs_into(x, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    p.rhs_into(x + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    p.rhs_into(x + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    p.rhs_into(x + h, tmp, k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

/// Classical fixed-step fourth-order Runge-Kutta from `x = 0` to `x_end`.
pub fn rk4_solve(p: &OdeProblem, h: f64, x_end: f64) -> Result<ReferenceTrajectory> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Problem(format!("step size must be positive, got {h}")));
    }
    if !(x_end > 0.0) || x_end > p.t_end * (1.0 + 1e-12) {
        return Err(Error::Domain {
            x: x_end,
            lo: 0.0,
            hi: p.t_end,
        });
    }
    let full = (x_end / h + 1e-9).floor() as usize;
    let mut xs = Vec::with_capacity(full + 2);
    let mut ys = Vec::with_capacity(full + 2);
    let mut k = scratch(p.dim());
    let mut y = p.y0.clone();
    xs.push(0.0);
    ys.push(y.clone());
    let mut step = |i: usize, x: f64, dx: f64, y: &[f64]| -> Result<Vec<f64>> {
        let next = rk4_step(p, x, y, dx, &mut k);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: i, x: x + dx });
        }
        Ok(next)
    };
    for i in 0..full {
        let x = i as f64 * h;
        let next_x = (i + 1) as f64 * h;
        y = step(i + 1, x, next_x - x, &y)?;
        xs.push(next_x);
        ys.push(y.clone());
    }
    let last = *xs.last().unwrap();
    if x_end - last > 1e-12 * x_end.max(1.0) {
        y = step(full + 1, last, x_end - last, &y)?;
        xs.push(x_end);
        ys.push(y);
    }
    Ok(ReferenceTrajectory { h, xs, ys })
}

impl ReferenceTrajectory {
    /// State at arbitrary `x` inside the trajectory: the stored node if `x`
    /// hits one, otherwise one partial RK4 step from the node below.
    pub fn value_at(&self, p: &OdeProblem, x: f64) -> Result<Vec<f64>> {
        let hi = *self.xs.last().unwrap();
        if !(0.0..=hi).contains(&x) {
            return Err(Error::Domain { x, lo: 0.0, hi });
        }
        let i = ((x / self.h).floor() as usize).min(self.xs.len() - 1);
        // floor can land one node too high through rounding
        let i = if self.xs[i] > x { i - 1 } else { i };
        let dx = x - self.xs[i];
        if dx == 0.0 {
            return Ok(self.ys[i].clone());
        }
        let mut k = scratch(p.dim());
        Ok(rk4_step(p, self.xs[i], &self.ys[i], dx, &mut k))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Equidistant,
    Random,
}

/// Collocation points on `[a, b]`, ascending.
pub fn sample_collocation(a: f64, b: f64, count: usize, mode: SamplingMode, seed: u64) -> Result<Vec<f64>> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Interval { lo: a, hi: b });
    }
    if count < 2 {
        return Err(Error::Training(format!("need at least 2 collocation points, got {count}")));
    }
    let mut xs: Vec<f64> = match mode {
        SamplingMode::Equidistant => {
            let step = (b - a) / (count - 1) as f64;
            (0..count).map(|j| a + j as f64 * step).collect()
        }
        SamplingMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| rng.gen_range(a..=b)).collect()
        }
    };
    if mode == SamplingMode::Equidistant {
        xs[count - 1] = b;
    }
    xs.sort_by(f64::total_cmp);
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_solution() {
        let p = OdeProblem::new("c", vec![Expr::Num(0.0), Expr::Num(0.0)], vec![2.5, -1.0], 3.0).unwrap();
        let tr = rk4_solve(&p, 0.1, 3.0).unwrap();
        assert_eq!(tr.xs.len(), 31);
        assert!(tr.ys.iter().all(|y| y == &vec![2.5, -1.0]));
    }

    #[test]
    fn exponential_growth() {
        let p = OdeProblem::new("exp", vec![Expr::parse("y1").unwrap()], vec![1.0], 1.0).unwrap();
        let tr = rk4_solve(&p, 0.1, 1.0).unwrap();
        let y1 = tr.ys.last().unwrap()[0];
        assert_eq!(*tr.xs.last().unwrap(), 1.0);
        assert!((y1 - std::f64::consts::E).abs() < 1e-5);
        // y' = y makes each step multiply by the degree-4 Taylor factor
        let h: f64 = 0.1;
        let factor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((y1 - factor.powi(10)).abs() < 1e-13);
    }

    #[test]
    fn partial_last_step_and_interpolation() {
        let p = OdeProblem::new("exp", vec![Expr::parse("y1").unwrap()], vec![1.0], 2.0).unwrap();
        let tr = rk4_solve(&p, 0.3, 1.0).unwrap();
        assert_eq!(tr.xs.len(), 5);
        assert_eq!(*tr.xs.last().unwrap(), 1.0);
        let mid = tr.value_at(&p, 0.45).unwrap()[0];
        assert!((mid - 0.45f64.exp()).abs() < 1e-4);
        assert_eq!(tr.value_at(&p, 0.6).unwrap(), tr.ys[2]);
        assert!(tr.value_at(&p, 1.5).is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = registry::get("example3").unwrap();
        assert!(rk4_solve(&p, 0.0, 1.0).is_err());
        assert!(rk4_solve(&p, 0.1, 60.0).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let p = OdeProblem::new("blowup", vec![Expr::parse("y1^2").unwrap()], vec![1.0], 5.0).unwrap();
        match rk4_solve(&p, 0.01, 5.0) {
            Err(Error::Integration { step, x }) => {
                assert!(step > 50 && x < 2.0, "step {step} x {x}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn problem_validation() {
        assert!(OdeProblem::new("bad", vec![Expr::parse("y3").unwrap()], vec![1.0], 1.0).is_err());
        assert!(OdeProblem::new("bad", vec![Expr::Num(1.0)], vec![1.0], -1.0).is_err());
        let p = OdeProblem::new("ok", vec![Expr::parse("cos(x)").unwrap()], vec![1.0], 1.0).unwrap();
        assert!(p.clone().with_analytic(vec![Expr::parse("sin(x)").unwrap()]).is_err());
        assert!(p.with_analytic(vec![Expr::parse("y1").unwrap()]).is_err());
    }

    #[test]
    fn equidistant_sampling() {
        let xs = sample_collocation(0.0, 2.0, 5, SamplingMode::Equidistant, 0).unwrap();
        assert_eq!(xs, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let xs = sample_collocation(0.0, 10.0, 1000, SamplingMode::Equidistant, 0).unwrap();
        assert_eq!(xs.len(), 1000);
        assert!(xs.windows(2).all(|w| ((w[1] - w[0]) - 10.0 / 999.0).abs() < 1e-12));
        assert_eq!(xs[999], 10.0);
    }

    #[test]
    fn random_sampling_is_seeded() {
        let a = sample_collocation(1.0, 3.0, 50, SamplingMode::Random, 5).unwrap();
        let b = sample_collocation(1.0, 3.0, 50, SamplingMode::Random, 5).unwrap();
        let c = sample_collocation(1.0, 3.0, 50, SamplingMode::Random, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|x| (1.0..=3.0).contains(x)));
    }

    #[test]
    fn sampling_errors() {
        assert!(sample_collocation(1.0, 1.0, 5, SamplingMode::Equidistant, 0).is_err());
        assert!(sample_collocation(0.0, 1.0, 1, SamplingMode::Equidistant, 0).is_err());
    }
}
