//! Built-in benchmark systems.

use super::{Expr, OdeProblem};
use crate::error::{Error, Result};

pub const NAMES: [&str; 4] = ["example1", "example2_sir", "example3", "example4"];

fn e(s: &str) -> Expr {
    Expr::parse(s).expect("built-in expression")
}

fn es(items: &[&str]) -> Vec<Expr> {
    items.iter().map(|s| e(s)).collect()
}

pub fn get(name: &str) -> Result<OdeProblem> {
    match name {
        // damped oscillator with periodic stiffness
        "example1" => OdeProblem::new("example1", es(&["y2", "-y2 - (2 + sin(x)) * y1"]), vec![0.0, 1.0], 10.0),
        "example2_sir" => OdeProblem::new(
            "example2_sir",
            es(&["-0.003 * y1 * y2", "0.003 * y1 * y2 - 0.1 * y2", "0.1 * y2"]),
            vec![98.0, 2.0, 0.0],
            50.0,
        )?
        .with_invariant("population", e("y1 + y2 + y3"), 100.0),
        "example3" => OdeProblem::new("example3", es(&["cos(x)", "-2 * sin(2 * x)"]), vec![0.0, 1.0], 50.0)?
            .with_analytic(es(&["sin(x)", "cos(2 * x)"])),
        "example4" => OdeProblem::new(
            "example4",
            es(&["y2 * y3", "-y1 * y3", "-0.51 * y1 * y2"]),
            vec![0.0, 1.0, 1.0],
            20.0,
        )?
        .with_invariant("y1^2 + y2^2", e("y1^2 + y2^2"), 1.0)?
        .with_invariant("0.51 y1^2 + y3^2", e("0.51 * y1^2 + y3^2"), 1.0),
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            valid: NAMES.join(", "),
        }),
    }
}
