//! Map which estimator is least biased across selection regimes.
//!
//! In the baseline scenario the comparison has a sharp boundary: IV beats
//! OLS exactly where psi(severity) * gamma^2 < 1/2. Because psi < 1, any
//! |gamma| below sqrt(1/2) = 0.707 keeps IV preferable no matter how
//! severe the truncation gets.

use std::collections::BTreeMap;

use ivsel::sweep::{run_sweep, Axis, AxisParam, LeastBiased, RuleFamily, SweepGrid};
use ivsel::Scenario;

fn main() -> ivsel::Result<()> {
    let gammas = 31;
    let severities = 61;
    let grid = SweepGrid::new(
        Scenario::Baseline,
        BTreeMap::new(),
        vec![
            Axis::new(AxisParam::Severity, 0.01, 0.99, severities)?,
            Axis::new(AxisParam::Gamma, 0.0, 0.99, gammas)?,
        ],
    )?;
    let result = run_sweep(&grid, RuleFamily::Truncation)?;

    println!("least-biased estimator by truncation severity (rows) and gamma (columns)");
    println!("  '.' = IV less biased, 'O' = OLS less biased");
    println!();
    print!("            gamma ");
    for g in 0..gammas {
        print!("{}", if g % 10 == 0 { '|' } else { ' ' });
    }
    println!();

    for (i, chunk) in result.rows.chunks(gammas).enumerate() {
        let severity = chunk[0].severity.unwrap();
        print!("  severity {severity:.3}  ");
        for row in chunk {
            let mark = match row.least_biased {
                LeastBiased::Iv => '.',
                LeastBiased::Ols => 'O',
                LeastBiased::Tie => '=',
                LeastBiased::Infeasible => 'x',
            };
            print!("{mark}");
        }
        if i == 0 {
            print!("   gamma runs 0.00 .. 0.99");
        }
        println!();
    }

    // Locate the boundary along the deepest cut and compare with theory.
    let last_band = &result.rows[result.rows.len() - gammas..];
    let first_ols = last_band
        .iter()
        .find(|r| r.least_biased == LeastBiased::Ols)
        .expect("OLS region exists at severe truncation");
    let psi = first_ols.psi;
    println!();
    println!(
        "at severity {:.3} the flip sits at gamma = {:.3}; theory says sqrt(1/(2 psi)) = {:.3}",
        first_ols.severity.unwrap(),
        first_ols.gamma,
        (1.0 / (2.0 * psi)).sqrt()
    );
    println!("no OLS cell exists left of gamma = 0.707, at any severity.");
    assert!(result
        .rows
        .iter()
        .filter(|r| r.gamma < 0.707)
        .all(|r| r.least_biased == LeastBiased::Iv));
    Ok(())
}
