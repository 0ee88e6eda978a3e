//! The truncated-Gaussian machinery underneath the selection analysis.
//!
//! Keeping only draws whose score c'X clears a threshold shifts the mean
//! along Sigma*c and shrinks the covariance by a rank-one term scaled by
//! the variance-reduction factor psi in (0, 1). As the threshold falls,
//! psi tends to 0 (no selection); as it rises, psi tends to 1 (the
//! covariate-adjustment limit).

use ivsel::covariance::{implied_covariance, solve_shock_variances};
use ivsel::normal::{hazard, psi, severity_to_threshold};
use ivsel::{tallis_truncated_moments, PathModel, Scenario, TruncationSpec};
use nalgebra::DVector;

fn main() -> ivsel::Result<()> {
    println!("threshold s0, kept fraction, hazard(s0), psi(s0):");
    for q in [0.05, 0.291, 0.5, 0.75, 0.95] {
        let s0 = severity_to_threshold(q)?;
        println!(
            "  s0 = {s0:+.4}   keep {:>5.1}%   lambda = {:.4}   psi = {:.6}",
            100.0 * (1.0 - q),
            hazard(s0),
            psi(s0)
        );
    }

    let model = PathModel::preset(Scenario::Baseline, &Default::default())?;
    let sigma = implied_covariance(&model, &solve_shock_variances(&model)?);

    // Cut on the selection node itself (the usual case).
    let spec = TruncationSpec::from_severity(0.5)?
        .with_direction(coordinate(sigma.dim(), model.selection()))?;
    let moments = tallis_truncated_moments(&sigma, &spec)?;
    println!("\ntruncating the baseline model at the median of S:");
    println!("  score scale kappa = {:.6}, psi = {:.6}", moments.kappa, moments.psi);
    for (i, name) in sigma.order().iter().enumerate() {
        println!(
            "  {name}: mean {:+.6}  variance {:.6} (was 1.000000)",
            moments.mean[i],
            moments.variance.entry(i, i)
        );
    }

    // Any unit direction works, e.g. a score mixing S and Y.
    let mut mixed = DVector::zeros(sigma.dim());
    mixed[model.selection()] = 0.8;
    mixed[model.outcome()] = 0.6;
    let spec = TruncationSpec::from_threshold(0.25)?.with_direction(mixed)?;
    let moments = tallis_truncated_moments(&sigma, &spec)?;
    println!("\ntruncating on the mixed score 0.8*S + 0.6*Y at 0.25:");
    println!(
        "  kappa = {:.6} (the score is not unit variance), psi = {:.6}",
        moments.kappa, moments.psi
    );
    println!(
        "  treatment column shrinks to var(T) = {:.6}",
        moments.variance.entry(model.treatment(), model.treatment())
    );
    Ok(())
}

fn coordinate(dim: usize, index: usize) -> DVector<f64> {
    let mut c = DVector::zeros(dim);
    c[index] = 1.0;
    c
}
