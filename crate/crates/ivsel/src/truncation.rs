//! First and second moments of a multivariate normal vector truncated on a
//! linear score.
//!
//! For `V ~ N(0, sigma)` kept on the event `c'V >= p`, with
//! `kappa = sqrt(c' sigma c)` the standard deviation of the score:
//!
//! * mean:     `sigma c * hazard(p / kappa) / kappa`
//! * variance: `sigma - (sigma c)(sigma c)' * psi(p / kappa) / kappa^2`
//!
//! One-sided truncation therefore shrinks the covariance by a rank-one
//! update scaled by `psi`, which is the entire reason the downstream
//! estimand algebra stays closed-form.

use nalgebra::DVector;

use crate::covariance::CovarianceStructure;
use crate::error::{Error, Result};
use crate::normal::{hazard, normal_cdf, psi, severity_to_threshold};

/// A one-sided cut on a linear score of the model variables.
///
/// A `TruncationSpec` stores both the threshold and the severity it
/// corresponds to for a unit-variance score
/// (`severity = Pr(score < threshold)`); either one determines the other.
/// The direction defaults to "the selection node", i.e. a coordinate
/// vector resolved when the cut is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSpec {
    direction: Option<DVector<f64>>,
    threshold: f64,
    severity: f64,
}

impl TruncationSpec {
    /// Cut at an explicit threshold.
    pub fn from_threshold(threshold: f64) -> Result<TruncationSpec> {
        if !threshold.is_finite() {
            return Err(Error::OutOfRange { name: "threshold", value: threshold });
        }
        Ok(TruncationSpec { direction: None, threshold, severity: normal_cdf(threshold) })
    }

    /// Cut dropping the fraction `severity` of a unit-variance score.
    pub fn from_severity(severity: f64) -> Result<TruncationSpec> {
        let threshold = severity_to_threshold(severity)?;
        Ok(TruncationSpec { direction: None, threshold, severity })
    }

    /// Replace the implicit selection-node direction with an explicit unit
    /// vector over the node order.
    pub fn with_direction(mut self, direction: DVector<f64>) -> Result<TruncationSpec> {
        let norm = direction.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::BadDirection(format!("direction norm {norm} is not 1")));
        }
        self.direction = Some(direction);
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Share of a unit-variance score falling below the threshold.
    pub fn severity(&self) -> f64 {
        self.severity
    }

    pub fn direction(&self) -> Option<&DVector<f64>> {
        self.direction.as_ref()
    }

    /// Resolve the direction against a covariance of dimension `dim`, with
    /// `fallback` the index of the selection node.
    pub(crate) fn resolve_direction(&self, dim: usize, fallback: usize) -> Result<DVector<f64>> {
        match &self.direction {
            Some(c) => {
                if c.len() != dim {
                    return Err(Error::BadDirection(format!(
                        "direction has length {} but the model has {} nodes",
                        c.len(),
                        dim
                    )));
                }
                Ok(c.clone())
            }
            None => {
                let mut c = DVector::zeros(dim);
                c[fallback] = 1.0;
                Ok(c)
            }
        }
    }
}

/// Moments of the retained distribution, plus the scalars that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMoments {
    /// Mean of the retained vector.
    pub mean: DVector<f64>,
    /// Covariance of the retained vector.
    pub variance: CovarianceStructure,
    /// Standard deviation of the score `c'V`.
    pub kappa: f64,
    /// Variance-reduction factor `psi(p / kappa)`, strictly inside (0, 1).
    pub psi: f64,
}

/// Mean and covariance of `V ~ N(0, sigma)` conditional on `c'V >= p`.
///
/// The truncation description must carry an explicit direction (or be
/// applied through the estimand layer, which fills in the selection
/// node). Errors if the score variance `c' sigma c` is not positive.
pub fn tallis_truncated_moments(
    sigma: &CovarianceStructure,
    spec: &TruncationSpec,
) -> Result<TruncatedMoments> {
    let c = spec
        .direction()
        .ok_or_else(|| Error::BadDirection("no direction resolved for this cut".to_string()))?;
    truncated_moments_along(sigma, c, spec.threshold())
}

/// Same as [`tallis_truncated_moments`] with the direction passed directly.
pub fn truncated_moments_along(
    sigma: &CovarianceStructure,
    c: &DVector<f64>,
    threshold: f64,
) -> Result<TruncatedMoments> {
    if c.len() != sigma.dim() {
        return Err(Error::BadDirection(format!(
            "direction has length {} but the covariance has dimension {}",
            c.len(),
            sigma.dim()
        )));
    }
    let norm = c.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::BadDirection(format!("direction norm {norm} is not 1")));
    }
    let sc = sigma.sigma() * c;
    let score_var = c.dot(&sc);
    if score_var <= 1e-12 {
        return Err(Error::BadDirection(format!(
            "score variance {score_var} along the direction is not positive"
        )));
    }
    let kappa = score_var.sqrt();
    let alpha = threshold / kappa;
    let lambda = hazard(alpha);
    let shrink = psi(alpha);

    let mean = &sc * (lambda / kappa);
    let variance = sigma.sigma() - (&sc * sc.transpose()) * (shrink / score_var);
    let variance = CovarianceStructure::new(sigma.order().to_vec(), variance)
        .expect("rank-one downdate keeps symmetry");

    Ok(TruncatedMoments { mean, variance, kappa, psi: shrink })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{implied_covariance, solve_shock_variances};
    use crate::model::{PathModel, Scenario};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn baseline_sigma() -> (PathModel, CovarianceStructure) {
        let m = PathModel::preset_with(Scenario::Baseline, Default::default()).unwrap();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        (m, sigma)
    }

    #[test]
    fn spec_stores_threshold_and_severity_consistently() {
        let spec = TruncationSpec::from_severity(0.5).unwrap();
        assert_eq!(spec.threshold(), 0.0);
        assert_eq!(spec.severity(), 0.5);

        let spec = TruncationSpec::from_threshold(-0.5504656950201126).unwrap();
        assert!((spec.severity() - 0.291).abs() < 1e-9);

        let round = TruncationSpec::from_severity(0.291).unwrap();
        assert!((round.threshold() - (-0.5504656950201126)).abs() < 1e-9);

        assert!(TruncationSpec::from_severity(0.0).is_err());
        assert!(TruncationSpec::from_severity(1.0).is_err());
        assert!(TruncationSpec::from_threshold(f64::INFINITY).is_err());
    }

    #[test]
    fn selection_node_cut_has_unit_kappa() {
        let (m, sigma) = baseline_sigma();
        let spec = TruncationSpec::from_severity(0.5).unwrap();
        let c = spec.resolve_direction(sigma.dim(), m.selection()).unwrap();
        let moments = truncated_moments_along(&sigma, &c, spec.threshold()).unwrap();
        assert!((moments.kappa - 1.0).abs() < 1e-12);
        assert!((moments.psi - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        // Retained mean of the score itself is hazard(0).
        assert!((moments.mean[m.selection()] - 0.7978845608028654).abs() < 1e-12);
        // Score variance shrinks to 1 - psi.
        let s = m.selection();
        assert!(
            (moments.variance.entry(s, s) - (1.0 - moments.psi)).abs() < 1e-12
        );
    }

    #[test]
    fn truncation_only_shrinks_along_the_score() {
        // sigma - variance is psi * (sigma c)(sigma c)' / (c' sigma c),
        // a positive semi-definite rank-one matrix; and the retained
        // covariance itself stays positive semi-definite.
        let (m, sigma) = baseline_sigma();
        let spec = TruncationSpec::from_severity(0.7).unwrap();
        let c = spec.resolve_direction(sigma.dim(), m.selection()).unwrap();
        let moments = truncated_moments_along(&sigma, &c, spec.threshold()).unwrap();

        let removed = sigma.sigma() - moments.variance.sigma();
        let eig = removed.symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > -1e-12), "removed part not PSD: {eig:?}");
        let eig = moments.variance.sigma().clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > -1e-12), "retained covariance not PSD: {eig:?}");
        assert!(moments.psi > 0.0 && moments.psi < 1.0);
    }

    #[test]
    fn moments_match_rejection_sampling() {
        // Small-scale version of the acceptance check: a non-trivial PSD
        // covariance, a non-coordinate direction, kappa != 1.
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);

        let dim = 4;
        let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let sigma_raw = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
        let sigma = CovarianceStructure::new(
            (0..dim).map(|i| format!("V{i}")).collect(),
            sigma_raw.clone(),
        )
        .unwrap();
        let mut c = DVector::from_fn(dim, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        c /= c.norm();
        let threshold = 0.4;
        let moments = truncated_moments_along(&sigma, &c, threshold).unwrap();

        let chol = sigma_raw.cholesky().unwrap();
        let l = chol.l();
        let n = 400_000usize;
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for _ in 0..n {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = &l * z;
            if c.dot(&v) >= threshold {
                kept.push(v);
            }
        }
        let m = kept.len() as f64;
        let mut mean = DVector::zeros(dim);
        for v in &kept {
            mean += v;
        }
        mean /= m;
        let mut cov = DMatrix::zeros(dim, dim);
        for v in &kept {
            let d = v - &mean;
            cov += &d * d.transpose();
        }
        cov /= m - 1.0;

        for i in 0..dim {
            let se = (moments.variance.entry(i, i) / m).sqrt();
            assert!(
                (mean[i] - moments.mean[i]).abs() < 5.0 * se,
                "mean[{i}] {} vs {}",
                mean[i],
                moments.mean[i]
            );
            for j in 0..dim {
                // Crude normal-theory scale for the SE of a covariance entry.
                let scale = ((moments.variance.entry(i, i) * moments.variance.entry(j, j)
                    + moments.variance.entry(i, j).powi(2))
                    / m)
                    .sqrt();
                assert!(
                    (cov[(i, j)] - moments.variance.entry(i, j)).abs() < 6.0 * scale,
                    "cov[{i},{j}] {} vs {}",
                    cov[(i, j)],
                    moments.variance.entry(i, j)
                );
            }
        }
    }

    #[test]
    fn direction_validation() {
        let (_, sigma) = baseline_sigma();
        // Wrong length.
        let c = DVector::from_vec(vec![1.0, 0.0]);
        assert!(truncated_moments_along(&sigma, &c, 0.0).is_err());
        // Not unit norm.
        let c = DVector::from_vec(vec![0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!(truncated_moments_along(&sigma, &c, 0.0).is_err());
        // Spec without a direction cannot be applied directly.
        let spec = TruncationSpec::from_threshold(0.0).unwrap();
        assert!(tallis_truncated_moments(&sigma, &spec).is_err());
        // With an explicit direction it can.
        let mut c = DVector::zeros(5);
        c[3] = 1.0;
        let spec = spec.with_direction(c).unwrap();
        assert!(tallis_truncated_moments(&sigma, &spec).is_ok());
    }

    #[test]
    fn zero_variance_direction_is_rejected() {
        let sigma = CovarianceStructure::new(
            vec!["A".into(), "B".into()],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let c = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            truncated_moments_along(&sigma, &c, 0.0),
            Err(Error::BadDirection(_))
        ));
    }
}
