//! Implied covariance of a standardized path model, plus the two classical
//! cross-checks: covariance by path tracing and covariance under
//! conditioning.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::PathModel;

/// Shock variances below this margin are treated as infeasible: the node's
/// parents already absorb (numerically) all of its unit variance.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

/// Safety cap on path enumeration.
pub const PATH_CAP: usize = 1_000_000;

/// Variance of each node's independent shock under standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockVariances {
    values: Vec<f64>,
}

impl ShockVariances {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// A covariance matrix over a named node order.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStructure {
    order: Vec<String>,
    sigma: DMatrix<f64>,
}

impl CovarianceStructure {
    /// Wrap an externally supplied covariance matrix (must be square,
    /// finite, and symmetric to 1e-9; positive semi-definiteness is the
    /// caller's responsibility).
    pub fn new(order: Vec<String>, sigma: DMatrix<f64>) -> Result<CovarianceStructure> {
        let n = order.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::BadDirection(format!(
                "covariance is {}x{} but {} names were given",
                sigma.nrows(),
                sigma.ncols(),
                n
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = sigma[(i, j)];
                if !v.is_finite() {
                    return Err(Error::OutOfRange { name: "covariance entry", value: v });
                }
                if (v - sigma[(j, i)]).abs() > 1e-9 {
                    return Err(Error::BadDirection(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(CovarianceStructure { order, sigma })
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }
}

/// Solve for the shock variances that standardize every node.
///
/// Nodes are processed in topological order; each shock variance is one
/// minus the variance of the node's parent linear combination under the
/// covariance already determined for the parents. Any shock variance below
/// [`FEASIBILITY_MARGIN`] makes the parameterization infeasible.
pub fn solve_shock_variances(model: &PathModel) -> Result<ShockVariances> {
    let n = model.n();
    let mut sigma = DMatrix::<f64>::zeros(n, n);
    let mut values = vec![0.0; n];
    let mut done = vec![false; n];

    for &v in model.topo() {
        let parents = model.parents(v);
        let mut parent_var = 0.0;
        for &(p, cp) in parents {
            for &(q, cq) in parents {
                parent_var += cp * cq * sigma[(p, q)];
            }
        }
        let shock = 1.0 - parent_var;
        if shock < FEASIBILITY_MARGIN {
            return Err(Error::Infeasible { node: model.name(v).to_string(), variance: shock });
        }
        values[v] = shock;
        // Fill covariance with everything already standardized.
        for u in 0..n {
            if done[u] {
                let cov: f64 = parents.iter().map(|&(p, c)| c * sigma[(p, u)]).sum();
                sigma[(v, u)] = cov;
                sigma[(u, v)] = cov;
            }
        }
        sigma[(v, v)] = 1.0;
        done[v] = true;
    }

    Ok(ShockVariances { values })
}

/// Reduced-form total-effects matrix: entry (i, j) is the total effect of
/// node j on node i, i.e. the inverse of (identity minus the coefficient
/// matrix), computed by forward substitution along the topological order.
pub fn total_effects(model: &PathModel) -> DMatrix<f64> {
    let n = model.n();
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    for &v in model.topo() {
        gamma[(v, v)] = 1.0;
        for &(p, c) in model.parents(v) {
            for j in 0..n {
                gamma[(v, j)] += c * gamma[(p, j)];
            }
        }
    }
    gamma
}

/// Marginal covariance implied by the model: `gamma * diag(shocks) *
/// gamma'`. The diagonal comes out as exactly 1 up to floating-point noise.
pub fn implied_covariance(model: &PathModel, shocks: &ShockVariances) -> CovarianceStructure {
    let gamma = total_effects(model);
    let scale = DVector::from_iterator(model.n(), shocks.values().iter().map(|v| v.sqrt()));
    // Sigma = L L' with L = gamma * diag(sqrt(shock)) keeps the product
    // exactly symmetric.
    let mut l = gamma;
    for j in 0..model.n() {
        for i in 0..model.n() {
            l[(i, j)] *= scale[j];
        }
    }
    let sigma = &l * l.transpose();
    debug_assert!((0..model.n()).all(|i| (sigma[(i, i)] - 1.0).abs() <= 1e-12));
    CovarianceStructure { order: model.names().to_vec(), sigma }
}

/// Marginal covariance of two nodes by path tracing: the sum over all
/// collider-free simple paths of the product of edge coefficients.
///
/// This is an independent cross-check of [`implied_covariance`]; the two
/// must agree to numerical precision on every standardized model.
pub fn wright_marginal_cov(model: &PathModel, a: usize, b: usize) -> Result<f64> {
    if a == b {
        return Ok(1.0); // standardized variance
    }
    let n = model.n();
    if n > 64 {
        return Err(Error::Unsupported(
            "path tracing supports at most 64 nodes".to_string(),
        ));
    }

    // Undirected adjacency; `into_neighbor` records whether the arrow points
    // at the neighbor when traversed from this side.
    let mut adj: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); n];
    for e in model.edges() {
        adj[e.from].push((e.to, e.coef, true));
        adj[e.to].push((e.from, e.coef, false));
    }

    struct Walk<'m> {
        adj: &'m [Vec<(usize, f64, bool)>],
        target: usize,
        total: f64,
        paths: usize,
    }

    impl Walk<'_> {
        /// Extend a partial path sitting at `node`, which was entered by an
        /// arrow pointing at it iff `entered_head`.
        fn extend(
            &mut self,
            node: usize,
            entered_head: bool,
            visited: u64,
            product: f64,
        ) -> Result<()> {
            for &(next, coef, into_next) in &self.adj[node] {
                // A step that leaves `node` against an arrow (arrow pointing
                // back at `node`) makes `node` a collider if we also entered
                // through an arrowhead: the path is closed, and so is every
                // extension of it, so prune.
                if entered_head && !into_next {
                    continue;
                }
                if visited & (1 << next) != 0 {
                    continue;
                }
                let product = product * coef;
                if next == self.target {
                    self.paths += 1;
                    if self.paths > PATH_CAP {
                        return Err(Error::PathExplosion { cap: PATH_CAP });
                    }
                    self.total += product;
                    continue;
                }
                self.extend(next, into_next, visited | (1 << next), product)?;
            }
            Ok(())
        }
    }

    let mut walk = Walk { adj: &adj, target: b, total: 0.0, paths: 0 };
    walk.extend(a, false, 1 << a, 1.0)?;
    Ok(walk.total)
}

/// Covariance of `a` and `b` after conditioning on the single variable `c`:
/// `cov(a,b) - cov(a,c) * cov(b,c) / var(c)`.
pub fn conditional_cov(sigma: &CovarianceStructure, a: usize, b: usize, c: usize) -> Result<f64> {
    let var_c = sigma.entry(c, c);
    if var_c < 1e-12 {
        return Err(Error::SingularConditioning(sigma.order()[c].clone()));
    }
    Ok(sigma.entry(a, b) - sigma.entry(a, c) * sigma.entry(b, c) / var_c)
}

/// Full covariance matrix after conditioning on a set of variables (Schur
/// complement). Rows and columns keep their original indices; entries
/// involving the conditioning set collapse to (numerically) zero.
pub fn conditional_matrix(
    sigma: &CovarianceStructure,
    given: &[usize],
) -> Result<CovarianceStructure> {
    if given.is_empty() {
        return Ok(sigma.clone());
    }
    let n = sigma.dim();
    let k = given.len();
    let mut scc = DMatrix::<f64>::zeros(k, k);
    for (ri, &i) in given.iter().enumerate() {
        for (rj, &j) in given.iter().enumerate() {
            scc[(ri, rj)] = sigma.entry(i, j);
        }
    }
    let chol = scc.cholesky().ok_or_else(|| {
        Error::SingularConditioning(
            given.iter().map(|&i| sigma.order()[i].clone()).collect::<Vec<_>>().join(", "),
        )
    })?;
    let mut cross = DMatrix::<f64>::zeros(k, n);
    for (ri, &i) in given.iter().enumerate() {
        for j in 0..n {
            cross[(ri, j)] = sigma.entry(i, j);
        }
    }
    let solved = chol.solve(&cross); // scc^-1 * cross
    let reduced = sigma.sigma() - cross.transpose() * solved;
    Ok(CovarianceStructure { order: sigma.order().to_vec(), sigma: reduced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PathModel, Scenario};
    use std::collections::BTreeMap;

    fn baseline() -> PathModel {
        PathModel::preset(Scenario::Baseline, &BTreeMap::new()).unwrap()
    }

    fn with_params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn baseline_shock_variances() {
        // var(eps_T) = 1 - pi^2 - delta1^2, var(eps_S) = 1 - gamma^2,
        // var(eps_Y) = 1 - beta^2 - delta2^2 - 2 beta delta1 delta2.
        let m = baseline();
        let sv = solve_shock_variances(&m).unwrap();
        let expect = [1.0, 1.0, 0.5, 0.64, 0.39];
        for (i, &want) in expect.iter().enumerate() {
            assert!(
                (sv.get(i) - want).abs() < 1e-14,
                "shock variance of {} = {}, want {want}",
                m.name(i),
                sv.get(i)
            );
        }
    }

    #[test]
    fn infeasible_parameterization_is_rejected() {
        let err = PathModel::preset(
            Scenario::Baseline,
            &with_params(&[("pi", 0.9), ("delta1", 0.9)]),
        )
        .and_then(|m| solve_shock_variances(&m))
        .unwrap_err();
        match err {
            Error::Infeasible { node, variance } => {
                assert_eq!(node, "T");
                assert!(variance < 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn implied_covariance_has_unit_diagonal_and_known_entries() {
        let m = baseline();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        for i in 0..m.n() {
            assert!((sigma.entry(i, i) - 1.0).abs() <= 1e-12);
        }
        let (z, u, t, s, y) = (0, 1, 2, 3, 4);
        assert!((sigma.entry(z, t) - 0.5).abs() < 1e-14); // pi
        assert!((sigma.entry(t, y) - 0.65).abs() < 1e-14); // beta + d1 d2
        assert!((sigma.entry(z, y) - 0.2).abs() < 1e-14); // pi beta
        assert!((sigma.entry(t, s) - 0.6).abs() < 1e-14); // gamma
        assert!((sigma.entry(u, s) - 0.3).abs() < 1e-14); // delta1 gamma
        assert!((sigma.entry(s, y) - 0.39).abs() < 1e-14); // gamma (beta + d1 d2)
        assert!((sigma.entry(z, u)).abs() < 1e-14);
    }

    #[test]
    fn path_tracing_agrees_with_matrix_engine() {
        for sc in Scenario::ALL {
            let m = PathModel::preset_with(sc, Default::default()).unwrap();
            let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
            for a in 0..m.n() {
                for b in 0..m.n() {
                    let traced = wright_marginal_cov(&m, a, b).unwrap();
                    assert!(
                        (traced - sigma.entry(a, b)).abs() <= 1e-10,
                        "{sc:?}: cov({}, {}) traced {traced} vs {}",
                        m.name(a),
                        m.name(b),
                        sigma.entry(a, b)
                    );
                }
            }
        }
    }

    #[test]
    fn path_tracing_known_values() {
        // Treatment-confounder graph: cov(T, S) = gamma + delta1*delta3.
        let m = PathModel::preset(
            Scenario::TreatmentConfounder,
            &with_params(&[("gamma", 0.4)]),
        )
        .unwrap();
        let cov = wright_marginal_cov(&m, m.treatment(), m.selection()).unwrap();
        assert!((cov - (0.4 + 0.5 * 0.3)).abs() < 1e-14);

        // Collider path contributes nothing: cov(Z, U) = 0 in the baseline.
        let m = baseline();
        assert_eq!(wright_marginal_cov(&m, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn severed_paths_zero_the_covariance() {
        // gamma = 0 disconnects S from Y (every S-Y path uses the T -> S
        // edge); pi = 0 disconnects Z from everything downstream.
        let m = PathModel::preset(Scenario::Baseline, &with_params(&[("gamma", 0.0)])).unwrap();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        assert_eq!(wright_marginal_cov(&m, 3, 4).unwrap(), 0.0);
        assert!(sigma.entry(3, 4).abs() < 1e-15);

        let m = PathModel::preset(Scenario::Baseline, &with_params(&[("pi", 0.0)])).unwrap();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        for other in 1..5 {
            assert_eq!(wright_marginal_cov(&m, 0, other).unwrap(), 0.0);
            assert!(sigma.entry(0, other).abs() < 1e-15);
        }
    }

    #[test]
    fn declaration_order_does_not_matter() {
        use crate::model::{EdgeSpec, NodeRole, NodeSpec};
        // Baseline graph declared in scrambled (non-topological) order.
        let nodes = [
            ("Y", NodeRole::Outcome, false),
            ("S", NodeRole::Selection, false),
            ("T", NodeRole::Treatment, false),
            ("U", NodeRole::Confounder, true),
            ("Z", NodeRole::Instrument, false),
        ]
        .iter()
        .map(|&(n, r, l)| NodeSpec { name: n.into(), role: r, latent: l })
        .collect::<Vec<_>>();
        let edges = [
            ("Z", "T", 0.5),
            ("U", "T", 0.5),
            ("U", "Y", 0.5),
            ("T", "Y", 0.4),
            ("T", "S", 0.6),
        ]
        .iter()
        .map(|&(f, t, c)| EdgeSpec { from: f.into(), to: t.into(), coef: c })
        .collect::<Vec<_>>();
        let scrambled = PathModel::from_parts(nodes, edges).unwrap();
        let sigma_s = implied_covariance(&scrambled, &solve_shock_variances(&scrambled).unwrap());

        let reference = baseline();
        let sigma_r =
            implied_covariance(&reference, &solve_shock_variances(&reference).unwrap());

        for a in 0..5 {
            for b in 0..5 {
                let ra = reference.names().iter().position(|n| n == &sigma_s.order()[a]).unwrap();
                let rb = reference.names().iter().position(|n| n == &sigma_s.order()[b]).unwrap();
                assert!(
                    (sigma_s.entry(a, b) - sigma_r.entry(ra, rb)).abs() <= 1e-14,
                    "entry ({a}, {b}) differs after permutation"
                );
            }
        }
    }

    #[test]
    fn implied_covariance_is_positive_semidefinite() {
        for sc in Scenario::ALL {
            let m = PathModel::preset_with(sc, Default::default()).unwrap();
            let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
            let eig = sigma.sigma().clone().symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > -1e-10), "{sc:?} eigenvalues {eig:?}");
        }
    }

    #[test]
    fn conditional_cov_known_values() {
        let m = baseline();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        let (z, t, s, y) = (0, 2, 3, 4);
        // cov(Z, Y | S) = pi*beta - (gamma pi)(gamma beta + gamma d1 d2).
        let got = conditional_cov(&sigma, z, y, s).unwrap();
        assert!((got - 0.083).abs() < 1e-14, "cov(Z,Y|S) = {got}");
        // cov(Z, T | S) = pi (1 - gamma^2).
        let got = conditional_cov(&sigma, z, t, s).unwrap();
        assert!((got - 0.32).abs() < 1e-14, "cov(Z,T|S) = {got}");
    }

    #[test]
    fn conditional_matrix_matches_scalar_rule() {
        let m = baseline();
        let sigma = implied_covariance(&m, &solve_shock_variances(&m).unwrap());
        let cond = conditional_matrix(&sigma, &[m.selection()]).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let scalar = conditional_cov(&sigma, a, b, m.selection()).unwrap();
                assert!((cond.entry(a, b) - scalar).abs() <= 1e-12);
            }
        }
        // Conditioned variable has no residual variance left.
        assert!(cond.entry(m.selection(), m.selection()).abs() < 1e-12);
    }

    #[test]
    fn conditioning_on_degenerate_variable_fails() {
        let mut sigma = DMatrix::<f64>::identity(3, 3);
        sigma[(2, 2)] = 0.0;
        let cs = CovarianceStructure::new(
            vec!["A".into(), "B".into(), "C".into()],
            sigma,
        )
        .unwrap();
        assert!(matches!(
            conditional_cov(&cs, 0, 1, 2),
            Err(Error::SingularConditioning(_))
        ));
        assert!(conditional_matrix(&cs, &[2]).is_err());
    }
}
