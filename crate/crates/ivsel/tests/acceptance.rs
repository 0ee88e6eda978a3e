//! Acceptance gate: ten checks covering both engines, the calibration
//! curve, the preference region, the bounds, the Monte Carlo oracle, the
//! truncated-moment formulas, and the closed-form discrepancy report.
//! Each check prints one `ACCEPTANCE <n> ...: PASS/FAIL (...)` line (run
//! with `--nocapture` to see them); criteria with runtime budgets are
//! serialized through a mutex so timings are not distorted by parallel
//! test scheduling.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use ivsel::covariance::CovarianceStructure;
use ivsel::estimands::closed_form;
use ivsel::mc::verify_grid;
use ivsel::normal::{psi, psi_inverse};
use ivsel::sweep::{fig_psi_curve, fig_region_map, run_sweep, Axis, AxisParam, LeastBiased,
    RuleFamily, SweepGrid};
use ivsel::truncation::truncated_moments_along;
use ivsel::{formula_audit, plim_matrix, PathModel, PresetParams, Scenario, SelectionRule};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    match GATE.lock() {
        Ok(guard) => guard,
        Err(poisoned) => poisoned.into_inner(),
    }
}

fn report(index: usize, name: &str, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {index:>2} {name}: {verdict} ({detail})");
    assert!(ok, "acceptance {index} {name} failed: {detail}");
}

fn draw_params(rng: &mut ChaCha12Rng) -> PresetParams {
    let mut params = PresetParams::default();
    for name in ["pi", "beta", "gamma", "tau", "delta1", "delta2", "delta3", "delta4"] {
        params.set(name, rng.gen_range(-0.95..0.95));
    }
    params
}

fn rule_for_psi(target: f64) -> SelectionRule {
    if target >= 1.0 {
        SelectionRule::Adjustment
    } else {
        SelectionRule::truncation_at_threshold(psi_inverse(target).unwrap()).unwrap()
    }
}

/// 1: the scenario closed forms agree with the covariance engine over
/// 1,000 random feasible parameterizations x 3 scenarios x 10 factors,
/// inside a 10-second budget.
#[test]
fn criterion_01_closed_forms_match_matrix_engine() {
    let _serial = gate();
    let start = Instant::now();
    let scenarios = [Scenario::Baseline, Scenario::Mediator, Scenario::ConfoundedMediator];
    let psis: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut max_gap: f64 = 0.0;
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 1000 {
        attempts += 1;
        assert!(attempts < 1_000_000, "sampler starved");
        let params = draw_params(&mut rng);
        let mut local: f64 = 0.0;
        let mut usable = true;
        'scenarios: for scenario in scenarios {
            let model = match PathModel::preset_with(scenario, params) {
                Ok(m) => m,
                Err(_) => {
                    usable = false;
                    break;
                }
            };
            for &target in &psis {
                let matrix = match plim_matrix(&model, &rule_for_psi(target)) {
                    Ok(r) => r,
                    Err(_) => {
                        usable = false;
                        break 'scenarios;
                    }
                };
                let closed = match closed_form(scenario, &params, matrix.psi_used) {
                    Ok(r) => r,
                    Err(_) => {
                        usable = false;
                        break 'scenarios;
                    }
                };
                local = local
                    .max((matrix.iv_plim - closed.iv_plim).abs())
                    .max((matrix.ols_plim - closed.ols_plim).abs());
            }
        }
        if usable {
            max_gap = max_gap.max(local);
            accepted += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "closed forms match matrix engine",
        max_gap < 1e-10 && elapsed < Duration::from_secs(10),
        format!("max |closed - matrix| = {max_gap:.2e} over 1000 draws, {elapsed:.2?}"),
    );
}

/// 2: point values at beta=0.4, gamma=0.6, delta1=delta2=0.5. The
/// truncation value is frozen from an independent high-precision
/// evaluation of the closed form.
#[test]
fn criterion_02_reference_point_values() {
    let _serial = gate();
    let model = PathModel::preset(Scenario::Baseline, &BTreeMap::new()).unwrap();
    let adjusted = plim_matrix(&model, &SelectionRule::Adjustment).unwrap().iv_plim;
    let truncated = plim_matrix(&model, &SelectionRule::truncation_at_severity(0.5).unwrap())
        .unwrap()
        .iv_plim;
    let adj_gap = (adjusted - 0.259375).abs();
    let trunc_gap = (truncated - 0.325_668_753_688_542_0).abs();
    report(
        2,
        "reference point values",
        adj_gap < 1e-12 && trunc_gap < 1e-12,
        format!(
            "adjusted IV plim {adjusted:.15} (gap {adj_gap:.1e}), \
             median-truncated IV plim {truncated:.15} (gap {trunc_gap:.1e})"
        ),
    );
}

/// 3: the severity calibration hits psi = 0.5 at 29.1% truncation and is
/// strictly increasing over the 600-point grid.
#[test]
fn criterion_03_severity_calibration() {
    let _serial = gate();
    let at_291 = psi(ivsel::normal::severity_to_threshold(0.291).unwrap());
    let curve = fig_psi_curve().unwrap();
    let monotone = curve.windows(2).all(|w| w[1].psi > w[0].psi);
    report(
        3,
        "severity calibration",
        (at_291 - 0.5).abs() < 0.005 && curve.len() == 600 && monotone,
        format!(
            "psi(29.1%) = {at_291:.6}, {} grid points, strictly increasing = {monotone}",
            curve.len()
        ),
    );
}

/// 4: on the 201 x 201 region map the preference flips exactly where
/// psi * gamma^2 crosses 1/2 (within one severity cell), and every cell
/// with |gamma| < 0.707 prefers IV. The gamma = 1 column is infeasible
/// (deterministic selection score) and is skipped.
#[test]
fn criterion_04_preference_boundary() {
    let _serial = gate();
    let map = fig_region_map().unwrap();
    let (n_gamma, n_sev) = (201, 201);
    assert_eq!(map.rows.len(), n_gamma * n_sev);
    let mut checked_columns = 0;
    let mut misplaced_flips = 0;
    let mut wrong_preference = 0;
    for g in 0..n_gamma {
        let column = &map.rows[g * n_sev..(g + 1) * n_sev];
        let gamma = column[0].gamma;
        if gamma >= 1.0 {
            assert!(column.iter().all(|r| r.status == "infeasible"));
            continue;
        }
        checked_columns += 1;
        if gamma.abs() < 0.707 {
            wrong_preference +=
                column.iter().filter(|r| r.least_biased != LeastBiased::Iv).count();
        }
        for pair in column.windows(2) {
            let (a, b) = (pair[0].margin.unwrap(), pair[1].margin.unwrap());
            if a * b < 0.0 {
                // The margin flipped between these severities; the
                // critical quantity must cross 1/2 in the same cell.
                let crit_a = pair[0].psi * gamma * gamma - 0.5;
                let crit_b = pair[1].psi * gamma * gamma - 0.5;
                if crit_a * crit_b > 0.0 {
                    misplaced_flips += 1;
                }
            }
        }
    }
    report(
        4,
        "preference boundary",
        misplaced_flips == 0 && wrong_preference == 0 && checked_columns == 200,
        format!(
            "{checked_columns} feasible gamma columns, {misplaced_flips} misplaced sign \
             flips, {wrong_preference} cells below gamma = 0.707 not preferring IV"
        ),
    );
}

/// 5: adjustment bias magnitude weakly dominates truncation bias
/// magnitude in every feasible cell of the same grid.
#[test]
fn criterion_05_adjustment_dominates_truncation_bias() {
    let _serial = gate();
    let grid = SweepGrid::new(
        Scenario::Baseline,
        BTreeMap::new(),
        vec![
            Axis::new(AxisParam::Gamma, 0.0, 1.0, 201).unwrap(),
            Axis::new(AxisParam::Severity, 0.001, 0.999, 201).unwrap(),
        ],
    )
    .unwrap();
    let result = run_sweep(&grid, RuleFamily::Both).unwrap();
    let mut feasible = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for pair in result.rows.chunks(2) {
        let (trunc, adj) = (&pair[0], &pair[1]);
        assert_eq!(trunc.rule, "truncation");
        assert_eq!(adj.rule, "adjustment");
        if trunc.status != "ok" || adj.status != "ok" {
            continue;
        }
        feasible += 1;
        let excess = trunc.iv_bias.unwrap().abs() - adj.iv_bias.unwrap().abs();
        worst = worst.max(excess);
        if excess > 1e-12 {
            violations += 1;
        }
    }
    report(
        5,
        "adjustment dominates truncation bias",
        violations == 0 && feasible > 0,
        format!("{feasible} feasible cells, {violations} violations, worst excess {worst:.1e}"),
    );
}

/// 6: as the cut threshold rises the truncated limit approaches the
/// adjusted limit monotonically, landing within 2% of the adjustment bias
/// magnitude by threshold 8 (gamma pinned to 0.5 so the asymptotic gap
/// clears the bound).
#[test]
fn criterion_06_deep_cut_approaches_adjustment() {
    let _serial = gate();
    let overrides: BTreeMap<String, f64> = [("gamma".to_string(), 0.5)].into_iter().collect();
    let model = PathModel::preset(Scenario::Baseline, &overrides).unwrap();
    let adjusted = plim_matrix(&model, &SelectionRule::Adjustment).unwrap();
    let adj_bias = adjusted.iv_bias().abs();
    let gaps: Vec<f64> = (0..=8)
        .map(|s0| {
            let rule = SelectionRule::truncation_at_threshold(s0 as f64).unwrap();
            (plim_matrix(&model, &rule).unwrap().iv_plim - adjusted.iv_plim).abs()
        })
        .collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let final_ratio = gaps[8] / adj_bias;
    report(
        6,
        "deep cut approaches adjustment",
        decreasing && final_ratio < 0.02,
        format!(
            "gap falls {:.2e} -> {:.2e} over thresholds 0..8, final gap = {:.3}% of the \
             adjustment bias",
            gaps[0],
            gaps[8],
            100.0 * final_ratio
        ),
    );
}

/// 7: across 10,000 random feasible baseline parameterizations, the true
/// effect lies between the truncated-IV and OLS limits.
#[test]
fn criterion_07_plims_bracket_true_effect() {
    let _serial = gate();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    while accepted < 10_000 {
        attempts += 1;
        assert!(attempts < 10_000_000, "sampler starved");
        let params = draw_params(&mut rng);
        let severity = rng.gen_range(0.01..0.99);
        let model = match PathModel::preset_with(Scenario::Baseline, params) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let rule = SelectionRule::truncation_at_severity(severity).unwrap();
        let reportv = match plim_matrix(&model, &rule) {
            Ok(r) => r,
            Err(_) => continue,
        };
        accepted += 1;
        let lo = reportv.iv_plim.min(reportv.ols_plim);
        let hi = reportv.iv_plim.max(reportv.ols_plim);
        let outside = (lo - params.beta).max(params.beta - hi);
        worst = worst.max(outside);
        if outside > 1e-12 {
            violations += 1;
        }
    }
    report(
        7,
        "limits bracket the true effect",
        violations == 0,
        format!("10000 feasible draws, {violations} violations, worst excursion {worst:.1e}"),
    );
}

/// 8: the Monte Carlo oracle at n = 10^6 agrees with every analytic limit
/// within 4 bootstrap standard errors, inside a 2-minute budget.
#[test]
fn criterion_08_monte_carlo_agreement() {
    let _serial = gate();
    let start = Instant::now();
    let summary = verify_grid(1_000_000, 42).unwrap();
    let elapsed = start.elapsed();
    let worst = summary
        .cases
        .iter()
        .map(|c| c.se_gap)
        .fold(0.0_f64, f64::max);
    report(
        8,
        "monte carlo agreement",
        summary.pass && elapsed < Duration::from_secs(120),
        format!(
            "{} cases, worst gap {worst:.2} SE, {elapsed:.1?}",
            summary.cases.len()
        ),
    );
}

/// 9: truncated covariances from the analytic moment formulas match
/// rejection sampling on five random 5-dimensional covariance structures
/// with 10^7 draws each.
#[test]
fn criterion_09_truncated_moments_vs_rejection_sampling() {
    let _serial = gate();
    const DIM: usize = 5;
    const BLOCKS: usize = 100;
    const DRAWS_PER_BLOCK: usize = 100_000;
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mut worst_z: f64 = 0.0;
    for structure in 0..5u64 {
        // A random well-conditioned covariance, a random unit direction,
        // and a threshold keeping a nontrivial fraction.
        let a = DMatrix::from_fn(DIM, DIM, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = &a * a.transpose() / DIM as f64 + DMatrix::identity(DIM, DIM) * 0.2;
        let names = (0..DIM).map(|i| format!("X{i}")).collect();
        let cov = CovarianceStructure::new(names, sigma.clone()).unwrap();
        let mut c = DVector::from_fn(DIM, |_, _| rng.gen_range(-1.0_f64..1.0));
        c /= c.norm();
        let kappa = (c.dot(&(&sigma * &c))).sqrt();
        let threshold = rng.gen_range(-0.5..0.5) * kappa;
        let analytic = truncated_moments_along(&cov, &c, threshold).unwrap();

        let chol = sigma.clone().cholesky().unwrap();
        let l = chol.l();
        // Each block draws from its own stream; the estimate is the mean
        // of per-block sample covariances, its SE their spread.
        let block_covs: Vec<[f64; 15]> = (0..BLOCKS)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha12Rng::seed_from_u64(1000 + structure);
                rng.set_stream(b as u64);
                let mut kept: Vec<[f64; DIM]> = Vec::new();
                let mut z = DVector::zeros(DIM);
                for _ in 0..DRAWS_PER_BLOCK {
                    for k in 0..DIM {
                        z[k] = rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                    let x = &l * &z;
                    if c.dot(&x) >= threshold {
                        let mut row = [0.0; DIM];
                        for k in 0..DIM {
                            row[k] = x[k];
                        }
                        kept.push(row);
                    }
                }
                let m = kept.len() as f64;
                let mut mean = [0.0; DIM];
                for row in &kept {
                    for k in 0..DIM {
                        mean[k] += row[k];
                    }
                }
                for v in &mut mean {
                    *v /= m;
                }
                let mut covs = [0.0; 15];
                for row in &kept {
                    let mut idx = 0;
                    for i in 0..DIM {
                        for j in i..DIM {
                            covs[idx] += (row[i] - mean[i]) * (row[j] - mean[j]);
                            idx += 1;
                        }
                    }
                }
                for v in &mut covs {
                    *v /= m;
                }
                covs
            })
            .collect();

        let mut idx = 0;
        for i in 0..DIM {
            for j in i..DIM {
                let est: f64 =
                    block_covs.iter().map(|c| c[idx]).sum::<f64>() / BLOCKS as f64;
                let var: f64 = block_covs
                    .iter()
                    .map(|c| (c[idx] - est).powi(2))
                    .sum::<f64>()
                    / (BLOCKS as f64 - 1.0);
                let se = (var / BLOCKS as f64).sqrt();
                let z = (est - analytic.variance.entry(i, j)).abs() / se;
                worst_z = worst_z.max(z);
                idx += 1;
            }
        }
    }
    report(
        9,
        "truncated moments vs rejection sampling",
        worst_z <= 4.0,
        format!("5 structures x 15 covariance entries, worst gap {worst_z:.2} SE"),
    );
}

/// 10: the machine-readable closed-form audit is produced; the IV closed
/// form matches the engine to 1e-10 while the quoted OLS expression is
/// allowed to (and does) disagree.
#[test]
fn criterion_10_formula_discrepancy_report() {
    let _serial = gate();
    let audit = formula_audit(1000, 42).unwrap();
    let json = serde_json::to_string(&audit).unwrap();
    report(
        10,
        "formula discrepancy report",
        audit.n_samples == 1000
            && audit.max_abs_iv_gap < 1e-10
            && json.contains("worst_ols_case"),
        format!(
            "IV gap {:.1e}, quoted-OLS gap {:.2e} (expected nonzero), {} bytes of JSON",
            audit.max_abs_iv_gap,
            audit.max_abs_ols_gap,
            json.len()
        ),
    );
}
