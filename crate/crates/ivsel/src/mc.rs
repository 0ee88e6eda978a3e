//! Finite-sample Monte Carlo oracle: simulate the model, apply the
//! selection rule to the sample, and estimate by the same covariance
//! ratios the analytic engine takes limits of.
//!
//! Determinism contract: every unit of random work (a node's shock column,
//! a bootstrap resample) draws from its own counter-derived ChaCha12
//! stream, so results are bit-identical for a given seed regardless of
//! thread scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::solve_shock_variances;
use crate::error::{Error, Result};
use crate::estimands::{plim_matrix, SelectionRule};
use crate::model::{PathModel, Scenario};

/// Resamples used for every bootstrap standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Fewer retained rows than this cannot support estimation.
const MIN_ROWS: usize = 10;
/// A sample first stage below this magnitude is degenerate.
const SAMPLE_FIRST_STAGE_EPS: f64 = 1e-6;
/// Bootstrap streams live far above the per-node streams.
const BOOTSTRAP_STREAM_BASE: u64 = 1 << 32;

/// Which estimator a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "IV")]
    Iv,
    #[serde(rename = "OLS")]
    Ols,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Iv => "IV",
            Method::Ols => "OLS",
        })
    }
}

/// A simulated sample from a path model.
///
/// Columns follow the model's node declaration order; `retained` is set
/// once a selection rule has been applied.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    latent: Vec<bool>,
    columns: Vec<Vec<f64>>,
    n: usize,
    retained: Option<Vec<bool>>,
    seed: u64,
    instrument: usize,
    treatment: usize,
    outcome: usize,
    selection: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.columns[i])
    }

    /// Selection indicators, present only after a rule has been applied.
    pub fn retained(&self) -> Option<&[bool]> {
        self.retained.as_deref()
    }

    /// Rows available for estimation (all of them before selection).
    pub fn retained_count(&self) -> usize {
        match &self.retained {
            Some(r) => r.iter().filter(|&&b| b).count(),
            None => self.n,
        }
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_count() as f64 / self.n as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn retained_indices(&self) -> Result<Vec<u32>> {
        if self.n > u32::MAX as usize {
            return Err(Error::Unsupported("samples beyond 2^32 rows".to_string()));
        }
        Ok(match &self.retained {
            Some(r) => (0..self.n as u32).filter(|&i| r[i as usize]).collect(),
            None => (0..self.n as u32).collect(),
        })
    }
}

/// Finite-sample estimate with a bootstrap standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_retained: usize,
    pub rule: SelectionRule,
    pub method: Method,
}

/// Draw `n` rows from the model.
///
/// Each node's idiosyncratic shock column comes from its own RNG stream
/// (stream index = node index), scaled to the standardizing shock
/// variance; values propagate along edges in topological order.
pub fn simulate(model: &PathModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::OutOfRange { name: "n", value: 0.0 });
    }
    let shocks = solve_shock_variances(model)?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); model.n()];
    for &node in model.topo() {
        let scale = shocks.get(node).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(node as u64);
        let mut col: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        for &(parent, coef) in model.parents(node) {
            let parent_col = &columns[parent];
            for (v, &p) in col.iter_mut().zip(parent_col) {
                *v += coef * p;
            }
        }
        columns[node] = col;
    }
    Ok(Dataset {
        names: model.names().to_vec(),
        latent: (0..model.n()).map(|i| model.is_latent(i)).collect(),
        columns,
        n,
        retained: None,
        seed,
        instrument: model.instrument(),
        treatment: model.treatment(),
        outcome: model.outcome(),
        selection: model.selection(),
    })
}

/// Mark which rows survive the rule.
///
/// Truncation keeps rows whose selection score clears the cut; adjustment
/// keeps everything (the conditioning happens at estimation time); no
/// selection keeps everything.
pub fn apply_selection(data: &Dataset, rule: &SelectionRule) -> Result<Dataset> {
    let mut out = data.clone();
    out.retained = Some(match rule {
        SelectionRule::None | SelectionRule::Adjustment => vec![true; data.n],
        SelectionRule::Truncation(spec) => {
            let dir = spec.resolve_direction(data.names.len(), data.selection)?;
            let s0 = spec.threshold();
            let active: Vec<(usize, f64)> = dir
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| (j, *c))
                .collect();
            (0..data.n)
                .map(|i| {
                    let score: f64 =
                        active.iter().map(|&(j, c)| c * data.columns[j][i]).sum();
                    score >= s0
                })
                .collect()
        }
    });
    Ok(out)
}

/// First and second moments of the (Z, T, Y, S) quadruple over a row set.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: [f64; 4],
    cross: [f64; 10],
}

/// Upper-triangle index for the pair (a, b).
fn pair(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    const IDX: [[usize; 4]; 4] = [
        [0, 1, 2, 3],
        [0, 4, 5, 6],
        [0, 0, 7, 8],
        [0, 0, 0, 9],
    ];
    IDX[a][b]
}

impl Moments {
    fn add(&mut self, v: [f64; 4]) {
        self.n += 1.0;
        for a in 0..4 {
            self.sum[a] += v[a];
            for b in a..4 {
                self.cross[pair(a, b)] += v[a] * v[b];
            }
        }
    }

    fn cov(&self, a: usize, b: usize) -> f64 {
        self.cross[pair(a, b)] / self.n - (self.sum[a] / self.n) * (self.sum[b] / self.n)
    }
}

/// IV and OLS ratios from moments; under adjustment the selection score is
/// partialled out of every covariance first (equivalent to regressing each
/// variable on the score with an intercept and using residuals).
fn ratios(m: &Moments, adjust: bool) -> Result<(f64, f64)> {
    let cov = |a: usize, b: usize| -> f64 {
        let raw = m.cov(a, b);
        if adjust {
            raw - m.cov(a, 3) * m.cov(b, 3) / m.cov(3, 3)
        } else {
            raw
        }
    };
    if adjust && m.cov(3, 3) < 1e-12 {
        return Err(Error::SingularConditioning(
            "selection score has no sample variance".to_string(),
        ));
    }
    let first_stage = cov(0, 1);
    if first_stage.abs() < SAMPLE_FIRST_STAGE_EPS {
        return Err(Error::Degenerate(
            "sample first stage is numerically zero".to_string(),
        ));
    }
    let treatment_var = cov(1, 1);
    if treatment_var < 1e-12 {
        return Err(Error::Degenerate("treatment has no sample variance".to_string()));
    }
    Ok((cov(0, 2) / first_stage, cov(1, 2) / treatment_var))
}

fn moments_over(cols: &[&[f64]; 4], rows: impl Iterator<Item = usize>) -> Moments {
    let mut m = Moments::default();
    for r in rows {
        m.add([cols[0][r], cols[1][r], cols[2][r], cols[3][r]]);
    }
    m
}

/// How far index generation runs ahead of row consumption in the
/// bootstrap loop, so that this many random cache lines are in flight at
/// once instead of the handful the out-of-order window covers.
const PREFETCH_AHEAD: usize = 32;

/// Hint the CPU to start pulling a packed row toward the cache.
#[inline(always)]
fn prefetch_row(rows: &[[f64; 4]], i: usize) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: `i` is in bounds and a prefetch has no observable effect.
    unsafe {
        core::arch::x86_64::_mm_prefetch::<{ core::arch::x86_64::_MM_HINT_T0 }>(
            rows.as_ptr().add(i) as *const i8,
        );
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        let _ = (rows, i);
    }
}

/// Accumulate moments over `m` rows drawn with replacement, generating
/// draws `PREFETCH_AHEAD` steps before they are consumed. The draw
/// sequence and accumulation order are identical to the naive loop.
fn bootstrap_moments(packed: &[[f64; 4]], m: usize, rng: &mut ChaCha12Rng) -> Moments {
    let mut mom = Moments::default();
    let lag = m.min(PREFETCH_AHEAD);
    let mut ring = [0usize; PREFETCH_AHEAD];
    for slot in 0..lag {
        let j = rng.gen_range(0..m);
        prefetch_row(packed, j);
        ring[slot] = j;
    }
    for i in 0..m {
        let j = ring[i % lag];
        if i + lag < m {
            let next = rng.gen_range(0..m);
            prefetch_row(packed, next);
            ring[i % lag] = next;
        }
        mom.add(packed[j]);
    }
    mom
}

/// Estimate both methods on the retained rows, sharing one bootstrap pass.
///
/// Bootstrap resample `b` draws row indices from stream `2^32 + b` of the
/// dataset seed; standard errors are the sample standard deviation of the
/// resample estimates.
pub fn estimate_pair(data: &Dataset, rule: &SelectionRule) -> Result<(McReport, McReport)> {
    let idx = data.retained_indices()?;
    let m = idx.len();
    if m < MIN_ROWS {
        return Err(Error::TooFewRows { retained: m });
    }
    let adjust = matches!(rule, SelectionRule::Adjustment);
    let cols: [&[f64]; 4] = [
        &data.columns[data.instrument],
        &data.columns[data.treatment],
        &data.columns[data.outcome],
        &data.columns[data.selection],
    ];
    // Pack the retained rows contiguously so each bootstrap visit touches
    // one cache line instead of five scattered arrays; at 10^6 rows this
    // is what keeps the resampling loop memory-bound rather than
    // latency-bound.
    let packed: Vec<[f64; 4]> = idx
        .iter()
        .map(|&i| {
            let r = i as usize;
            [cols[0][r], cols[1][r], cols[2][r], cols[3][r]]
        })
        .collect();
    let full = {
        let mut mom = Moments::default();
        for row in &packed {
            mom.add(*row);
        }
        mom
    };
    let (iv, ols) = ratios(&full, adjust)?;

    let replicates: Vec<(f64, f64)> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| -> Result<(f64, f64)> {
            let mut rng = ChaCha12Rng::seed_from_u64(data.seed);
            rng.set_stream(BOOTSTRAP_STREAM_BASE + b as u64);
            ratios(&bootstrap_moments(&packed, m, &mut rng), adjust)
        })
        .collect::<Result<Vec<_>>>()?;

    let spread = |pick: fn(&(f64, f64)) -> f64| -> f64 {
        let b = replicates.len() as f64;
        let mean = replicates.iter().map(&pick).sum::<f64>() / b;
        let ss: f64 = replicates.iter().map(|r| (pick(r) - mean).powi(2)).sum();
        (ss / (b - 1.0)).sqrt()
    };

    Ok((
        McReport {
            estimate: iv,
            std_error: spread(|r| r.0),
            n_retained: m,
            rule: rule.clone(),
            method: Method::Iv,
        },
        McReport {
            estimate: ols,
            std_error: spread(|r| r.1),
            n_retained: m,
            rule: rule.clone(),
            method: Method::Ols,
        },
    ))
}

/// Estimate one method on the retained rows.
pub fn estimate(data: &Dataset, method: Method, rule: &SelectionRule) -> Result<McReport> {
    let (iv, ols) = estimate_pair(data, rule)?;
    Ok(match method {
        Method::Iv => iv,
        Method::Ols => ols,
    })
}

/// Secondary adjustment check: bin the selection score into quantile
/// strata, estimate IV inside each stratum holding at least `min_rows`
/// rows, and average. In the limit this agrees with partialling the score
/// out, because conditional covariances do not depend on the score level.
pub fn stratified_adjusted_iv(data: &Dataset, n_strata: usize, min_rows: usize) -> Result<f64> {
    if n_strata == 0 {
        return Err(Error::BadGrid("need at least one stratum".to_string()));
    }
    let mut idx = data.retained_indices()?;
    let s_col = &data.columns[data.selection];
    idx.sort_unstable_by(|&a, &b| s_col[a as usize].total_cmp(&s_col[b as usize]));

    let cols: [&[f64]; 4] = [
        &data.columns[data.instrument],
        &data.columns[data.treatment],
        &data.columns[data.outcome],
        &data.columns[data.selection],
    ];
    let m = idx.len();
    let base = m / n_strata;
    let remainder = m % n_strata;
    let mut start = 0usize;
    let mut estimates = Vec::new();
    for k in 0..n_strata {
        let len = base + usize::from(k < remainder);
        let stratum = &idx[start..start + len];
        start += len;
        if len < min_rows.max(3) {
            continue;
        }
        let mom = moments_over(&cols, stratum.iter().map(|&i| i as usize));
        let (iv, _) = ratios(&mom, false)?;
        estimates.push(iv);
    }
    if estimates.is_empty() {
        return Err(Error::TooFewRows { retained: 0 });
    }
    Ok(estimates.iter().sum::<f64>() / estimates.len() as f64)
}

/// One sample size in a convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub plim: f64,
    pub abs_error: f64,
}

/// Monte Carlo error against the analytic limit over growing sample sizes.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub method: Method,
    pub rule: SelectionRule,
    pub plim: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Track |estimate - plim| over a strictly increasing sample-size grid.
pub fn convergence_report(
    model: &PathModel,
    rule: &SelectionRule,
    method: Method,
    n_grid: &[usize],
    seed: u64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadGrid(
            "sample-size grid must be strictly increasing".to_string(),
        ));
    }
    let analytic = plim_matrix(model, rule)?;
    let plim = match method {
        Method::Iv => analytic.iv_plim,
        Method::Ols => analytic.ols_plim,
    };
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let data = apply_selection(&simulate(model, n, seed)?, rule)?;
        let report = estimate(&data, method, rule)?;
        rows.push(ConvergenceRow {
            n,
            estimate: report.estimate,
            std_error: report.std_error,
            plim,
            abs_error: (report.estimate - plim).abs(),
        });
    }
    Ok(ConvergenceReport { method, rule: rule.clone(), plim, rows })
}

/// One preset x rule x method comparison in a verification run.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyCase {
    pub scenario: String,
    pub rule: String,
    pub severity: Option<f64>,
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub plim: f64,
    pub se_gap: f64,
    pub pass: bool,
}

/// Outcome of checking the Monte Carlo oracle against analytic limits.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub n: usize,
    pub seed: u64,
    pub pass: bool,
    pub cases: Vec<VerifyCase>,
}

/// Agreement band: the estimate must sit within this many bootstrap
/// standard errors of the analytic limit.
pub const VERIFY_SE_BAND: f64 = 4.0;

/// Run the standard verification grid: every preset, rules {none,
/// adjustment, truncation at severity 0.25/0.5/0.75}, both methods.
pub fn verify_grid(n: usize, seed: u64) -> Result<VerifySummary> {
    let mut rules = vec![SelectionRule::None, SelectionRule::Adjustment];
    for q in [0.25, 0.5, 0.75] {
        rules.push(SelectionRule::truncation_at_severity(q)?);
    }
    let mut cases = Vec::new();
    for scenario in Scenario::ALL {
        let model = PathModel::preset(scenario, &Default::default())?;
        let base = simulate(&model, n, seed)?;
        for rule in &rules {
            let data = apply_selection(&base, rule)?;
            let analytic = plim_matrix(&model, rule)?;
            let (iv, ols) = estimate_pair(&data, rule)?;
            for (report, plim) in [(iv, analytic.iv_plim), (ols, analytic.ols_plim)] {
                let gap = (report.estimate - plim).abs();
                let se_gap = if report.std_error > 0.0 {
                    gap / report.std_error
                } else if gap <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                cases.push(VerifyCase {
                    scenario: scenario.name().to_string(),
                    rule: rule.kind().to_string(),
                    severity: match rule {
                        SelectionRule::Truncation(spec) => Some(spec.severity()),
                        _ => None,
                    },
                    method: report.method,
                    estimate: report.estimate,
                    std_error: report.std_error,
                    plim,
                    se_gap,
                    pass: se_gap <= VERIFY_SE_BAND,
                });
            }
        }
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(VerifySummary { n, seed, pass, cases })
}

/// Dump the sample as CSV: node columns in declaration order plus a 0/1
/// retention column `R`. With `observed_only`, latent columns are dropped
/// and only retained rows are written (what an analyst who cannot see the
/// truncated units would have).
pub fn write_csv<W: Write>(data: &Dataset, writer: W, observed_only: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let visible: Vec<usize> = (0..data.names.len())
        .filter(|&j| !(observed_only && data.latent[j]))
        .collect();
    let mut header: Vec<&str> = visible.iter().map(|&j| data.names[j].as_str()).collect();
    header.push("R");
    w.write_record(&header)?;
    let all_retained;
    let retained: &[bool] = match &data.retained {
        Some(r) => r,
        None => {
            all_retained = vec![true; data.n];
            &all_retained
        }
    };
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.n {
        if observed_only && !retained[i] {
            continue;
        }
        record.clear();
        for &j in &visible {
            record.push(format!("{}", data.columns[j][i]));
        }
        record.push(if retained[i] { "1".to_string() } else { "0".to_string() });
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PresetParams;
    use crate::normal::normal_inv_cdf;

    fn baseline() -> PathModel {
        PathModel::preset_with(Scenario::Baseline, PresetParams::default()).unwrap()
    }

    fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n
    }

    #[test]
    fn sample_moments_match_the_implied_covariance() {
        let data = simulate(&baseline(), 1_000_000, 42).unwrap();
        let t = data.column("T").unwrap();
        let z = data.column("Z").unwrap();
        let y = data.column("Y").unwrap();
        assert!((sample_cov(t, t) - 1.0).abs() < 0.005, "var T = {}", sample_cov(t, t));
        // Cov(Z,Y) = pi * beta = 0.2 on the full population.
        assert!((sample_cov(z, y) - 0.2).abs() < 0.005);
    }

    #[test]
    fn simulation_is_bit_identical_for_a_seed() {
        let a = simulate(&baseline(), 1000, 7).unwrap();
        let b = simulate(&baseline(), 1000, 7).unwrap();
        for name in ["Z", "U", "T", "S", "Y"] {
            assert_eq!(a.column(name).unwrap(), b.column(name).unwrap());
        }
        let c = simulate(&baseline(), 1000, 8).unwrap();
        assert_ne!(a.column("T").unwrap(), c.column("T").unwrap());
    }

    #[test]
    fn estimation_is_deterministic_despite_parallel_bootstrap() {
        let rule = SelectionRule::truncation_at_severity(0.4).unwrap();
        let data = apply_selection(&simulate(&baseline(), 20_000, 5).unwrap(), &rule).unwrap();
        let r1 = estimate_pair(&data, &rule).unwrap();
        let r2 = estimate_pair(&data, &rule).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.0.std_error > 0.0 && r1.1.std_error > 0.0);
    }

    #[test]
    fn retained_fraction_matches_the_severity() {
        let data = simulate(&baseline(), 1_000_000, 42).unwrap();
        let rule = SelectionRule::truncation_at_severity(0.291).unwrap();
        let cut = apply_selection(&data, &rule).unwrap();
        assert!((cut.retained_fraction() - 0.709).abs() < 0.002);

        let all = apply_selection(&data, &SelectionRule::truncation_at_threshold(-20.0).unwrap())
            .unwrap();
        assert_eq!(all.retained_count(), 1_000_000);

        let adj = apply_selection(&data, &SelectionRule::Adjustment).unwrap();
        assert!((adj.retained_fraction() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn valid_instrument_recovers_the_effect_without_selection() {
        let data = apply_selection(&simulate(&baseline(), 1_000_000, 42).unwrap(),
            &SelectionRule::None).unwrap();
        let report = estimate(&data, Method::Iv, &SelectionRule::None).unwrap();
        assert!((report.estimate - 0.4).abs() <= 4.0 * report.std_error);
        assert_eq!(report.n_retained, 1_000_000);
    }

    #[test]
    fn truncated_and_adjusted_estimates_match_their_plims() {
        let model = baseline();
        let n = 400_000;
        let trunc = SelectionRule::truncation_at_severity(0.5).unwrap();
        let data = apply_selection(&simulate(&model, n, 42).unwrap(), &trunc).unwrap();
        let report = estimate(&data, Method::Iv, &trunc).unwrap();
        assert!(
            (report.estimate - 0.3256687536885420).abs() <= 4.0 * report.std_error,
            "truncated IV {} +- {}",
            report.estimate,
            report.std_error
        );

        let adj = SelectionRule::Adjustment;
        let data = apply_selection(&simulate(&model, n, 42).unwrap(), &adj).unwrap();
        let report = estimate(&data, Method::Iv, &adj).unwrap();
        assert!(
            (report.estimate - 0.259375).abs() <= 4.0 * report.std_error,
            "adjusted IV {} +- {}",
            report.estimate,
            report.std_error
        );
    }

    #[test]
    fn near_total_truncation_leaves_too_few_rows() {
        let data = simulate(&baseline(), 20, 3).unwrap();
        let rule = SelectionRule::truncation_at_severity(0.999).unwrap();
        let cut = apply_selection(&data, &rule).unwrap();
        assert!(matches!(
            estimate(&cut, Method::Iv, &rule),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn stratified_adjustment_tracks_residualized_adjustment() {
        let rule = SelectionRule::Adjustment;
        let data = apply_selection(&simulate(&baseline(), 50_000, 11).unwrap(), &rule).unwrap();
        let residualized = estimate(&data, Method::Iv, &rule).unwrap();
        let stratified = stratified_adjusted_iv(&data, 10, 500).unwrap();
        assert!(
            (stratified - residualized.estimate).abs() <= 3.0 * residualized.std_error,
            "stratified {} vs residualized {} +- {}",
            stratified,
            residualized.estimate,
            residualized.std_error
        );
    }

    #[test]
    fn convergence_table_shape_and_limit_column() {
        let model = baseline();
        let report = convergence_report(
            &model,
            &SelectionRule::None,
            Method::Iv,
            &[2_000, 20_000],
            9,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        // Without selection the IV limit is the true effect.
        assert!(report.rows.iter().all(|r| (r.plim - 0.4).abs() < 1e-14));
        let last = report.rows.last().unwrap();
        assert!(last.abs_error <= 4.0 * last.std_error);

        assert!(matches!(
            convergence_report(&model, &SelectionRule::None, Method::Iv, &[100, 100], 9),
            Err(Error::BadGrid(_))
        ));
    }

    #[test]
    fn ols_limit_is_rule_invariant_in_the_baseline() {
        let model = baseline();
        for rule in [
            SelectionRule::None,
            SelectionRule::Adjustment,
            SelectionRule::truncation_at_severity(0.5).unwrap(),
        ] {
            let report = convergence_report(&model, &rule, Method::Ols, &[5_000], 13).unwrap();
            assert!((report.plim - 0.65).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_layout() {
        let model = baseline();
        let rule = SelectionRule::truncation_at_threshold(normal_inv_cdf(0.5).unwrap()).unwrap();
        let data = apply_selection(&simulate(&model, 200, 21).unwrap(), &rule).unwrap();

        let mut full = Vec::new();
        write_csv(&data, &mut full, false).unwrap();
        let text = String::from_utf8(full).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "Z,U,T,S,Y,R");
        assert_eq!(lines.count(), 200);
        assert!(text.lines().skip(1).any(|l| l.ends_with(",0")));

        let mut observed = Vec::new();
        write_csv(&data, &mut observed, true).unwrap();
        let text = String::from_utf8(observed).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "Z,T,S,Y,R");
        let kept = lines.count();
        assert_eq!(kept, data.retained_count());
        assert!(text.lines().skip(1).all(|l| l.ends_with(",1")));
    }

    #[test]
    fn verification_grid_passes_at_moderate_scale() {
        let summary = verify_grid(60_000, 42).unwrap();
        assert_eq!(summary.cases.len(), 4 * 5 * 2);
        assert!(
            summary.pass,
            "failing cases: {:?}",
            summary
                .cases
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{}/{}/{}: {:.4} vs {:.4}", c.scenario, c.rule, c.method,
                    c.estimate, c.plim))
                .collect::<Vec<_>>()
        );
    }
}
