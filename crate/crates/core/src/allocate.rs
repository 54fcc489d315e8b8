//! Equal-weight, TVL-weighted and equal-risk-contribution allocations.
//!
//! The ERC allocation minimizes the dispersion of risk contributions
//!
//! ```text
//! f(w) = Σ_i Σ_j ( w_i (M w)_i - w_j (M w)_j )²
//! ```
//!
//! over the unit simplex, using projected gradient descent with a
//! Barzilai-Borwein trial step and Armijo backtracking. For a diagonal `M` the
//! minimizer is known in closed form (`w_i ∝ 1/√m_ii`), which
//! [`closed_form_diagonal`] exposes as an independent check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Universe, WeightVector};
use crate::error::{Error, Result};
use crate::risk::{build_risk_matrix, contributions_raw, normalize, RiskMatrix};

/// Allocation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ew,
    Tvl,
    Erc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ew, Method::Tvl, Method::Erc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ew => "ew",
            Method::Tvl => "tvl",
            Method::Erc => "erc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ew" => Ok(Method::Ew),
            "tvl" => Ok(Method::Tvl),
            "erc" => Ok(Method::Erc),
            other => Err(format!("unknown method `{other}` (expected ew, tvl or erc)")),
        }
    }
}

/// Line-search configuration for the ERC solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    /// Trial step used on the first iteration, before a Barzilai-Borwein
    /// estimate is available.
    pub initial_step: f64,
    /// Factor in (0, 1) applied to the step on each failed Armijo test.
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant in (0, 1).
    pub sufficient_decrease: f64,
    /// Maximum number of backtracking halvings per iteration.
    pub max_backtracks: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErcSolverOptions {
    pub max_iterations: usize,
    /// Largest objective value accepted as converged.
    pub tolerance: f64,
    pub step_rule: StepRule,
}

impl Default for ErcSolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-12,
            step_rule: StepRule::default(),
        }
    }
}

impl ErcSolverOptions {
    fn validate(&self) -> Result<()> {
        let s = &self.step_rule;
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(s.initial_step > 0.0)
            || !(s.backtrack > 0.0 && s.backtrack < 1.0)
            || !(s.sufficient_decrease > 0.0 && s.sufficient_decrease < 1.0)
        {
            return Err(Error::InvalidConfig("invalid step rule".into()));
        }
        Ok(())
    }
}

/// Why the iterative solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Single protocol; no iterations needed.
    Trivial,
    /// The objective reached exactly zero or the projected step vanished.
    Stationary,
    /// Relative objective decrease over the stall window fell below threshold.
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErcSolution {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
}

/// Number of iterations over which the relative objective decrease is measured.
const STALL_WINDOW: usize = 10;
/// Relative objective decrease over [`STALL_WINDOW`] iterations below which
/// the solver stops.
const STALL_THRESHOLD: f64 = 1e-14;

pub fn equal_weights(universe: &Universe) -> Result<WeightVector> {
    if universe.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let n = universe.len();
    WeightVector::renormalized(universe.ids(), vec![1.0 / n as f64; n])
}

pub fn tvl_weights(universe: &Universe) -> Result<WeightVector> {
    if universe.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let tvl: Vec<f64> = universe
        .protocols()
        .iter()
        .map(|p| p.tvl.ok_or_else(|| Error::MissingTvl(p.id.clone())))
        .collect::<Result<_>>()?;
    let total: f64 = tvl.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalTvl);
    }
    WeightVector::renormalized(universe.ids(), tvl.iter().map(|t| t / total).collect())
}

/// Dispersion of risk contributions summed over all ordered pairs.
pub fn erc_objective(w: &WeightVector, m: &RiskMatrix) -> Result<f64> {
    m.check_ids(w.ids())?;
    m.require_normalized()?;
    Ok(objective_raw(w.values(), m))
}

/// Gradient of [`erc_objective`] with respect to the weights.
pub fn erc_gradient(w: &WeightVector, m: &RiskMatrix) -> Result<Vec<f64>> {
    m.check_ids(w.ids())?;
    m.require_normalized()?;
    Ok(gradient_raw(w.values(), m))
}

pub(crate) fn objective_raw(w: &[f64], m: &RiskMatrix) -> f64 {
    let c = contributions_raw(w, m);
    let mut f = 0.0;
    for ci in &c {
        for cj in &c {
            let d = ci - cj;
            f += d * d;
        }
    }
    f
}

// With c_i = w_i (Mw)_i and f = 2n Σc² - 2(Σc)², ∂f/∂c_i = 4(n c_i - Σc) =: a_i
// and ∂f/∂w_k = a_k (Mw)_k + (M (a∘w))_k for symmetric M.
pub(crate) fn gradient_raw(w: &[f64], m: &RiskMatrix) -> Vec<f64> {
    let n = w.len() as f64;
    let mw = m.apply(w);
    let c: Vec<f64> = w.iter().zip(&mw).map(|(wi, mwi)| wi * mwi).collect();
    let total: f64 = c.iter().sum();
    let a: Vec<f64> = c.iter().map(|ci| 4.0 * (n * ci - total)).collect();
    let aw: Vec<f64> = a.iter().zip(w).map(|(ai, wi)| ai * wi).collect();
    let m_aw = m.apply(&aw);
    (0..w.len()).map(|k| a[k] * mw[k] + m_aw[k]).collect()
}

/// Euclidean projection onto the unit simplex `{w : Σw = 1, w ≥ 0}` by the
/// sorted-threshold method.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidWeights("cannot project a non-finite vector".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    // the subtraction can overshoot 1 by an ulp, e.g. for a single entry
    Ok(v.iter().map(|x| (x - theta).clamp(0.0, 1.0)).collect())
}

/// `w_i = (1/√m_ii) / Σ_j (1/√m_jj)` for a strictly diagonal matrix.
pub fn closed_form_diagonal(m: &RiskMatrix) -> Result<WeightVector> {
    if !m.is_diagonal() {
        return Err(Error::NotDiagonal);
    }
    let inv_sqrt: Vec<f64> = m.diagonal().iter().map(|s| 1.0 / s.sqrt()).collect();
    let total: f64 = inv_sqrt.iter().sum();
    WeightVector::renormalized(m.ids().to_vec(), inv_sqrt.iter().map(|x| x / total).collect())
}

/// Minimizes the contribution dispersion over the simplex, starting from
/// equal weights.
///
/// Returns [`Error::NotConverged`] carrying the best iterate when the final
/// objective exceeds `opts.tolerance`.
pub fn solve_erc(m: &RiskMatrix, opts: &ErcSolverOptions) -> Result<ErcSolution> {
    let solution = solve_erc_unchecked(m, opts)?;
    if solution.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged {
            best: solution.weights,
            objective: solution.objective,
            iterations: solution.iterations,
        })
    }
}

/// Like [`solve_erc`], but returns the final iterate even when it did not
/// reach the tolerance.
pub fn solve_erc_unchecked(m: &RiskMatrix, opts: &ErcSolverOptions) -> Result<ErcSolution> {
    m.require_normalized()?;
    opts.validate()?;
    let n = m.dim();
    let ids = m.ids().to_vec();
    if n == 1 {
        return Ok(ErcSolution {
            weights: WeightVector::new(ids, vec![1.0])?,
            objective: 0.0,
            iterations: 0,
            converged: true,
            stop_reason: StopReason::Trivial,
        });
    }

    let rule = opts.step_rule;
    let mut x = vec![1.0 / n as f64; n];
    let mut fx = objective_raw(&x, m);
    let mut gx = gradient_raw(&x, m);
    let mut step = rule.initial_step;
    let mut history = vec![fx];
    let mut iterations = 0;
    let mut stop_reason = StopReason::IterationLimit;

    while iterations < opts.max_iterations {
        if fx == 0.0 {
            stop_reason = StopReason::Stationary;
            break;
        }
        let trial: Vec<f64> = x.iter().zip(&gx).map(|(xi, gi)| xi - step * gi).collect();
        let target = project_to_simplex(&trial)?;
        let dir: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
        let slope: f64 = dir.iter().zip(&gx).map(|(d, g)| d * g).sum();
        if dir.iter().all(|d| *d == 0.0) || slope >= 0.0 {
            stop_reason = StopReason::Stationary;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=rule.max_backtracks {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi + t * d).collect();
            let fc = objective_raw(&cand, m);
            if fc <= fx + rule.sufficient_decrease * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= rule.backtrack;
        }
        let Some((next, f_next)) = accepted else {
            stop_reason = StopReason::Stationary;
            break;
        };
        iterations += 1;

        let g_next = gradient_raw(&next, m);
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            rule.initial_step
        };

        x = next;
        fx = f_next;
        gx = g_next;
        history.push(fx);

        if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if old - fx <= STALL_THRESHOLD * old {
                stop_reason = StopReason::Stalled;
                break;
            }
        }
    }

    let weights = WeightVector::renormalized(ids, x)?;
    let objective = objective_raw(weights.values(), m);
    log::debug!(
        "erc solve: n={n} iterations={iterations} objective={objective:e} stop={stop_reason:?}"
    );
    Ok(ErcSolution {
        converged: objective <= opts.tolerance,
        weights,
        objective,
        iterations,
        stop_reason,
    })
}

/// Weights for `method` over `universe`; ERC builds and normalizes the risk
/// matrix from the universe's scores.
pub fn allocate(universe: &Universe, method: Method, opts: &ErcSolverOptions) -> Result<WeightVector> {
    match method {
        Method::Ew => equal_weights(universe),
        Method::Tvl => tvl_weights(universe),
        Method::Erc => {
            let m = normalize(&build_risk_matrix(universe))?;
            Ok(solve_erc(&m, opts)?.weights)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_universe, ProtocolRecord};
    use approx::assert_relative_eq;

    fn universe(scores: &[f64]) -> Universe {
        validate_universe(
            scores
                .iter()
                .enumerate()
                .map(|(i, s)| ProtocolRecord::new(format!("p{i}"), *s).with_tvl(1.0))
                .collect(),
        )
        .unwrap()
    }

    fn normalized(scores: &[f64]) -> RiskMatrix {
        normalize(&build_risk_matrix(&universe(scores))).unwrap()
    }

    #[test]
    fn equal_weight_examples() {
        assert_eq!(equal_weights(&universe(&[1.0; 4])).unwrap().values(), &[0.25; 4]);
        assert_eq!(equal_weights(&universe(&[1.0])).unwrap().values(), &[1.0]);
        let w = equal_weights(&universe(&[1.0; 3])).unwrap();
        assert_eq!(w.values().iter().sum::<f64>(), 1.0);
        for v in w.values() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn tvl_weight_examples() {
        let mk = |tvls: &[f64]| {
            validate_universe(
                tvls.iter()
                    .enumerate()
                    .map(|(i, t)| ProtocolRecord::new(format!("p{i}"), 1.0).with_tvl(*t))
                    .collect(),
            )
            .unwrap()
        };
        assert_eq!(tvl_weights(&mk(&[100.0, 300.0])).unwrap().values(), &[0.25, 0.75]);
        assert_eq!(tvl_weights(&mk(&[5.0])).unwrap().values(), &[1.0]);
        assert_eq!(tvl_weights(&mk(&[1.0, 1.0, 2.0])).unwrap().values(), &[0.25, 0.25, 0.5]);
        assert!(matches!(tvl_weights(&mk(&[0.0, 0.0])), Err(Error::ZeroTotalTvl)));

        let missing = validate_universe(vec![
            ProtocolRecord::new("a", 1.0).with_tvl(1.0),
            ProtocolRecord::new("b", 1.0),
        ])
        .unwrap();
        assert!(matches!(tvl_weights(&missing), Err(Error::MissingTvl(ref id)) if id == "b"));
    }

    #[test]
    fn objective_examples() {
        let u = universe(&[0.6, 0.8]);
        let m = normalize(&build_risk_matrix(&u)).unwrap();
        let w = WeightVector::new(u.ids(), vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(erc_objective(&w, &m).unwrap(), 0.005, epsilon = 1e-15);

        let m1 = normalized(&[3.0]);
        let w1 = WeightVector::new(m1.ids().to_vec(), vec![1.0]).unwrap();
        assert_eq!(erc_objective(&w1, &m1).unwrap(), 0.0);

        let raw = build_risk_matrix(&u);
        assert!(matches!(erc_objective(&w, &raw), Err(Error::NotNormalized)));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]).unwrap(), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_to_simplex(&[0.5, 0.5, -1.0]).unwrap(), vec![0.5, 0.5, 0.0]);
        assert!(matches!(project_to_simplex(&[]), Err(Error::EmptyVector)));
    }

    #[test]
    fn closed_form_examples() {
        let w = closed_form_diagonal(&normalized(&[1.0, 4.0])).unwrap();
        assert_relative_eq!(w.values()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.values()[1], 1.0 / 3.0, epsilon = 1e-15);

        let w = closed_form_diagonal(&normalized(&[2.0, 2.0])).unwrap();
        assert_eq!(w.values(), &[0.5, 0.5]);

        let w = closed_form_diagonal(&normalized(&[1.0, 1.0, 4.0])).unwrap();
        for (got, want) in w.values().iter().zip([0.4, 0.4, 0.2]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }

        let ids = vec!["a".to_string(), "b".to_string()];
        let full = RiskMatrix::from_entries(
            ids,
            nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]),
        )
        .unwrap();
        assert!(matches!(closed_form_diagonal(&full), Err(Error::NotDiagonal)));
    }

    #[test]
    fn solver_examples() {
        let opts = ErcSolverOptions::default();

        let sol = solve_erc(&normalized(&[1.0, 4.0]), &opts).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.weights.values()[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(sol.weights.values()[1], 1.0 / 3.0, epsilon = 1e-8);

        let sol = solve_erc(&normalized(&[1.0, 4.0, 9.0]), &opts).unwrap();
        for (got, want) in sol.weights.values().iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-8);
        }

        let u = universe(&[0.7; 5]);
        let m = normalize(&build_risk_matrix(&u)).unwrap();
        let sol = solve_erc(&m, &opts).unwrap();
        assert_eq!(sol.weights, equal_weights(&u).unwrap());

        let sol = solve_erc(&normalized(&[0.3]), &opts).unwrap();
        assert_eq!(sol.weights.values(), &[1.0]);
        assert_eq!(sol.stop_reason, StopReason::Trivial);
    }

    #[test]
    fn solver_requires_normalized() {
        let raw = build_risk_matrix(&universe(&[1.0, 2.0]));
        assert!(matches!(
            solve_erc(&raw, &ErcSolverOptions::default()),
            Err(Error::NotNormalized)
        ));
    }

    #[test]
    fn solver_reports_non_convergence() {
        let opts = ErcSolverOptions {
            max_iterations: 1,
            ..Default::default()
        };
        match solve_erc(&normalized(&[0.1, 10.0, 3.0]), &opts) {
            Err(Error::NotConverged { best, objective, iterations }) => {
                assert_eq!(iterations, 1);
                assert!(objective > opts.tolerance);
                assert_relative_eq!(best.values().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn solver_handles_correlated_matrix() {
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let raw = RiskMatrix::from_entries(
            ids,
            nalgebra::DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.2, 0.1, 0.2, 2.0, 0.4, 0.1, 0.4, 4.0],
            ),
        )
        .unwrap();
        let m = normalize(&raw).unwrap();
        let sol = solve_erc(&m, &ErcSolverOptions::default()).unwrap();
        let c = contributions_raw(sol.weights.values(), &m);
        for ci in &c {
            assert_relative_eq!(*ci, c[0], max_relative = 1e-6);
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ERC".parse::<Method>().unwrap(), Method::Erc);
        assert!("foo".parse::<Method>().is_err());
        assert_eq!(Method::Tvl.to_string(), "tvl");
    }
}
