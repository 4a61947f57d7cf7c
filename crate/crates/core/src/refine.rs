//! Support-guided correspondence sampling and weighted SE(3) refinement.
//!
//! Correspondences are drawn with probability proportional to their support,
//! and the drawn set is fitted by minimizing
//! `Σ w_i ‖ũ_i − π(ΔT·T0·p_i)‖²` over the left increment `ΔT` with
//! Levenberg–Marquardt. The refined extrinsics are `ΔT·T0`.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, Vector2, Vector6};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, CameraIntrinsics, GeometryError, Pose, Twist};
use crate::scene_sim::Correspondence;
use crate::seed;

/// Normal equations whose eigenvalue spread exceeds this are treated as singular.
const RANK_RTOL: f64 = 1e-12;

/// Damping beyond which a failing factorization is reported as rank deficiency.
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("support values are all zero; no correspondence carries evidence")]
    DegenerateSupport,
    #[error("support values must be finite and non-negative (index {index}: {value})")]
    InvalidSupport { index: usize, value: f64 },
    #[error("probability vector is invalid: {0}")]
    InvalidDistribution(String),
    #[error("cannot draw {requested} distinct indices from {available} with nonzero probability")]
    InsufficientPopulation { requested: usize, available: usize },
    #[error("sampling plan must request at least one index")]
    EmptyPlan,
    #[error("sampled index set is empty")]
    EmptySample,
    #[error("sampled index {index} out of range for {len} correspondences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{supports} support values for {correspondences} correspondences")]
    LengthMismatch {
        supports: usize,
        correspondences: usize,
    },
    #[error("correspondence for point {point_id} does not project in front of the camera under the initial pose")]
    OutOfView { point_id: u64 },
    #[error("normal equations are singular; the sampled geometry does not constrain all six degrees of freedom")]
    RankDeficient,
    #[error("invalid refinement options: {0}")]
    InvalidOptions(String),
}

pub type Result<T> = std::result::Result<T, RefineError>;

/// `p_i = s_i / Σ s_j`.
pub fn support_distribution(supports: &[f64]) -> Result<Vec<f64>> {
    for (index, &value) in supports.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(RefineError::InvalidSupport { index, value });
        }
    }
    let total: f64 = supports.iter().sum();
    if total <= 0.0 {
        return Err(RefineError::DegenerateSupport);
    }
    Ok(supports.iter().map(|s| s / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub k: usize,
    pub with_replacement: bool,
    pub seed: u64,
}

/// Draws `plan.k` indices with probability proportional to `p`.
///
/// Without replacement the result is distributed as successive draws with the
/// remaining weights renormalized after each draw, and is returned in draw
/// order. Indices with zero probability are never selected.
pub fn sgis_sample(p: &[f64], plan: &SamplingPlan) -> Result<Vec<usize>> {
    if plan.k == 0 {
        return Err(RefineError::EmptyPlan);
    }
    if let Some(bad) = p.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(RefineError::InvalidDistribution(format!("entry {bad}")));
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(RefineError::InvalidDistribution("no positive mass".into()));
    }
    let mut rng = seed::rng(plan.seed);
    if plan.with_replacement {
        let cdf: Vec<f64> = p
            .iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        let last_positive = p.iter().rposition(|x| *x > 0.0).expect("positive mass");
        Ok((0..plan.k)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                cdf.partition_point(|c| *c <= x).min(last_positive)
            })
            .collect())
    } else {
        let available = p.iter().filter(|x| **x > 0.0).count();
        if plan.k > available {
            return Err(RefineError::InsufficientPopulation {
                requested: plan.k,
                available,
            });
        }
        // Exponential race: the index with the smallest E_i / p_i is drawn first.
        let mut keys: Vec<(f64, usize)> = p
            .iter()
            .enumerate()
            .filter_map(|(i, &w)| {
                let e: f64 = rng.sample(Exp1);
                (w > 0.0).then(|| (e / w, i))
            })
            .collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(keys.into_iter().take(plan.k).map(|(_, i)| i).collect())
    }
}

/// How sampled correspondences are weighted in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportWeighting {
    /// Weight by the support value `s_i`.
    #[default]
    Support,
    /// Weight by `s_i / p_i`, the classical importance-sampling correction.
    ImportanceCorrected,
}

/// Per-correspondence objective weights under `mode`.
pub fn objective_weights(supports: &[f64], mode: SupportWeighting) -> Result<Vec<f64>> {
    match mode {
        SupportWeighting::Support => Ok(supports.to_vec()),
        SupportWeighting::ImportanceCorrected => {
            let p = support_distribution(supports)?;
            Ok(supports
                .iter()
                .zip(&p)
                .map(|(s, p)| if *p > 0.0 { s / p } else { 0.0 })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub cost_tolerance: f64,
    /// Twist norm below which a step ends the solve.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Huber threshold on the weighted residual norm, in pixels; `None` is plain least squares.
    pub huber_delta: Option<f64>,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            huber_delta: None,
        }
    }
}

impl RefineOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations >= 1
            && self.cost_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.huber_delta.is_none_or(|d| d > 0.0);
        if ok {
            Ok(())
        } else {
            Err(RefineError::InvalidOptions(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// Left increment `ΔT*`.
    pub delta: Pose,
    /// `ΔT*·T0`.
    pub refined: Pose,
    pub iterations: usize,
    /// Weighted cost in px².
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Cost before the first iteration followed by the cost after each iteration.
    pub cost_trace: Vec<f64>,
}

/// One weighted term of the objective.
#[derive(Debug, Clone, Copy)]
struct Term<'a> {
    corr: &'a Correspondence,
    weight: f64,
}

struct Linearization {
    cost: f64,
    hessian: Matrix6<f64>,
    gradient: Vector6<f64>,
}

/// Robust cost and IRLS factor for a squared weighted residual `e²`.
fn robust(e_sq: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(d) if e_sq > d * d => {
            let e = e_sq.sqrt();
            (2.0 * d * e - d * d, d / e)
        }
        _ => (e_sq, 1.0),
    }
}

fn residual(k: &CameraIntrinsics, pose: &Pose, c: &Correspondence) -> Option<Vector2<f64>> {
    let px = geometry::project(k, &pose.transform_point(&c.point)).ok()?;
    Some(c.u_matched.to_vector() - px.to_vector())
}

fn cost(k: &CameraIntrinsics, pose: &Pose, terms: &[Term], huber: Option<f64>) -> f64 {
    terms
        .iter()
        .filter_map(|t| residual(k, pose, t.corr).map(|r| robust(t.weight * r.norm_squared(), huber).0))
        .sum()
}

fn linearize(k: &CameraIntrinsics, pose: &Pose, terms: &[Term], huber: Option<f64>) -> Linearization {
    let mut lin = Linearization {
        cost: 0.0,
        hessian: Matrix6::zeros(),
        gradient: Vector6::zeros(),
    };
    for t in terms {
        let Some(r) = residual(k, pose, t.corr) else {
            continue;
        };
        let j = match geometry::project_jacobian(k, pose, &t.corr.point) {
            Ok(j) => j,
            Err(GeometryError::OutOfView) => continue,
            Err(e) => unreachable!("{e}"),
        };
        let (rho, irls) = robust(t.weight * r.norm_squared(), huber);
        let w = t.weight * irls;
        lin.cost += rho;
        lin.hessian += j.transpose() * j * w;
        lin.gradient += j.transpose() * r * w;
    }
    lin
}

fn check_rank(h: &Matrix6<f64>) -> Result<()> {
    let eig = h.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if max.is_nan() || max <= 0.0 || min <= RANK_RTOL * max {
        return Err(RefineError::RankDeficient);
    }
    Ok(())
}

/// Weighted refinement of `initial` over the sampled multiset `sampled`.
///
/// Each occurrence of an index adds its support to that correspondence's
/// weight. Terms whose point falls behind the camera at some iterate are
/// dropped for that iterate.
pub fn refine_pose(
    initial: &Pose,
    corrs: &[Correspondence],
    supports: &[f64],
    k: &CameraIntrinsics,
    sampled: &[usize],
    opts: &RefineOptions,
) -> Result<RefineResult> {
    opts.validate()?;
    if supports.len() != corrs.len() {
        return Err(RefineError::LengthMismatch {
            supports: supports.len(),
            correspondences: corrs.len(),
        });
    }
    if sampled.is_empty() {
        return Err(RefineError::EmptySample);
    }
    let mut folded: BTreeMap<usize, f64> = BTreeMap::new();
    for &index in sampled {
        let s = *supports.get(index).ok_or(RefineError::IndexOutOfRange {
            index,
            len: corrs.len(),
        })?;
        if !(s >= 0.0 && s.is_finite()) {
            return Err(RefineError::InvalidSupport { index, value: s });
        }
        *folded.entry(index).or_insert(0.0) += s;
    }
    let terms: Vec<Term> = folded
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(i, weight)| Term {
            corr: &corrs[i],
            weight,
        })
        .collect();
    if terms.is_empty() {
        return Err(RefineError::DegenerateSupport);
    }
    for t in &terms {
        if geometry::project(k, &initial.transform_point(&t.corr.point)).is_err() {
            return Err(RefineError::OutOfView {
                point_id: t.corr.point_id,
            });
        }
    }

    let huber = opts.huber_delta;
    let mut delta = Pose::identity();
    let mut lin = linearize(k, initial, &terms, huber);
    let initial_cost = lin.cost;
    let mut trace = vec![initial_cost];
    let mut converged = initial_cost == 0.0;
    let mut iterations = 0;
    if !converged {
        check_rank(&lin.hessian)?;
    }
    let mut lambda = opts.initial_damping;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut damped = lin.hessian;
        for i in 0..6 {
            damped[(i, i)] += lambda * lin.hessian[(i, i)];
        }
        let Some(chol) = damped.cholesky() else {
            if lambda > MAX_DAMPING {
                return Err(RefineError::RankDeficient);
            }
            lambda *= opts.damping_up;
            trace.push(lin.cost);
            continue;
        };
        let step = chol.solve(&lin.gradient);
        if step.norm() < opts.step_tolerance {
            converged = true;
            trace.push(lin.cost);
            break;
        }
        let candidate_delta = geometry::compose(&geometry::se3_exp(&Twist::from_vector(&step)), &delta);
        let candidate = geometry::compose(&candidate_delta, initial);
        let candidate_cost = cost(k, &candidate, &terms, huber);
        if candidate_cost < lin.cost {
            let decrease = (lin.cost - candidate_cost) / lin.cost;
            delta = candidate_delta;
            lin = linearize(k, &candidate, &terms, huber);
            lambda = (lambda * opts.damping_down).max(f64::MIN_POSITIVE);
            converged = decrease < opts.cost_tolerance || lin.cost == 0.0;
        } else {
            lambda *= opts.damping_up;
        }
        trace.push(lin.cost);
    }

    Ok(RefineResult {
        delta,
        refined: geometry::compose(&delta, initial),
        iterations,
        initial_cost,
        final_cost: lin.cost,
        converged,
        cost_trace: trace,
    })
}

/// Reference variant: `k` indices drawn uniformly without replacement, unit weights.
pub fn refine_uniform_baseline(
    initial: &Pose,
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    k: usize,
    seed: u64,
    opts: &RefineOptions,
) -> Result<RefineResult> {
    let ones = vec![1.0; corrs.len()];
    let p = support_distribution(&ones)?;
    let plan = SamplingPlan {
        k,
        with_replacement: false,
        seed,
    };
    let sampled = sgis_sample(&p, &plan)?;
    refine_pose(initial, corrs, &ones, intrinsics, &sampled, opts)
}
