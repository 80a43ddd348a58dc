//! Score mathematics: hard and expected demographic-parity gaps, soft
//! membership, the top-k sparsity penalty, the size-constraint penalty and
//! the analytic gradient of the penalized objective.
//!
//! All row sums go through [`crate::par`] so results do not depend on the
//! execution strategy.

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Parameter vector aligned to the feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub theta: Vec<f64>,
}

impl Weights {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(j) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::Config(format!("theta[{j}] is not finite")));
        }
        Ok(Weights { theta })
    }

    pub fn zeros(d: usize) -> Self {
        Weights {
            theta: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, fm: &FeatureMatrix) -> Result<()> {
        if self.d() != fm.d() {
            return Err(Error::Dimension(format!(
                "{} weights for {} feature columns",
                self.d(),
                fm.d()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    /// Number of penalizable columns left unpenalized.
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Size-constraint penalty coefficient, escalated by the solver.
    pub mu: f64,
    pub eps_denom: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 1.0,
            k: 5,
            alpha: 0.45,
            beta: 0.55,
            mu: 0.0,
            eps_denom: 1e-12,
            exec: Exec::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, penalizable_columns: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        if self.alpha > self.beta {
            return Err(Error::Config("alpha must not exceed beta".into()));
        }
        let non_negative = |v: f64| v >= 0.0;
        if !non_negative(self.lambda)
            || !non_negative(self.mu)
            || self.eps_denom.is_nan()
            || self.eps_denom <= 0.0
        {
            return Err(Error::Config(
                "lambda and mu must be >= 0, eps_denom > 0".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.k > penalizable_columns {
            return Err(Error::KTooLarge {
                k: self.k,
                available: penalizable_columns,
            });
        }
        Ok(())
    }

    pub fn size_ok(&self, ratio: f64) -> bool {
        self.alpha <= ratio && ratio <= self.beta
    }
}

/// Per-row membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGroup {
    pub p: Vec<f64>,
}

/// Favorable rate of the complement minus favorable rate of the group.
pub fn dscore_hard(fav: &[bool], members: &[bool]) -> Result<f64> {
    if fav.len() != members.len() {
        return Err(Error::Dimension(format!(
            "{} favorable flags vs {} membership flags",
            fav.len(),
            members.len()
        )));
    }
    let n = members.len();
    let size = members.iter().filter(|&&m| m).count();
    if size == 0 || size == n {
        return Err(Error::DegeneratePartition);
    }
    let fav_total = fav.iter().filter(|&&f| f).count();
    let fav_in = fav.iter().zip(members).filter(|(&f, &m)| f && m).count();
    Ok(dscore_from_counts(fav_total, fav_in, n, size))
}

/// Hard score from counts; same arithmetic as [`expected_dscore`] on 0/1 memberships.
pub(crate) fn dscore_from_counts(fav_total: usize, fav_in: usize, n: usize, size: usize) -> f64 {
    gap(
        fav_total as f64,
        fav_in as f64,
        n as f64,
        size as f64,
        f64::MIN_POSITIVE,
    )
}

/// `(Y - A) / (N - B) - A / B` with both denominators floored at `eps`.
#[inline]
fn gap(y: f64, a: f64, n: f64, b: f64, eps: f64) -> f64 {
    (y - a) / (n - b).max(eps) - a / b.max(eps)
}

/// Logistic function without overflow for large |z|.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn membership(fm: &FeatureMatrix, w: &Weights) -> Result<SoftGroup> {
    membership_with(fm, w, Exec::default())
}

pub fn membership_with(fm: &FeatureMatrix, w: &Weights, exec: Exec) -> Result<SoftGroup> {
    w.check(fm)?;
    let parts = par::map_chunks(exec, fm.n(), |rows| {
        rows.map(|i| sigmoid(dot(fm.row(i), &w.theta)))
            .collect::<Vec<_>>()
    });
    Ok(SoftGroup {
        p: parts.into_iter().flatten().collect(),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(sum fav*p, sum p)` in the fixed chunk order.
fn soft_sums(fav: &[bool], p: &[f64], exec: Exec) -> (f64, f64) {
    par::map_chunks(exec, p.len(), |rows| {
        let mut a = 0.0;
        let mut b = 0.0;
        for i in rows {
            if fav[i] {
                a += p[i];
            }
            b += p[i];
        }
        (a, b)
    })
    .into_iter()
    .fold((0.0, 0.0), |(a, b), (ca, cb)| (a + ca, b + cb))
}

fn fav_count(fav: &[bool]) -> f64 {
    fav.iter().filter(|&&f| f).count() as f64
}

pub fn expected_dscore(fav: &[bool], sg: &SoftGroup, eps_denom: f64) -> f64 {
    expected_dscore_with(fav, sg, eps_denom, Exec::default())
}

pub fn expected_dscore_with(fav: &[bool], sg: &SoftGroup, eps_denom: f64, exec: Exec) -> f64 {
    assert_eq!(fav.len(), sg.p.len(), "fav and membership lengths differ");
    let (a, b) = soft_sums(fav, &sg.p, exec);
    gap(fav_count(fav), a, fav.len() as f64, b, eps_denom)
}

/// Indices of the `m - k` smallest-|theta| penalizable columns, ties broken
/// by lower column index first.
pub fn smallest_columns(theta: &[f64], k: usize, penalizable: &[bool]) -> Result<Vec<usize>> {
    let mut cols: Vec<usize> = (0..theta.len()).filter(|&j| penalizable[j]).collect();
    let m = cols.len();
    if k > m {
        return Err(Error::KTooLarge { k, available: m });
    }
    cols.sort_by(|&i, &j| theta[i].abs().total_cmp(&theta[j].abs()).then(i.cmp(&j)));
    cols.truncate(m - k);
    Ok(cols)
}

/// Mean of the `m - k` smallest absolute penalizable weights; 0 when `k = m`.
pub fn penalty_topk(w: &Weights, k: usize, penalizable: &[bool]) -> Result<f64> {
    if penalizable.len() != w.d() {
        return Err(Error::Dimension("penalizable mask length".into()));
    }
    let small = smallest_columns(&w.theta, k, penalizable)?;
    if small.is_empty() {
        return Ok(0.0);
    }
    Ok(small.iter().map(|&j| w.theta[j].abs()).sum::<f64>() / small.len() as f64)
}

pub fn size_ratio(sg: &SoftGroup) -> f64 {
    sg.p.iter().sum::<f64>() / sg.p.len() as f64
}

fn size_violation(cfg: &ObjectiveConfig, r: f64) -> (f64, f64) {
    let below = (cfg.alpha - r).max(0.0);
    let above = (r - cfg.beta).max(0.0);
    (below, above)
}

/// Objective value together with its pieces, for tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub expected_dscore: f64,
    pub penalty: f64,
    pub size_ratio: f64,
    pub constraint: f64,
    pub value: f64,
}

pub fn objective_parts(
    fav: &[bool],
    fm: &FeatureMatrix,
    w: &Weights,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveParts> {
    check_rows(fav, fm)?;
    let sg = membership_with(fm, w, cfg.exec)?;
    Ok(parts_from_soft(fav, fm, w, cfg, &sg)?.0)
}

fn parts_from_soft(
    fav: &[bool],
    fm: &FeatureMatrix,
    w: &Weights,
    cfg: &ObjectiveConfig,
    sg: &SoftGroup,
) -> Result<(ObjectiveParts, f64, f64)> {
    let (a, b) = soft_sums(fav, &sg.p, cfg.exec);
    let n = fav.len() as f64;
    let ed = gap(fav_count(fav), a, n, b, cfg.eps_denom);
    let penalty = penalty_topk(w, cfg.k, &fm.penalizable())?;
    let r = b / n;
    let (below, above) = size_violation(cfg, r);
    let constraint = below * below + above * above;
    let value = ed - cfg.lambda * penalty - cfg.mu * constraint;
    Ok((
        ObjectiveParts {
            expected_dscore: ed,
            penalty,
            size_ratio: r,
            constraint,
            value,
        },
        a,
        b,
    ))
}

fn check_rows(fav: &[bool], fm: &FeatureMatrix) -> Result<()> {
    if fav.len() != fm.n() {
        return Err(Error::Dimension(format!(
            "{} favorable flags for {} rows",
            fav.len(),
            fm.n()
        )));
    }
    Ok(())
}

/// Expected gap minus the sparsity and size-constraint penalties; higher is better.
pub fn penalized_objective(
    fav: &[bool],
    fm: &FeatureMatrix,
    w: &Weights,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    Ok(objective_parts(fav, fm, w, cfg)?.value)
}

pub fn gradient(
    fav: &[bool],
    fm: &FeatureMatrix,
    w: &Weights,
    cfg: &ObjectiveConfig,
) -> Result<Vec<f64>> {
    Ok(value_and_gradient(fav, fm, w, cfg)?.1)
}

/// One membership pass shared by the objective value and its gradient.
pub fn value_and_gradient(
    fav: &[bool],
    fm: &FeatureMatrix,
    w: &Weights,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveParts, Vec<f64>)> {
    check_rows(fav, fm)?;
    let sg = membership_with(fm, w, cfg.exec)?;
    let (parts, a, b) = parts_from_soft(fav, fm, w, cfg, &sg)?;
    let d = fm.d();
    let n = fav.len() as f64;
    let y = fav_count(fav);
    let eps = cfg.eps_denom;

    // dA_j = sum fav_i p_i (1 - p_i) x_ij, dB_j = sum p_i (1 - p_i) x_ij
    let partials = par::map_chunks(cfg.exec, fm.n(), |rows| {
        let mut da = vec![0.0; d];
        let mut db = vec![0.0; d];
        for i in rows {
            let s = sg.p[i] * (1.0 - sg.p[i]);
            if s == 0.0 {
                continue;
            }
            let x = fm.row(i);
            if fav[i] {
                for j in 0..d {
                    let v = s * x[j];
                    da[j] += v;
                    db[j] += v;
                }
            } else {
                for j in 0..d {
                    db[j] += s * x[j];
                }
            }
        }
        (da, db)
    });
    let mut da = vec![0.0; d];
    let mut db = vec![0.0; d];
    for (cda, cdb) in partials {
        for j in 0..d {
            da[j] += cda[j];
            db[j] += cdb[j];
        }
    }

    let out_den = n - b;
    let (d1, out_free) = if out_den >= eps {
        (out_den, 1.0)
    } else {
        (eps, 0.0)
    };
    let (d2, in_free) = if b >= eps { (b, 1.0) } else { (eps, 0.0) };
    let (below, above) = size_violation(cfg, b / n);
    let constraint_slope = cfg.mu * 2.0 * (above - below) / n;

    let mut grad = vec![0.0; d];
    for j in 0..d {
        let dd1 = -db[j] * out_free;
        let dd2 = db[j] * in_free;
        let d_out = (-da[j] * d1 - (y - a) * dd1) / (d1 * d1);
        let d_in = (da[j] * d2 - a * dd2) / (d2 * d2);
        grad[j] = d_out - d_in - constraint_slope * db[j];
    }

    if cfg.lambda > 0.0 {
        let small = smallest_columns(&w.theta, cfg.k, &fm.penalizable())?;
        if !small.is_empty() {
            let scale = cfg.lambda / small.len() as f64;
            for j in small {
                let t = w.theta[j];
                let sign = if t > 0.0 {
                    1.0
                } else if t < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[j] -= scale * sign;
            }
        }
    }
    Ok((parts, grad))
}
