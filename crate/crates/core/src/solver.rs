//! Penalty-method gradient ascent on the soft objective, top-k truncation,
//! and derivation of the key attributes and the discriminated group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnInfo, FeatureMatrix};
use crate::error::{Error, Result};
use crate::objective::{self, dscore_hard, membership_with, ObjectiveConfig, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub clip_norm: f64,
    pub penalty_rounds: usize,
    pub mu_init: f64,
    pub mu_growth: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            learning_rate: 0.1,
            iterations: 2500,
            clip_norm: 5.0,
            penalty_rounds: 5,
            mu_init: 1.0,
            mu_growth: 10.0,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.learning_rate,
            self.clip_norm,
            self.mu_init,
            self.mu_growth,
            self.init_scale,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(
                "learning rate, clip norm, mu schedule and init scale must be positive".into(),
            ));
        }
        if self.iterations == 0 || self.penalty_rounds == 0 {
            return Err(Error::Config(
                "iterations and penalty rounds must be positive".into(),
            ));
        }
        if !self.iterations.is_multiple_of(self.penalty_rounds) {
            return Err(Error::Config(format!(
                "iterations ({}) must be divisible by penalty rounds ({})",
                self.iterations, self.penalty_rounds
            )));
        }
        Ok(())
    }
}

/// How `k` is counted when truncating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMode {
    /// k distinct source attributes (all their columns kept).
    #[default]
    Attributes,
    /// k encoded columns.
    Columns,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub weights: Weights,
    /// Penalized objective before each step.
    pub trace: Vec<f64>,
}

/// Scale `g` down to `clip_norm` iff its 2-norm exceeds it.
pub fn clip_gradient(g: &mut [f64], clip_norm: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        g.iter_mut().for_each(|v| *v *= scale);
    }
}

pub fn initial_weights(d: usize, solver: &SolverConfig) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(solver.seed);
    let normal = Normal::new(0.0, solver.init_scale).expect("init scale validated");
    Weights {
        theta: (0..d).map(|_| normal.sample(&mut rng)).collect(),
    }
}

pub fn optimize(
    fav: &[bool],
    fm: &FeatureMatrix,
    obj: &ObjectiveConfig,
    solver: &SolverConfig,
) -> Result<Optimized> {
    solver.validate()?;
    obj.validate(fm.penalizable().iter().filter(|&&p| p).count())?;
    if fm.d() == 0 {
        return Err(Error::Config("feature matrix has no columns".into()));
    }
    let mut w = initial_weights(fm.d(), solver);
    let per_round = solver.iterations / solver.penalty_rounds;
    let mut cfg = *obj;
    let mut trace = Vec::with_capacity(solver.iterations);
    let mut mu = solver.mu_init;
    for round in 0..solver.penalty_rounds {
        cfg.mu = mu;
        for step in 0..per_round {
            let iteration = round * per_round + step;
            let (parts, mut g) = objective::value_and_gradient(fav, fm, &w, &cfg)?;
            if !parts.value.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective {
                    iteration,
                    theta: w.theta.clone(),
                });
            }
            trace.push(parts.value);
            clip_gradient(&mut g, solver.clip_norm);
            for (t, gj) in w.theta.iter_mut().zip(&g) {
                *t += solver.learning_rate * gj;
            }
        }
        mu *= solver.mu_growth;
    }
    Ok(Optimized { weights: w, trace })
}

/// Zero every penalizable column outside the top `k` (attributes or columns,
/// per `mode`). Ranking is by |theta| descending, ties to the lower column.
/// The intercept is never touched.
pub fn truncate_topk(w: &Weights, k: usize, colmap: &[ColumnInfo], mode: KMode) -> Weights {
    let mut ranked: Vec<usize> = (0..w.d())
        .filter(|&j| colmap[j].is_penalizable() && w.theta[j] != 0.0)
        .collect();
    ranked.sort_by(|&i, &j| {
        w.theta[j]
            .abs()
            .total_cmp(&w.theta[i].abs())
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; w.d()];
    match mode {
        KMode::Columns => {
            for &j in ranked.iter().take(k) {
                keep[j] = true;
            }
        }
        KMode::Attributes => {
            let mut chosen: Vec<usize> = Vec::new();
            for &j in &ranked {
                let a = colmap[j]
                    .attribute
                    .expect("penalizable column has an attribute");
                if !chosen.contains(&a) {
                    if chosen.len() == k {
                        break;
                    }
                    chosen.push(a);
                }
            }
            for (j, info) in colmap.iter().enumerate() {
                if matches!(info.attribute, Some(a) if chosen.contains(&a)) {
                    keep[j] = true;
                }
            }
        }
    }
    Weights {
        theta: (0..w.d())
            .map(|j| {
                if !colmap[j].is_penalizable() || keep[j] {
                    w.theta[j]
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Key attributes, discriminated group and score derived from truncated weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub members: Vec<bool>,
    pub key_attributes: Vec<String>,
    /// Schema indices matching `key_attributes`.
    pub key_attribute_indices: Vec<usize>,
    pub theta_star: Weights,
    /// Weights before truncation.
    pub theta_raw: Weights,
    /// Hard score; `None` when the group or its complement is empty.
    pub dscore: Option<f64>,
    pub size_ratio: f64,
    pub constraint_ok: bool,
    pub trace: Vec<f64>,
}

impl Evidence {
    pub fn group_size(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

pub fn derive_evidence(
    fav: &[bool],
    fm: &FeatureMatrix,
    w_truncated: &Weights,
    obj: &ObjectiveConfig,
) -> Result<Evidence> {
    let sg = membership_with(fm, w_truncated, obj.exec)?;
    let members: Vec<bool> = sg.p.iter().map(|&p| p >= 0.5).collect();

    // (attribute, max |theta|) in first-seen column order
    let mut owners: Vec<(usize, String, f64)> = Vec::new();
    for (j, info) in fm.colmap().iter().enumerate() {
        let (Some(a), t) = (info.attribute, w_truncated.theta[j].abs()) else {
            continue;
        };
        if t == 0.0 {
            continue;
        }
        match owners.iter_mut().find(|o| o.0 == a) {
            Some(o) => o.2 = o.2.max(t),
            None => owners.push((a, info.attribute_name.clone(), t)),
        }
    }
    owners.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)));

    let n = members.len();
    let size = members.iter().filter(|&&m| m).count();
    let size_ratio = size as f64 / n as f64;
    let dscore = dscore_hard(fav, &members).ok();
    let constraint_ok = dscore.is_some() && obj.size_ok(size_ratio);
    Ok(Evidence {
        members,
        key_attribute_indices: owners.iter().map(|o| o.0).collect(),
        key_attributes: owners.into_iter().map(|o| o.1).collect(),
        theta_star: w_truncated.clone(),
        theta_raw: w_truncated.clone(),
        dscore,
        size_ratio,
        constraint_ok,
        trace: Vec::new(),
    })
}

/// Optimize, truncate and derive in one call.
pub fn find_evidence(
    fav: &[bool],
    fm: &FeatureMatrix,
    obj: &ObjectiveConfig,
    solver: &SolverConfig,
    k_mode: KMode,
) -> Result<Evidence> {
    let opt = optimize(fav, fm, obj, solver)?;
    let truncated = truncate_topk(&opt.weights, obj.k, fm.colmap(), k_mode);
    let mut ev = derive_evidence(fav, fm, &truncated, obj)?;
    ev.theta_raw = opt.weights;
    ev.trace = opt.trace;
    Ok(ev)
}

/// Prefer constraint-satisfying evidence, then higher score; `false` on a
/// full tie so earlier candidates are kept.
pub fn better(a: &Evidence, b: &Evidence) -> bool {
    let score = |e: &Evidence| e.dscore.unwrap_or(f64::NEG_INFINITY);
    match (a.constraint_ok, b.constraint_ok) {
        (true, false) => true,
        (false, true) => false,
        _ => score(a) > score(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, AttributeSpec, ColumnSource, Dataset, Value};

    fn colmap_distinct(d: usize) -> Vec<ColumnInfo> {
        (0..d)
            .map(|j| ColumnInfo {
                attribute: Some(j),
                attribute_name: format!("a{j}"),
                source: ColumnSource::Continuous {
                    mean: 0.0,
                    std: 1.0,
                },
            })
            .collect()
    }

    #[test]
    fn clipping_rescales_to_norm() {
        let mut g = vec![30.0, 40.0];
        clip_gradient(&mut g, 5.0);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((g[0] - 3.0).abs() < 1e-12);
        let mut small = vec![0.3, 0.4];
        clip_gradient(&mut small, 5.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn truncate_per_column() {
        let w = Weights::new(vec![3.0, -2.0, 0.5, 0.1]).unwrap();
        let t = truncate_topk(&w, 2, &colmap_distinct(4), KMode::Attributes);
        assert_eq!(t.theta, vec![3.0, -2.0, 0.0, 0.0]);
        let t = truncate_topk(&w, 2, &colmap_distinct(4), KMode::Columns);
        assert_eq!(t.theta, vec![3.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn truncate_groups_columns_by_attribute() {
        // attribute 0 owns columns 0 and 2, attribute 1 owns column 1, attribute 2 column 3
        let mut colmap = colmap_distinct(4);
        colmap[2].attribute = Some(0);
        colmap[1].attribute = Some(1);
        colmap[3].attribute = Some(2);
        let w = Weights::new(vec![4.0, 2.0, 1.0, 0.5]).unwrap();
        let t = truncate_topk(&w, 1, &colmap, KMode::Attributes);
        assert_eq!(t.theta, vec![4.0, 0.0, 1.0, 0.0]);
        let t = truncate_topk(&w, 1, &colmap, KMode::Columns);
        assert_eq!(t.theta, vec![4.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn truncate_keeps_intercept_and_zero_vector() {
        let mut colmap = colmap_distinct(3);
        colmap[2].attribute = None;
        let w = Weights::new(vec![0.2, 0.1, -3.0]).unwrap();
        let t = truncate_topk(&w, 1, &colmap, KMode::Attributes);
        assert_eq!(t.theta, vec![0.2, 0.0, -3.0]);
        let z = Weights::zeros(3);
        assert_eq!(truncate_topk(&z, 1, &colmap, KMode::Attributes), z);
    }

    fn marital_fixture() -> (Dataset, FeatureMatrix) {
        let schema = vec![
            AttributeSpec::categorical("marital-status", &["married", "unmarried"]),
            AttributeSpec::continuous("age"),
        ];
        let rows: Vec<Vec<Value>> = (0..8)
            .map(|i| vec![Value::Cat(i % 2), Value::Num(20.0 + i as f64)])
            .collect();
        let fav = (0..8).map(|i| i % 2 == 0).collect();
        let data = Dataset::new(schema, rows, fav).unwrap();
        let fm = encode(&data, true);
        (data, fm)
    }

    #[test]
    fn key_attributes_come_from_nonzero_columns() {
        let (data, fm) = marital_fixture();
        // columns: married, unmarried, age, intercept
        let w = Weights::new(vec![-2.0, 2.0, 0.0, 0.0]).unwrap();
        let obj = ObjectiveConfig {
            alpha: 0.1,
            beta: 0.9,
            ..ObjectiveConfig::default()
        };
        let ev = derive_evidence(data.fav(), &fm, &w, &obj).unwrap();
        assert_eq!(ev.key_attributes, vec!["marital-status".to_string()]);
        assert_eq!(ev.key_attribute_indices, vec![0]);
        assert_eq!(ev.dscore, Some(1.0));
        assert!(ev.constraint_ok);
        assert_eq!(ev.size_ratio, 0.5);
    }

    #[test]
    fn half_probability_is_a_member_and_degenerate_group_flags() {
        let (data, _) = marital_fixture();
        let fm = encode(&data, false);
        let w = Weights::zeros(fm.d());
        let ev = derive_evidence(data.fav(), &fm, &w, &ObjectiveConfig::default()).unwrap();
        assert!(ev.members.iter().all(|&m| m));
        assert_eq!(ev.dscore, None);
        assert!(!ev.constraint_ok);
        assert!(ev.key_attributes.is_empty());
    }

    #[test]
    fn optimize_is_deterministic() {
        let (data, fm) = marital_fixture();
        let obj = ObjectiveConfig {
            k: 1,
            alpha: 0.1,
            beta: 0.9,
            ..ObjectiveConfig::default()
        };
        let solver = SolverConfig {
            iterations: 100,
            seed: 7,
            ..SolverConfig::default()
        };
        let a = optimize(data.fav(), &fm, &obj, &solver).unwrap();
        let b = optimize(data.fav(), &fm, &obj, &solver).unwrap();
        let bits = |w: &Weights| w.theta.iter().map(|t| t.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.weights), bits(&b.weights));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 100);
    }

    #[test]
    fn first_step_is_clipped() {
        // one step with a tiny clip norm moves theta by exactly lr * clip
        let (data, fm) = marital_fixture();
        let obj = ObjectiveConfig {
            k: 1,
            alpha: 0.1,
            beta: 0.9,
            ..ObjectiveConfig::default()
        };
        let solver = SolverConfig {
            iterations: 1,
            penalty_rounds: 1,
            clip_norm: 1e-3,
            ..SolverConfig::default()
        };
        let start = initial_weights(fm.d(), &solver);
        let end = optimize(data.fav(), &fm, &obj, &solver).unwrap().weights;
        let step: f64 = start
            .theta
            .iter()
            .zip(&end.theta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((step - 1e-4).abs() < 1e-12, "{step}");
    }

    #[test]
    fn solver_config_validation() {
        let bad = SolverConfig {
            iterations: 2501,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }
}
