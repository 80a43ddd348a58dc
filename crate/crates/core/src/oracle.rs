//! Exhaustive conjunction search (the brute-force baseline) and a synthetic
//! planted-bias generator.
//!
//! The search walks conjunctions depth-first: attributes in schema order,
//! atoms within an attribute in predicate order, each conjunction extending
//! the previous prefix. Pre-order over that tree is lexicographic order on
//! predicate lists, so keeping the first strictly-better candidate gives the
//! lexicographically smallest argmax.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_number, AttributeKind, AttributeSpec, Dataset, Value};
use crate::error::{Error, Result};
use crate::objective::dscore_from_counts;
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum PredicateForm {
    Equals(String),
    Greater(f64),
    LessEq(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub attribute: String,
    pub form: PredicateForm,
}

impl Predicate {
    pub fn equals(attribute: &str, value: &str) -> Self {
        Predicate {
            attribute: attribute.into(),
            form: PredicateForm::Equals(value.into()),
        }
    }

    pub fn greater(attribute: &str, threshold: f64) -> Self {
        Predicate {
            attribute: attribute.into(),
            form: PredicateForm::Greater(threshold),
        }
    }

    pub fn less_eq(attribute: &str, threshold: f64) -> Self {
        Predicate {
            attribute: attribute.into(),
            form: PredicateForm::LessEq(threshold),
        }
    }

    /// Resolve against `data`'s schema into a row test.
    fn compile(&self, data: &Dataset) -> Result<CompiledPredicate> {
        let a = data
            .attribute_index(&self.attribute)
            .ok_or_else(|| Error::MissingColumn(self.attribute.clone()))?;
        let test = match (&data.schema()[a].kind, &self.form) {
            (AttributeKind::Categorical(vals), PredicateForm::Equals(v)) => {
                let idx = vals.iter().position(|x| x == v).ok_or_else(|| {
                    Error::Precondition(format!("`{}` has no value `{v}`", self.attribute))
                })?;
                Test::Equals(idx)
            }
            (AttributeKind::Continuous, PredicateForm::Greater(t)) => Test::Greater(*t),
            (AttributeKind::Continuous, PredicateForm::LessEq(t)) => Test::LessEq(*t),
            _ => {
                return Err(Error::Precondition(format!(
                    "predicate form does not fit attribute `{}`",
                    self.attribute
                )))
            }
        };
        Ok(CompiledPredicate { attribute: a, test })
    }

    /// Whether row `i` of `data` satisfies the predicate.
    pub fn matches(&self, data: &Dataset, i: usize) -> Result<bool> {
        Ok(self.compile(data)?.matches(&data.rows()[i]))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            PredicateForm::Equals(v) => write!(f, "{} = {}", self.attribute, v),
            PredicateForm::Greater(t) => write!(f, "{} > {}", self.attribute, format_number(*t)),
            PredicateForm::LessEq(t) => write!(f, "{} <= {}", self.attribute, format_number(*t)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Test {
    Equals(usize),
    Greater(f64),
    LessEq(f64),
}

#[derive(Debug, Clone, Copy)]
struct CompiledPredicate {
    attribute: usize,
    test: Test,
}

impl CompiledPredicate {
    fn matches(&self, row: &[Value]) -> bool {
        match (self.test, row[self.attribute]) {
            (Test::Equals(v), Value::Cat(x)) => v == x,
            (Test::Greater(t), Value::Num(x)) => x > t,
            (Test::LessEq(t), Value::Num(x)) => x <= t,
            _ => false,
        }
    }
}

/// Rows satisfying every predicate.
pub fn conjunction_members(data: &Dataset, predicates: &[Predicate]) -> Result<Vec<bool>> {
    let compiled: Vec<CompiledPredicate> = predicates
        .iter()
        .map(|p| p.compile(data))
        .collect::<Result<_>>()?;
    Ok(data
        .rows()
        .iter()
        .map(|row| compiled.iter().all(|c| c.matches(row)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumResult {
    pub predicates: Vec<Predicate>,
    pub members: Vec<bool>,
    /// `None` when no candidate satisfied the size constraint.
    pub dscore: Option<f64>,
    pub explored: u64,
    pub exhausted_budget: bool,
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn from_fn(n: usize, f: impl Fn(usize) -> bool) -> Bits {
        let words = (0..n.div_ceil(64))
            .map(|w| {
                let base = w * 64;
                (base..n.min(base + 64))
                    .rev()
                    .fold(0u64, |word, i| (word << 1) | f(i) as u64)
            })
            .collect();
        Bits(words)
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn count_and(&self, other: &Bits) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

struct Atom {
    predicate: Predicate,
    bits: Bits,
}

/// Atoms per sensitive attribute, in predicate order: one equality per
/// categorical value; `<= t` at every unique value, then `> t` at every
/// unique value.
fn build_atoms(data: &Dataset) -> Vec<Vec<Atom>> {
    let n = data.n();
    let sensitive = data.sensitive_indices();
    let mut columns: Vec<Vec<Value>> = (0..sensitive.len())
        .map(|_| Vec::with_capacity(n))
        .collect();
    for row in data.rows() {
        for (column, &a) in columns.iter_mut().zip(&sensitive) {
            column.push(row[a]);
        }
    }
    sensitive
        .iter()
        .zip(columns)
        .map(|(&a, column)| {
            let attr: &AttributeSpec = &data.schema()[a];
            match &attr.kind {
                AttributeKind::Categorical(vals) => vals
                    .iter()
                    .enumerate()
                    .map(|(v, label)| Atom {
                        predicate: Predicate::equals(&attr.name, label),
                        bits: Bits::from_fn(n, |i| column[i] == Value::Cat(v)),
                    })
                    .collect(),
                AttributeKind::Continuous => {
                    let mut uniq: Vec<f64> = column.iter().map(|v| v.as_num()).collect();
                    uniq.sort_by(f64::total_cmp);
                    uniq.dedup();
                    let leq = uniq.iter().map(|&t| Atom {
                        predicate: Predicate::less_eq(&attr.name, t),
                        bits: Bits::from_fn(n, |i| column[i].as_num() <= t),
                    });
                    let gt = uniq.iter().map(|&t| Atom {
                        predicate: Predicate::greater(&attr.name, t),
                        bits: Bits::from_fn(n, |i| column[i].as_num() > t),
                    });
                    leq.chain(gt).collect()
                }
            }
        })
        .collect()
}

struct Search<'a> {
    atoms: &'a [Vec<Atom>],
    fav: Bits,
    fav_total: usize,
    n: usize,
    k: usize,
    alpha: f64,
    beta: f64,
    deadline: Option<Instant>,
    expired: &'a AtomicBool,
}

#[derive(Default)]
struct Best {
    /// (attribute, atom) path of the best conjunction.
    path: Vec<(usize, usize)>,
    dscore: Option<f64>,
    explored: u64,
}

impl Best {
    fn offer(&mut self, path: &[(usize, usize)], score: f64) {
        if self.dscore.is_none_or(|s| score > s) {
            self.dscore = Some(score);
            self.path = path.to_vec();
        }
    }
}

impl Search<'_> {
    fn out_of_time(&self) -> bool {
        if self.expired.load(AtomicOrdering::Relaxed) {
            return true;
        }
        match self.deadline {
            Some(d) if Instant::now() >= d => {
                self.expired.store(true, AtomicOrdering::Relaxed);
                true
            }
            _ => false,
        }
    }

    fn evaluate(&self, bits: &Bits, path: &[(usize, usize)], best: &mut Best) {
        best.explored += 1;
        let size = bits.count();
        if size == 0 || size == self.n {
            return;
        }
        let ratio = size as f64 / self.n as f64;
        if ratio < self.alpha || ratio > self.beta {
            return;
        }
        let fav_in = bits.count_and(&self.fav);
        best.offer(
            path,
            dscore_from_counts(self.fav_total, fav_in, self.n, size),
        );
    }

    /// Evaluate `path` and every extension by attributes after the last one.
    fn descend(&self, bits: &Bits, path: &mut Vec<(usize, usize)>, best: &mut Best) -> bool {
        if self.out_of_time() {
            return false;
        }
        self.evaluate(bits, path, best);
        if path.len() == self.k {
            return true;
        }
        let next = path.last().map_or(0, |&(a, _)| a + 1);
        for a in next..self.atoms.len() {
            for (t, atom) in self.atoms[a].iter().enumerate() {
                path.push((a, t));
                let ok = self.descend(&bits.and(&atom.bits), path, best);
                path.pop();
                if !ok {
                    return false;
                }
            }
        }
        true
    }
}

pub fn enum_search(
    data: &Dataset,
    k: usize,
    alpha: f64,
    beta: f64,
    time_budget_secs: f64,
) -> Result<EnumResult> {
    enum_search_with(data, k, alpha, beta, time_budget_secs, Exec::default())
}

/// `time_budget_secs <= 0` or infinite means no budget.
pub fn enum_search_with(
    data: &Dataset,
    k: usize,
    alpha: f64,
    beta: f64,
    time_budget_secs: f64,
    exec: Exec,
) -> Result<EnumResult> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if data.sensitive_indices().is_empty() {
        return Err(Error::Precondition("no sensitive attributes".into()));
    }
    let start = Instant::now();
    let atoms = build_atoms(data);
    let n = data.n();
    let fav = Bits::from_fn(n, |i| data.fav()[i]);
    let expired = AtomicBool::new(false);
    let deadline = (time_budget_secs > 0.0 && time_budget_secs.is_finite())
        .then(|| start + Duration::from_secs_f64(time_budget_secs));
    let search = Search {
        atoms: &atoms,
        fav_total: fav.count(),
        fav,
        n,
        k,
        alpha,
        beta,
        deadline,
        expired: &expired,
    };

    // One task per first atom; tasks are reduced in order, so earlier
    // (lexicographically smaller) conjunctions win ties.
    let roots: Vec<(usize, usize)> = atoms
        .iter()
        .enumerate()
        .flat_map(|(a, list)| (0..list.len()).map(move |t| (a, t)))
        .collect();
    let results = par::map_indices(exec, roots.len(), |r| {
        let (a, t) = roots[r];
        let mut best = Best::default();
        let mut path = vec![(a, t)];
        search.descend(&atoms[a][t].bits, &mut path, &mut best);
        best
    });
    let mut best = Best::default();
    for part in results {
        best.explored += part.explored;
        if let Some(s) = part.dscore {
            best.offer(&part.path, s);
        }
    }

    let predicates: Vec<Predicate> = best
        .path
        .iter()
        .map(|&(a, t)| atoms[a][t].predicate.clone())
        .collect();
    let members = if predicates.is_empty() {
        vec![false; n]
    } else {
        conjunction_members(data, &predicates)?
    };
    Ok(EnumResult {
        predicates,
        members,
        dscore: best.dscore,
        explored: best.explored,
        exhausted_budget: expired.load(AtomicOrdering::Relaxed),
    })
}

/// Number of conjunctions the search visits without a budget.
pub fn candidate_count(data: &Dataset, k: usize) -> u64 {
    let sizes: Vec<u64> = build_atoms(data).iter().map(|a| a.len() as u64).collect();
    // elementary symmetric sums e_1..e_k of the atom counts
    let mut e = vec![0u64; k + 1];
    e[0] = 1;
    for s in sizes {
        for j in (1..=k).rev() {
            e[j] += e[j - 1] * s;
        }
    }
    e[1..].iter().sum()
}

/// Synthetic dataset with a planted conjunctive group.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: Dataset,
    pub planted_mask: Vec<bool>,
    /// Seed that produced the accepted draw.
    pub seed: u64,
}

/// Binary attributes are named `b0, b1, ...` with values `"0"`/`"1"`;
/// continuous attributes `c0, c1, ...` are uniform on [0, 1].
pub fn synthetic_schema(n_binary: usize, n_continuous: usize) -> Vec<AttributeSpec> {
    (0..n_binary)
        .map(|i| AttributeSpec::categorical(format!("b{i}"), &["0", "1"]))
        .chain((0..n_continuous).map(|i| AttributeSpec::continuous(format!("c{i}"))))
        .collect()
}

pub fn plant_synthetic(
    n: usize,
    n_binary: usize,
    n_continuous: usize,
    planted: &[Predicate],
    rate_in: f64,
    rate_out: f64,
    seed: u64,
) -> Result<Synthetic> {
    if !(0.0 <= rate_in && rate_in < rate_out && rate_out <= 1.0) {
        return Err(Error::Precondition(format!(
            "need 0 <= rate_in < rate_out <= 1, got {rate_in} and {rate_out}"
        )));
    }
    if n < 2 {
        return Err(Error::Precondition("need at least two rows".into()));
    }
    let schema = synthetic_schema(n_binary, n_continuous);
    // validate predicates against the schema with a throwaway two-row dataset
    let probe_rows = vec![
        schema
            .iter()
            .map(|a| if a.is_continuous() {
                Value::Num(0.0)
            } else {
                Value::Cat(0)
            })
            .collect::<Vec<_>>();
        2
    ];
    let probe = Dataset::new(schema.clone(), probe_rows, vec![false, true])?;
    let compiled: Vec<CompiledPredicate> = planted
        .iter()
        .map(|p| p.compile(&probe))
        .collect::<Result<_>>()?;

    const ATTEMPTS: u64 = 100;
    for attempt in 0..ATTEMPTS {
        let draw_seed = seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let mut rows = Vec::with_capacity(n);
        let mut fav = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row: Vec<Value> = Vec::with_capacity(n_binary + n_continuous);
            for _ in 0..n_binary {
                row.push(Value::Cat(rng.random_range(0..2)));
            }
            for _ in 0..n_continuous {
                row.push(Value::Num(rng.random::<f64>()));
            }
            let inside = compiled.iter().all(|c| c.matches(&row));
            let rate = if inside { rate_in } else { rate_out };
            fav.push(rng.random::<f64>() < rate);
            mask.push(inside);
            rows.push(row);
        }
        let size = mask.iter().filter(|&&m| m).count();
        if size == 0 || size == n {
            continue;
        }
        return Ok(Synthetic {
            data: Dataset::new(schema, rows, fav)?,
            planted_mask: mask,
            seed: draw_seed,
        });
    }
    Err(Error::EmptyPlantedGroup(ATTEMPTS as usize))
}
