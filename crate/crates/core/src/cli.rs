//! Pipeline orchestration, flags, report assembly and artifact writing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{encode, load_csv, ColumnKind, ColumnSource, Dataset};
use crate::distill::{default_min_leaf, translate, NodeKind, PrunedTree, Rule};
use crate::error::{Error, Result};
use crate::objective::{dscore_hard, ObjectiveConfig};
use crate::oracle::{enum_search_with, EnumResult, Predicate};
use crate::par::{self, Exec};
use crate::solver::{better, find_evidence, Evidence, KMode, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ie,
    IeDt,
    Enum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Text,
    Dot,
}

/// Audit a model's predictions for the most-discriminated subgroup.
///
/// Defaults for k, alpha, beta and lambda (5, 0.45, 0.55, 1) are case-study
/// settings, not universal recommendations.
#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "fairprobe", version)]
pub struct RunConfig {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Column holding the model's prediction.
    #[arg(long)]
    pub fav_column: String,
    /// Prediction value that counts as favorable.
    #[arg(long)]
    pub fav_value: String,
    /// Sensitive attribute (repeatable); default: every attribute.
    #[arg(long = "sensitive")]
    pub sensitive: Vec<String>,
    /// Treat a column as categorical even if numeric (repeatable).
    #[arg(long = "categorical")]
    pub categorical: Vec<String>,
    /// Treat a column as continuous (repeatable).
    #[arg(long = "continuous")]
    pub continuous: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Count k in encoded columns instead of source attributes.
    #[arg(long)]
    pub k_columns: bool,
    #[arg(long, default_value_t = 0.45)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.55)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = Mode::IeDt)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent seeds; the best constraint-satisfying result is kept.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long = "lr", default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long = "iters", default_value_t = 2500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 5)]
    pub penalty_rounds: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mu_init: f64,
    #[arg(long, default_value_t = 10.0)]
    pub mu_growth: f64,
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
    /// Omit the unpenalized intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// Minimum rows per tree leaf; default max(5, n/200).
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Time budget for the exhaustive search, in seconds.
    #[arg(long, default_value_t = 5000.0)]
    pub time_budget: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Extra artifacts (repeatable): text writes rules.txt, dot writes tree.dot.
    #[arg(long = "format", value_enum)]
    pub formats: Vec<Format>,
}

impl RunConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            ..ObjectiveConfig::default()
        }
    }

    pub fn solver(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            clip_norm: self.clip_norm,
            penalty_rounds: self.penalty_rounds,
            mu_init: self.mu_init,
            mu_growth: self.mu_growth,
            seed,
            init_scale: self.init_scale,
        }
    }

    pub fn k_mode(&self) -> KMode {
        if self.k_columns {
            KMode::Columns
        } else {
            KMode::Attributes
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("--k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha)
            || !(0.0..=1.0).contains(&self.beta)
            || self.alpha > self.beta
        {
            return Err(Error::Config("need 0 <= alpha <= beta <= 1".into()));
        }
        self.solver(self.seed).validate()
    }

    fn hints(&self) -> Result<HashMap<String, ColumnKind>> {
        let mut hints = HashMap::new();
        for c in &self.categorical {
            hints.insert(c.clone(), ColumnKind::Categorical);
        }
        for c in &self.continuous {
            if hints.insert(c.clone(), ColumnKind::Continuous).is_some() {
                return Err(Error::Config(format!(
                    "`{c}` is hinted both categorical and continuous"
                )));
            }
        }
        Ok(hints)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub attribute: String,
    /// Category label, or "(continuous)".
    pub column: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IeBlock {
    pub seed: u64,
    pub key_attributes: Vec<String>,
    pub dscore: Option<f64>,
    pub size_ratio: f64,
    pub group_size: usize,
    pub constraint_ok: bool,
    /// Non-zero weights of the truncated solution.
    pub theta: Vec<WeightEntry>,
    pub intercept: Option<f64>,
    pub final_objective: Option<f64>,
    /// Sorted row indices of the group.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IeDtBlock {
    pub rules: Vec<Rule>,
    pub dscore_prime: Option<f64>,
    pub size_ratio: f64,
    pub group_size: usize,
    pub constraint_ok: bool,
    pub depth: usize,
    pub psi: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumBlock {
    pub predicates: Vec<Predicate>,
    pub rule: String,
    pub dscore: Option<f64>,
    pub size_ratio: f64,
    pub explored: u64,
    pub exhausted_budget: bool,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub dataset_fingerprint: String,
    pub n: usize,
    pub favorable_rate: f64,
    pub sensitive: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub ie_secs: Option<f64>,
    pub distill_secs: Option<f64>,
    pub enum_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub meta: RunMeta,
    pub ie: Option<IeBlock>,
    pub ie_dt: Option<IeDtBlock>,
    #[serde(rename = "enum")]
    pub enumeration: Option<EnumBlock>,
    pub warnings: Vec<String>,
    /// Wall-clock measurements; the only non-deterministic part of a report.
    pub timing: Timing,
}

impl EvidenceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Only constraint-violating (or no) evidence was found.
    Warning,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Warning => 2,
        }
    }
}

pub struct RunOutput {
    pub report: EvidenceReport,
    pub status: Status,
    pub evidence: Option<Evidence>,
    pub pruned: Option<PrunedTree>,
    pub enum_result: Option<EnumResult>,
    pub written: Vec<PathBuf>,
}

pub fn member_indices(members: &[bool]) -> Vec<usize> {
    members
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

fn ratio(members: &[bool]) -> f64 {
    members.iter().filter(|&&m| m).count() as f64 / members.len() as f64
}

/// Run the selected mode on an already-loaded dataset; no files are written.
pub fn audit(data: &Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let obj = cfg.objective();
    let mut timing = Timing::default();
    let mut warnings = Vec::new();
    let mut ok = true;
    let fav = data.fav();
    let mut evidence = None;
    let mut pruned = None;
    let mut enum_result = None;
    let mut ie_block = None;
    let mut dt_block = None;
    let mut enum_block = None;

    if matches!(cfg.mode, Mode::Ie | Mode::IeDt) {
        let t = Instant::now();
        let fm = encode(data, !cfg.no_intercept);
        let seeds: Vec<u64> = (0..cfg.seeds as u64)
            .map(|s| cfg.seed.wrapping_add(s))
            .collect();
        let runs = par::map_indices(Exec::default(), seeds.len(), |s| {
            find_evidence(fav, &fm, &obj, &cfg.solver(seeds[s]), cfg.k_mode())
        });
        let mut best: Option<(u64, Evidence)> = None;
        for (seed, run) in seeds.iter().zip(runs) {
            let ev = run?;
            if best.as_ref().is_none_or(|(_, b)| better(&ev, b)) {
                best = Some((*seed, ev));
            }
        }
        let (seed, ev) = best.expect("at least one seed");
        timing.ie_secs = Some(t.elapsed().as_secs_f64());
        if !ev.constraint_ok {
            ok = false;
            warnings.push(format!(
                "no seed produced a group within [{}, {}] (best size ratio {:.4})",
                cfg.alpha, cfg.beta, ev.size_ratio
            ));
        }
        let mut theta = Vec::new();
        let mut intercept = None;
        for (j, info) in fm.colmap().iter().enumerate() {
            let w = ev.theta_star.theta[j];
            match &info.source {
                ColumnSource::Intercept => intercept = Some(w),
                _ if w == 0.0 => {}
                ColumnSource::OneHot { label, .. } => theta.push(WeightEntry {
                    attribute: info.attribute_name.clone(),
                    column: label.clone(),
                    weight: w,
                }),
                ColumnSource::Continuous { .. } => theta.push(WeightEntry {
                    attribute: info.attribute_name.clone(),
                    column: "(continuous)".into(),
                    weight: w,
                }),
            }
        }
        ie_block = Some(IeBlock {
            seed,
            key_attributes: ev.key_attributes.clone(),
            dscore: ev.dscore,
            size_ratio: ev.size_ratio,
            group_size: ev.group_size(),
            constraint_ok: ev.constraint_ok,
            theta,
            intercept,
            final_objective: ev.trace.last().copied(),
            members: member_indices(&ev.members),
        });

        if cfg.mode == Mode::IeDt {
            let t = Instant::now();
            let min_leaf = cfg.min_leaf.unwrap_or_else(|| default_min_leaf(data.n()));
            match translate(fav, &fm, &ev, &obj, min_leaf) {
                Ok(pt) => {
                    if !pt.constraint_ok {
                        ok = false;
                        warnings
                            .push("the unpruned tree already violates the size constraint".into());
                    }
                    dt_block = Some(IeDtBlock {
                        rules: pt.rules.clone(),
                        dscore_prime: pt.dscore_prime,
                        size_ratio: pt.size_ratio,
                        group_size: pt.members_prime.iter().filter(|&&m| m).count(),
                        constraint_ok: pt.constraint_ok,
                        depth: pt.depth(),
                        psi: pt.psi,
                        members: member_indices(&pt.members_prime),
                    });
                    pruned = Some(pt);
                }
                Err(e @ (Error::NoKeyAttributes | Error::Precondition(_))) => {
                    ok = false;
                    warnings.push(format!("tree distillation skipped: {e}"));
                }
                Err(e) => return Err(e),
            }
            timing.distill_secs = Some(t.elapsed().as_secs_f64());
        }
        evidence = Some(ev);
    }

    if cfg.mode == Mode::Enum {
        let t = Instant::now();
        let r = enum_search_with(
            data,
            cfg.k,
            cfg.alpha,
            cfg.beta,
            cfg.time_budget,
            Exec::default(),
        )?;
        timing.enum_secs = Some(t.elapsed().as_secs_f64());
        if r.dscore.is_none() {
            ok = false;
            warnings.push("no conjunction satisfies the size constraint".into());
        }
        if r.exhausted_budget {
            warnings.push("time budget exhausted; result is best-so-far".into());
        }
        enum_block = Some(EnumBlock {
            rule: r
                .predicates
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(" AND "),
            predicates: r.predicates.clone(),
            dscore: r.dscore,
            size_ratio: ratio(&r.members),
            explored: r.explored,
            exhausted_budget: r.exhausted_budget,
            members: member_indices(&r.members),
        });
        enum_result = Some(r);
    }

    timing.total_secs = started.elapsed().as_secs_f64();
    let fav_total = fav.iter().filter(|&&f| f).count();
    let report = EvidenceReport {
        meta: RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_fingerprint: data.fingerprint(),
            n: data.n(),
            favorable_rate: fav_total as f64 / data.n() as f64,
            sensitive: data
                .sensitive_indices()
                .iter()
                .map(|&a| data.schema()[a].name.clone())
                .collect(),
            config: cfg.clone(),
        },
        ie: ie_block,
        ie_dt: dt_block,
        enumeration: enum_block,
        warnings,
        timing,
    };
    Ok(RunOutput {
        report,
        status: if ok { Status::Ok } else { Status::Warning },
        evidence,
        pruned,
        enum_result,
        written: Vec::new(),
    })
}

pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    let data = load_csv(&cfg.input, &cfg.hints()?, &cfg.fav_column, &cfg.fav_value)?;
    if cfg.sensitive.is_empty() {
        Ok(data)
    } else {
        data.with_sensitive(&cfg.sensitive)
    }
}

/// Load, audit and write `report.json` plus any requested artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let data = load(cfg)?;
    let mut out = audit(&data, cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.clone(),
        source,
    })?;
    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let path = cfg.out.join(name);
        std::fs::write(&path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    out.written
        .push(write("report.json", &out.report.to_json()?)?);
    if cfg.formats.contains(&Format::Text) {
        out.written
            .push(write("rules.txt", &render_text(&out.report))?);
    }
    if cfg.formats.contains(&Format::Dot) {
        match &out.pruned {
            Some(pt) => out.written.push(write("tree.dot", &emit_dot(pt))?),
            None => out
                .report
                .warnings
                .push("tree.dot requested but no tree was distilled".into()),
        }
    }
    Ok(out)
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Human-readable summary written to `rules.txt`.
pub fn render_text(report: &EvidenceReport) -> String {
    let mut s = String::new();
    let m = &report.meta;
    let _ = writeln!(s, "dataset {} ({} rows)", m.dataset_fingerprint, m.n);
    let _ = writeln!(s, "overall favorable rate {:.4}", m.favorable_rate);
    let _ = writeln!(
        s,
        "k = {}, alpha = {}, beta = {}, lambda = {}",
        m.config.k, m.config.alpha, m.config.beta, m.config.lambda
    );
    if let Some(ie) = &report.ie {
        let _ = writeln!(s, "\n# key attributes and discriminated group");
        let _ = writeln!(s, "key attributes: {}", ie.key_attributes.join(", "));
        let _ = writeln!(
            s,
            "discrimination score {} on {} rows (ratio {:.4}){}",
            fmt_score(ie.dscore),
            ie.group_size,
            ie.size_ratio,
            if ie.constraint_ok {
                ""
            } else {
                " [size constraint violated]"
            }
        );
    }
    if let Some(dt) = &report.ie_dt {
        let _ = writeln!(s, "\n# decision rules");
        let _ = writeln!(
            s,
            "discrimination score {} on {} rows (ratio {:.4}), depth {}, psi {:.6}",
            fmt_score(dt.dscore_prime),
            dt.group_size,
            dt.size_ratio,
            dt.depth,
            dt.psi
        );
        for rule in &dt.rules {
            let _ = writeln!(s, "{rule}");
        }
    }
    if let Some(e) = &report.enumeration {
        let _ = writeln!(s, "\n# exhaustive search");
        let _ = writeln!(
            s,
            "best conjunction: {}",
            if e.rule.is_empty() { "(none)" } else { &e.rule }
        );
        let _ = writeln!(
            s,
            "discrimination score {} (ratio {:.4}), {} candidates{}",
            fmt_score(e.dscore),
            e.size_ratio,
            e.explored,
            if e.exhausted_budget {
                ", budget exhausted"
            } else {
                ""
            }
        );
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering of a pruned tree. Split nodes show the test for the
/// right-hand ("yes") branch; leaves show label, support, member fraction
/// and favorable rate.
pub fn emit_dot(pt: &PrunedTree) -> String {
    let mut s = String::from("digraph evidence {\n");
    s.push_str("  node [shape=box, fontname=\"Helvetica\"];\n");
    for id in 0..pt.tree.nodes().len() {
        let node = pt.tree.node(id);
        match node.kind {
            NodeKind::Split {
                column,
                threshold,
                left,
                right,
            } => {
                let test = crate::distill::branch_predicate(&pt.colmap[column], threshold, true);
                let _ = writeln!(s, "  n{id} [label=\"{}\"];", dot_escape(&test.to_string()));
                let _ = writeln!(s, "  n{id} -> n{left} [label=\"no\"];");
                let _ = writeln!(s, "  n{id} -> n{right} [label=\"yes\"];");
            }
            NodeKind::Leaf => {
                let st = node.stats;
                let (label, color) = if st.label() {
                    ("discriminated", "mistyrose")
                } else {
                    ("not discriminated", "honeydew")
                };
                let _ = writeln!(
                    s,
                    "  n{id} [label=\"{label}\\nsupport {}\\nmember fraction {:.2}\\nfavorable rate {:.2}\", style=filled, fillcolor={color}];",
                    st.count,
                    st.member_rate(),
                    st.fav_rate()
                );
            }
        }
    }
    s.push_str("}\n");
    s
}

/// Recompute the hard score of a stored member-index list.
pub fn rescore(fav: &[bool], members: &[usize]) -> Result<f64> {
    let mut mask = vec![false; fav.len()];
    for &i in members {
        *mask.get_mut(i).ok_or(Error::RowOutOfRange {
            index: i,
            n: fav.len(),
        })? = true;
    }
    dscore_hard(fav, &mask)
}

/// Entry point used by the binary: parse, run, report, exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cfg) {
        Ok(out) => {
            for w in &out.report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &out.written {
                println!("wrote {}", display_path(p));
            }
            out.status.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e} (input {})", display_path(&cfg.input));
            1
        }
    }
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}
