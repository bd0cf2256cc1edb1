//! Pairwise simple linear regression models along message paths.
//!
//! A model predicts a dependent attribute `y` at a node from an independent
//! attribute `x`, either at a neighbor reached through an oriented relation
//! or at the same node (an inner model). Models are fitted once, on observed
//! values only, in the stored edge direction; reverse-direction models are
//! derived analytically from the forward fit and never refitted.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::attributes::AttributeTable;
use crate::error::{DumpError, RegressionError};
use crate::graph::{AttrTypeId, Direction, EntityId, KnowledgeGraph, OrientedRelation, RelationId};
use crate::ingest::DatasetBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    Relational(OrientedRelation),
    Inner,
}

/// Identifies the regression function `f^{y|x}` for a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathKey {
    pub dep: AttrTypeId,
    pub indep: AttrTypeId,
    pub link: Link,
}

impl PathKey {
    pub fn relational(dep: AttrTypeId, indep: AttrTypeId, link: OrientedRelation) -> Self {
        Self {
            dep,
            indep,
            link: Link::Relational(link),
        }
    }

    pub fn inner(dep: AttrTypeId, indep: AttrTypeId) -> Self {
        Self {
            dep,
            indep,
            link: Link::Inner,
        }
    }

    /// The key predicting `x` from `y` along the opposite orientation.
    pub fn reversed(self) -> Self {
        Self {
            dep: self.indep,
            indep: self.dep,
            link: match self.link {
                Link::Relational(o) => Link::Relational(o.reversed()),
                Link::Inner => Link::Inner,
            },
        }
    }

    pub fn is_cross(&self) -> bool {
        self.dep != self.indep
    }
}

/// Message filters used by the ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathFilter {
    /// Keep only same-type relational paths.
    pub no_cross: bool,
    pub no_inner: bool,
}

impl PathFilter {
    pub fn allows(&self, key: &PathKey) -> bool {
        match key.link {
            Link::Inner => !self.no_inner && !self.no_cross,
            Link::Relational(_) => !(self.no_cross && key.is_cross()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub support: usize,
    pub mu_x: f64,
    pub mu_y: f64,
    pub r2: f64,
    pub derived_reverse: bool,
}

/// Closed-form least-squares estimate for `y = η·x + τ + ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub eta: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub summary: FitSummary,
}

/// Fits `y = η·x + τ` to `(y, x)` pairs.
///
/// `η = Σ(y−μʸ)(x−μˣ) / Σ(x−μˣ)²`, `τ = mean(y − η·x)`, and
/// `σ² = mean((y − η·x − τ)²)`. `r² = 1 − σ²/var(y)`, clamped to `[0, 1]`
/// and defined as 1 when `y` is constant.
pub fn fit_simple_regression(pairs: &[(f64, f64)]) -> Result<LinearFit, RegressionError> {
    let n = pairs.len();
    if n < 2 {
        return Err(RegressionError::InsufficientSupport(n));
    }
    let nf = n as f64;
    let mu_y = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mu_x = pairs.iter().map(|p| p.1).sum::<f64>() / nf;

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let mut x_abs_max = 0.0f64;
    for &(y, x) in pairs {
        let (dx, dy) = (x - mu_x, y - mu_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        x_abs_max = x_abs_max.max(x.abs());
    }
    let noise = 4.0 * f64::EPSILON * x_abs_max;
    if sxx <= nf * noise * noise {
        return Err(RegressionError::DegenerateRegressor);
    }
    let eta = sxy / sxx;
    let tau = pairs.iter().map(|&(y, x)| y - eta * x).sum::<f64>() / nf;
    let sigma2 = pairs
        .iter()
        .map(|&(y, x)| {
            let r = y - eta * x - tau;
            r * r
        })
        .sum::<f64>()
        / nf;
    let var_y = syy / nf;
    let r2 = if var_y == 0.0 {
        1.0
    } else {
        (1.0 - sigma2 / var_y).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        eta,
        tau,
        sigma2,
        summary: FitSummary {
            support: n,
            mu_x,
            mu_y,
            r2,
            derived_reverse: false,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionModel {
    pub key: PathKey,
    pub eta: f64,
    pub tau: f64,
    pub sigma2: f64,
    /// `1/σ²`.
    pub weight: f64,
    pub fit: FitSummary,
}

impl RegressionModel {
    /// Wraps a fit, flooring the error variance at `var_floor`.
    pub fn from_fit(key: PathKey, fit: &LinearFit, var_floor: f64) -> Self {
        let sigma2 = fit.sigma2.max(var_floor).max(MIN_VARIANCE);
        Self {
            key,
            eta: fit.eta,
            tau: fit.tau,
            sigma2,
            weight: 1.0 / sigma2,
            fit: fit.summary,
        }
    }

    #[inline]
    pub fn predict(&self, x: f64) -> f64 {
        self.eta * x + self.tau
    }

    /// Inverts the affine model: `η′ = 1/η`, `τ′ = −τ/η`, `σ′² = σ²/η²`
    /// (so `w′ = η²/σ²`).
    pub fn derive_reverse(&self, eta_min: f64) -> Result<Self, RegressionError> {
        let eta = self.eta;
        if !(eta.abs() >= eta_min && eta != 0.0 && eta.is_finite()) {
            return Err(RegressionError::NonInvertibleSlope { eta, eta_min });
        }
        let sigma2 = self.sigma2 / (eta * eta);
        Ok(Self {
            key: self.key.reversed(),
            eta: 1.0 / eta,
            tau: -self.tau / eta,
            sigma2,
            weight: eta * eta / self.sigma2,
            fit: FitSummary {
                support: self.fit.support,
                mu_x: self.fit.mu_y,
                mu_y: self.fit.mu_x,
                r2: self.fit.r2,
                derived_reverse: !self.fit.derived_reverse,
            },
        })
    }
}

const MIN_VARIANCE: f64 = 1e-150;

/// `(y, x)` training pairs for `key`, over observed values only.
///
/// Relational keys yield one pair per edge `(v, n)` with `r(v, n)` equal to the
/// key's orientation, in edge order. Inner keys yield one pair per entity
/// holding both attributes, in entity order.
pub fn extract_pairs(graph: &KnowledgeGraph, attrs: &AttributeTable, key: &PathKey) -> Vec<(f64, f64)> {
    match key.link {
        Link::Relational(o) => graph
            .edges()
            .iter()
            .filter(|e| e.relation == o.relation)
            .filter_map(|e| {
                let (v, n) = match o.direction {
                    Direction::Forward => (e.tail, e.head),
                    Direction::Reverse => (e.head, e.tail),
                };
                Some((attrs.observed_value((v, key.dep))?, attrs.observed_value((n, key.indep))?))
            })
            .collect(),
        Link::Inner => (0..graph.num_entities() as u32)
            .map(EntityId)
            .filter_map(|v| Some((attrs.observed_value((v, key.dep))?, attrs.observed_value((v, key.indep))?)))
            .collect(),
    }
}

/// Which side of a link an exclusion rule applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExclusionScope {
    /// Every link, inner and relational.
    Any,
    Inner,
    /// Relational links of this relation type, both orientations.
    Relation(String),
}

/// Blocks models between two attribute types, in either order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionRule {
    pub a: String,
    pub b: String,
    pub scope: ExclusionScope,
}

impl FromStr for ExclusionRule {
    type Err = String;

    /// `attrA,attrB` or `attrA,attrB,relation` where relation may be `INNER`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(2..=3).contains(&parts.len()) || parts.iter().any(|p| p.is_empty()) {
            return Err(format!("bad exclusion `{s}`: expected attrA,attrB[,relation]"));
        }
        let scope = match parts.get(2) {
            None => ExclusionScope::Any,
            Some(&"INNER") => ExclusionScope::Inner,
            Some(r) => ExclusionScope::Relation((*r).to_owned()),
        };
        Ok(Self {
            a: parts[0].to_owned(),
            b: parts[1].to_owned(),
            scope,
        })
    }
}

impl fmt::Display for ExclusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.a, self.b)?;
        match &self.scope {
            ExclusionScope::Any => Ok(()),
            ExclusionScope::Inner => write!(f, ",INNER"),
            ExclusionScope::Relation(r) => write!(f, ",{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionConfig {
    pub min_support: usize,
    pub r2_min: f64,
    pub exclusions: Vec<ExclusionRule>,
    /// `η_min = eta_min_factor · range(dep) / range(indep)`.
    pub eta_min_factor: f64,
    /// `σ²` floor as a multiple of `range(dep)²`.
    pub var_floor_factor: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        Self {
            min_support: 5,
            r2_min: 0.0,
            exclusions: Vec::new(),
            eta_min_factor: 1e-9,
            var_floor_factor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    Excluded,
    InsufficientSupport,
    DegenerateRegressor,
    LowR2,
    NonInvertibleSlope,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::Excluded => "excluded",
            Rejection::InsufficientSupport => "insufficient_support",
            Rejection::DegenerateRegressor => "degenerate_regressor",
            Rejection::LowR2 => "low_r2",
            Rejection::NonInvertibleSlope => "non_invertible_slope",
        }
    }
}

/// Frozen lookup from path key to admitted model.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<PathKey, RegressionModel>,
    config: AdmissionConfig,
    rejections: BTreeMap<Rejection, usize>,
}

impl ModelRegistry {
    pub fn from_models(models: impl IntoIterator<Item = RegressionModel>, config: AdmissionConfig) -> Self {
        Self {
            models: models.into_iter().map(|m| (m.key, m)).collect(),
            config,
            rejections: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn get(&self, key: &PathKey) -> Option<&RegressionModel> {
        self.models.get(key)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = &RegressionModel> {
        self.models.values()
    }

    pub fn config(&self) -> &AdmissionConfig {
        &self.config
    }

    pub fn rejections(&self) -> &BTreeMap<Rejection, usize> {
        &self.rejections
    }

    pub fn fitted_count(&self) -> usize {
        self.models.values().filter(|m| !m.fit.derived_reverse).count()
    }

    /// Writes one tab-separated line per model in key order; floats carry 17
    /// significant digits.
    pub fn write_dump<W: Write>(&self, bundle: &DatasetBundle, mut out: W) -> std::io::Result<()> {
        for m in self.models.values() {
            let (rel, dir) = match m.key.link {
                Link::Inner => ("INNER", "-"),
                Link::Relational(o) => (
                    bundle.graph.relation_label(o.relation),
                    match o.direction {
                        Direction::Forward => "forward",
                        Direction::Reverse => "reverse",
                    },
                ),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{}\t{:.16e}\t{}",
                bundle.type_label(m.key.dep),
                bundle.type_label(m.key.indep),
                rel,
                dir,
                m.eta,
                m.tau,
                m.sigma2,
                m.weight,
                m.fit.support,
                m.fit.r2,
                m.fit.derived_reverse
            )?;
        }
        out.flush()
    }

    /// Reloads a dump written by [`ModelRegistry::write_dump`]. Means of the
    /// training pairs are not serialized and come back as `NaN`.
    pub fn read_dump<R: BufRead>(
        reader: R,
        bundle: &DatasetBundle,
        config: AdmissionConfig,
    ) -> Result<Self, DumpError> {
        let mut models = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let bad = |msg: String| DumpError::Malformed { line: lineno, msg };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 11 {
                return Err(bad(format!("expected 11 fields, found {}", f.len())));
            }
            let attr = |s: &str| bundle.attrs.type_id(s).ok_or_else(|| bad(format!("unknown attribute type `{s}`")));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            let (dep, indep) = (attr(f[0])?, attr(f[1])?);
            let link = if f[2] == "INNER" {
                Link::Inner
            } else {
                let relation: RelationId = bundle
                    .graph
                    .relation(f[2])
                    .ok_or_else(|| bad(format!("unknown relation `{}`", f[2])))?;
                match f[3] {
                    "forward" => Link::Relational(OrientedRelation::forward(relation)),
                    "reverse" => Link::Relational(OrientedRelation::reverse(relation)),
                    d => return Err(bad(format!("bad direction `{d}`"))),
                }
            };
            models.push(RegressionModel {
                key: PathKey { dep, indep, link },
                eta: num(f[4])?,
                tau: num(f[5])?,
                sigma2: num(f[6])?,
                weight: num(f[7])?,
                fit: FitSummary {
                    support: f[8].parse().map_err(|_| bad(format!("bad support `{}`", f[8])))?,
                    mu_x: f64::NAN,
                    mu_y: f64::NAN,
                    r2: num(f[9])?,
                    derived_reverse: f[10].parse().map_err(|_| bad(format!("bad flag `{}`", f[10])))?,
                },
            });
        }
        Ok(Self::from_models(models, config))
    }
}

fn is_excluded(rule: &ExclusionRule, key: &PathKey, graph: &KnowledgeGraph, attrs: &AttributeTable) -> bool {
    let (dep, indep) = (attrs.type_label(key.dep), attrs.type_label(key.indep));
    let pair = (dep == rule.a && indep == rule.b) || (dep == rule.b && indep == rule.a);
    pair && match (&rule.scope, key.link) {
        (ExclusionScope::Any, _) => true,
        (ExclusionScope::Inner, Link::Inner) => true,
        (ExclusionScope::Relation(r), Link::Relational(o)) => graph.relation_label(o.relation) == r,
        _ => false,
    }
}

/// Training pairs for every candidate canonical key in one sweep.
///
/// Relational candidates are forward keys; inner candidates are `(a|b)` with
/// `a < b`. Pair order per key matches [`extract_pairs`].
fn collect_candidate_pairs(graph: &KnowledgeGraph, attrs: &AttributeTable) -> BTreeMap<PathKey, Vec<(f64, f64)>> {
    let observed: Vec<Vec<(AttrTypeId, f64)>> = (0..graph.num_entities() as u32)
        .map(|v| {
            attrs
                .of_entity(EntityId(v))
                .filter(|(_, e)| e.is_observed())
                .map(|(a, e)| (a, e.value))
                .collect()
        })
        .collect();

    let mut pairs: HashMap<PathKey, Vec<(f64, f64)>> = HashMap::new();
    for e in graph.edges() {
        let link = OrientedRelation::forward(e.relation);
        for &(y, yv) in &observed[e.tail.index()] {
            for &(x, xv) in &observed[e.head.index()] {
                pairs.entry(PathKey::relational(y, x, link)).or_default().push((yv, xv));
            }
        }
    }
    for slots in &observed {
        for (i, &(a, av)) in slots.iter().enumerate() {
            for &(b, bv) in &slots[i + 1..] {
                pairs.entry(PathKey::inner(a, b)).or_default().push((av, bv));
            }
        }
    }
    pairs.into_iter().collect()
}

/// Fits every canonical key, applies the admission filters, and derives
/// reverse models.
pub fn build_registry(bundle: &DatasetBundle, config: &AdmissionConfig) -> ModelRegistry {
    let graph = &bundle.graph;
    let attrs = &bundle.attrs;
    let ranges: Vec<f64> = attrs
        .summaries()
        .iter()
        .map(|s| s.map_or(0.0, |s| s.range()))
        .collect();

    let mut models = BTreeMap::new();
    let mut rejections: BTreeMap<Rejection, usize> = BTreeMap::new();
    let mut reject = |r: Rejection| *rejections.entry(r).or_default() += 1;

    for (key, pairs) in collect_candidate_pairs(graph, attrs) {
        if config.exclusions.iter().any(|r| is_excluded(r, &key, graph, attrs)) {
            reject(Rejection::Excluded);
            continue;
        }
        let fit = match fit_simple_regression(&pairs) {
            Ok(f) => f,
            Err(RegressionError::InsufficientSupport(_)) => {
                reject(Rejection::InsufficientSupport);
                continue;
            }
            Err(_) => {
                reject(Rejection::DegenerateRegressor);
                continue;
            }
        };
        if fit.summary.support < config.min_support {
            reject(Rejection::InsufficientSupport);
            continue;
        }
        if fit.summary.r2 < config.r2_min {
            reject(Rejection::LowR2);
            continue;
        }
        let (dep_range, indep_range) = (ranges[key.dep.index()], ranges[key.indep.index()]);
        let forward = RegressionModel::from_fit(key, &fit, config.var_floor_factor * dep_range * dep_range);
        let eta_min = if indep_range > 0.0 {
            config.eta_min_factor * dep_range / indep_range
        } else {
            f64::INFINITY
        };
        match forward.derive_reverse(eta_min) {
            Ok(rev) => {
                models.insert(rev.key, rev);
            }
            Err(_) => reject(Rejection::NonInvertibleSlope),
        }
        models.insert(key, forward);
    }
    ModelRegistry {
        models,
        config: config.clone(),
        rejections,
    }
}

/// Number of `(source slot, model)` combinations carrying one message per
/// iteration, over every tracked slot as a target.
pub fn count_paths(graph: &KnowledgeGraph, registry: &ModelRegistry, attrs: &AttributeTable) -> usize {
    count_paths_filtered(graph, registry, attrs, PathFilter::default())
}

pub fn count_paths_filtered(
    graph: &KnowledgeGraph,
    registry: &ModelRegistry,
    attrs: &AttributeTable,
    filter: PathFilter,
) -> usize {
    let slots: Vec<Vec<AttrTypeId>> = (0..graph.num_entities() as u32)
        .map(|v| attrs.of_entity(EntityId(v)).map(|(a, _)| a).collect())
        .collect();
    let active = |key: PathKey| filter.allows(&key) && registry.get(&key).is_some();
    let mut count = 0;
    for v in 0..graph.num_entities() {
        for &y in &slots[v] {
            for &(n, o) in graph.incidences(EntityId(v as u32)) {
                count += slots[n.index()]
                    .iter()
                    .filter(|&&x| active(PathKey::relational(y, x, o)))
                    .count();
            }
            count += slots[v]
                .iter()
                .filter(|&&x| x != y && active(PathKey::inner(y, x)))
                .count();
        }
    }
    count
}
