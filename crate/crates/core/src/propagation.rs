//! Synchronous damped message passing over the fitted regression models.
//!
//! Each sweep computes, for every non-observed slot `y_v`, the weighted mean
//! of the predictions arriving from neighbor slots and from other slots of the
//! same entity, then mixes it with the previous value through the damping
//! factor. All reads hit the previous buffer; observed slots are clamped.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::attributes::{AttrKey, AttributeTable};
use crate::error::PropagationError;
use crate::graph::{AttrTypeId, EntityId, KnowledgeGraph, OrientedRelation};
use crate::ingest::DatasetBundle;
use crate::regression::{ModelRegistry, PathFilter, PathKey, RegressionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    /// Per-type mean of the observed values.
    #[default]
    GlobalMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    /// ξ in `(0, 1]`.
    pub damping: f64,
    /// Convergence threshold as a fraction of each type's observed range.
    pub conv_frac: f64,
    pub max_iters: usize,
    pub no_cross: bool,
    pub no_inner: bool,
    pub init_policy: InitPolicy,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            conv_frac: 1e-3,
            max_iters: 200,
            no_cross: false,
            no_inner: false,
            init_policy: InitPolicy::GlobalMean,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(PropagationError::Config(format!("damping {} not in (0, 1]", self.damping)));
        }
        if !(self.conv_frac > 0.0 && self.conv_frac.is_finite()) {
            return Err(PropagationError::Config(format!("conv_frac {} must be positive", self.conv_frac)));
        }
        if self.max_iters == 0 {
            return Err(PropagationError::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn filter(&self) -> PathFilter {
        PathFilter {
            no_cross: self.no_cross,
            no_inner: self.no_inner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub target: AttrKey,
    pub prediction: f64,
    pub weight: f64,
    pub source_key: PathKey,
    pub source_entity: EntityId,
}

/// Weighted, normalized sum of predictions; `None` for an empty list.
pub fn aggregate(messages: &[Message]) -> Option<f64> {
    if messages.is_empty() {
        return None;
    }
    let (num, den) = messages
        .iter()
        .fold((0.0, 0.0), |(n, d), m| (n + m.weight * m.prediction, d + m.weight));
    Some(num / den)
}

#[inline]
pub fn combine(prev: f64, estimate: f64, damping: f64) -> f64 {
    (1.0 - damping) * prev + damping * estimate
}

/// Visits every active path into `target` in a fixed order: adjacency order
/// of the target entity, then the neighbor's slots in type order, then the
/// target entity's own slots for inner paths.
fn for_each_path<F>(
    graph: &KnowledgeGraph,
    attrs: &AttributeTable,
    registry: &ModelRegistry,
    filter: PathFilter,
    target: AttrKey,
    mut visit: F,
) where
    F: FnMut(AttrKey, &RegressionModel),
{
    let (v, y) = target;
    for &(n, o) in graph.incidences(v) {
        for (x, _) in attrs.of_entity(n) {
            let key = PathKey::relational(y, x, o);
            if filter.allows(&key) {
                if let Some(m) = registry.get(&key) {
                    visit((n, x), m);
                }
            }
        }
    }
    for (x, _) in attrs.of_entity(v) {
        if x == y {
            continue;
        }
        let key = PathKey::inner(y, x);
        if filter.allows(&key) {
            if let Some(m) = registry.get(&key) {
                visit((v, x), m);
            }
        }
    }
}

/// Slot values of one iterate, indexed like [`AttributeTable::iter`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    slots: Vec<AttrKey>,
    observed: Vec<bool>,
    pub values: Vec<f64>,
    pub iteration: usize,
    /// Observed range per attribute type.
    pub ranges: Vec<f64>,
    pub last_max_delta: Vec<f64>,
    pub converged: bool,
}

impl PropagationState {
    /// Observed slots take their values; the rest start at their type's
    /// observed mean.
    pub fn initial(attrs: &AttributeTable, policy: InitPolicy) -> Result<Self, PropagationError> {
        let summaries = attrs.summaries();
        let mut slots = Vec::with_capacity(attrs.len());
        let mut observed = Vec::with_capacity(attrs.len());
        let mut values = Vec::with_capacity(attrs.len());
        for (k, e) in attrs.iter() {
            slots.push(k);
            observed.push(e.is_observed());
            if e.is_observed() {
                values.push(e.value);
            } else {
                let InitPolicy::GlobalMean = policy;
                let s = summaries[k.1.index()]
                    .ok_or_else(|| crate::error::AttrError::NoObserved(attrs.type_label(k.1).to_owned()))?;
                values.push(s.mean);
            }
        }
        let ranges = summaries.iter().map(|s| s.map_or(0.0, |s| s.range())).collect();
        Ok(Self {
            slots,
            observed,
            values,
            iteration: 0,
            ranges,
            last_max_delta: vec![0.0; attrs.num_types()],
            converged: false,
        })
    }

    pub fn slots(&self) -> &[AttrKey] {
        &self.slots
    }

    pub fn index_of(&self, key: AttrKey) -> Option<usize> {
        self.slots.binary_search(&key).ok()
    }

    pub fn value(&self, key: AttrKey) -> Option<f64> {
        self.index_of(key).map(|i| self.values[i])
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn to_map(&self) -> BTreeMap<AttrKey, f64> {
        self.slots.iter().copied().zip(self.values.iter().copied()).collect()
    }
}

/// Messages into `target` computed from the values in `state`.
pub fn collect_messages(
    state: &PropagationState,
    bundle: &DatasetBundle,
    registry: &ModelRegistry,
    target: AttrKey,
    cfg: &PropagationConfig,
) -> Vec<Message> {
    let mut out = Vec::new();
    for_each_path(&bundle.graph, &bundle.attrs, registry, cfg.filter(), target, |src, m| {
        let x = state.value(src).expect("source slot is tracked");
        out.push(Message {
            target,
            prediction: m.predict(x),
            weight: m.weight,
            source_key: m.key,
            source_entity: src.0,
        });
    });
    out
}

/// Incoming paths of every slot in compressed-row form.
/// Below this many slots a sweep runs on the calling thread.
const PARALLEL_MIN_SLOTS: usize = 4096;
const PARALLEL_CHUNK: usize = 512;

#[derive(Debug, Clone)]
struct MessagePlan {
    offsets: Vec<usize>,
    source: Vec<usize>,
    eta: Vec<f64>,
    tau: Vec<f64>,
    weight: Vec<f64>,
}

impl MessagePlan {
    fn compile(bundle: &DatasetBundle, registry: &ModelRegistry, filter: PathFilter, state: &PropagationState) -> Self {
        let per_slot: Vec<Vec<(usize, f64, f64, f64)>> = state
            .slots
            .par_iter()
            .map(|&target| {
                let mut list = Vec::new();
                for_each_path(&bundle.graph, &bundle.attrs, registry, filter, target, |src, m| {
                    let s = state.index_of(src).expect("source slot is tracked");
                    list.push((s, m.eta, m.tau, m.weight));
                });
                list
            })
            .collect();
        let total: usize = per_slot.iter().map(Vec::len).sum();
        let mut plan = Self {
            offsets: Vec::with_capacity(per_slot.len() + 1),
            source: Vec::with_capacity(total),
            eta: Vec::with_capacity(total),
            tau: Vec::with_capacity(total),
            weight: Vec::with_capacity(total),
        };
        plan.offsets.push(0);
        for list in per_slot {
            for (s, eta, tau, w) in list {
                plan.source.push(s);
                plan.eta.push(eta);
                plan.tau.push(tau);
                plan.weight.push(w);
            }
            plan.offsets.push(plan.source.len());
        }
        plan
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    fn in_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    fn total_weight(&self, i: usize) -> f64 {
        self.weight[self.range(i)].iter().sum()
    }

    /// Weighted mean of the predictions into slot `i`, in plan order.
    fn aggregate(&self, i: usize, values: &[f64]) -> Option<f64> {
        let r = self.range(i);
        if r.is_empty() {
            return None;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in r {
            let w = self.weight[j];
            num += w * (self.eta[j] * values[self.source[j]] + self.tau[j]);
            den += w;
        }
        Some(num / den)
    }

    fn slot_loss(&self, i: usize, values: &[f64]) -> f64 {
        self.range(i)
            .map(|j| {
                let r = values[i] - (self.eta[j] * values[self.source[j]] + self.tau[j]);
                self.weight[j] * r * r
            })
            .sum()
    }

    fn loss(&self, values: &[f64]) -> f64 {
        if values.len() < PARALLEL_MIN_SLOTS {
            return (0..values.len()).map(|i| self.slot_loss(i, values)).sum();
        }
        let parts: Vec<f64> = (0..values.len())
            .into_par_iter()
            .with_min_len(PARALLEL_CHUNK)
            .map(|i| self.slot_loss(i, values))
            .collect();
        parts.iter().sum()
    }

    fn len(&self) -> usize {
        self.source.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetResult {
    pub key: AttrKey,
    pub value: f64,
    pub n_messages: usize,
    pub total_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub attr: AttrTypeId,
    pub max_delta: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationReport {
    pub iterations: usize,
    pub converged: bool,
    /// Max absolute change per type in the last sweep.
    pub final_deltas: Vec<f64>,
    /// Targets that never received a message and kept their initial value.
    pub unmessaged: usize,
    /// Active paths per sweep.
    pub paths: usize,
    pub targets: Vec<TargetResult>,
    pub trace: Vec<TraceRow>,
}

impl ImputationReport {
    pub fn predictions(&self) -> BTreeMap<AttrKey, f64> {
        self.targets.iter().map(|t| (t.key, t.value)).collect()
    }
}

/// Compiled propagation problem: bundle, registry and config bound to a
/// message plan.
pub struct Propagator<'a> {
    bundle: &'a DatasetBundle,
    registry: &'a ModelRegistry,
    cfg: PropagationConfig,
    initial: PropagationState,
    plan: MessagePlan,
}

impl<'a> Propagator<'a> {
    pub fn new(
        bundle: &'a DatasetBundle,
        registry: &'a ModelRegistry,
        cfg: &PropagationConfig,
    ) -> Result<Self, PropagationError> {
        cfg.validate()?;
        let initial = PropagationState::initial(&bundle.attrs, cfg.init_policy)?;
        let plan = MessagePlan::compile(bundle, registry, cfg.filter(), &initial);
        Ok(Self {
            bundle,
            registry,
            cfg: *cfg,
            initial,
            plan,
        })
    }

    pub fn initial_state(&self) -> &PropagationState {
        &self.initial
    }

    pub fn num_paths(&self) -> usize {
        self.plan.len()
    }

    /// Incoming path count of the slot at `key`.
    pub fn in_degree(&self, key: AttrKey) -> Option<usize> {
        self.initial.index_of(key).map(|i| self.plan.in_degree(i))
    }

    /// Weighted aggregate of the messages into `key` under `state`.
    pub fn aggregate_at(&self, state: &PropagationState, key: AttrKey) -> Option<f64> {
        self.initial.index_of(key).and_then(|i| self.plan.aggregate(i, &state.values))
    }

    /// Σ over every slot and every active path of `w · (y_v − f(x_n))²`.
    pub fn loss(&self, state: &PropagationState) -> f64 {
        self.plan.loss(&state.values)
    }

    /// One synchronous sweep from `state`.
    pub fn step(&self, state: &PropagationState) -> PropagationState {
        let mut next = state.clone();
        self.sweep(&state.values, &mut next.values);
        next.iteration = state.iteration + 1;
        next.last_max_delta = self.deltas(&state.values, &next.values);
        next
    }

    fn sweep(&self, prev: &[f64], next: &mut [f64]) {
        let damping = self.cfg.damping;
        let observed = &self.initial.observed;
        let update = |(i, out): (usize, &mut f64)| {
            *out = if observed[i] {
                prev[i]
            } else {
                match self.plan.aggregate(i, prev) {
                    Some(est) => combine(prev[i], est, damping),
                    None => prev[i],
                }
            };
        };
        if next.len() < PARALLEL_MIN_SLOTS {
            next.iter_mut().enumerate().for_each(update);
        } else {
            next.par_iter_mut().enumerate().with_min_len(PARALLEL_CHUNK).for_each(update);
        }
    }

    fn deltas(&self, prev: &[f64], next: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0f64; self.bundle.attrs.num_types()];
        for (i, &(_, a)) in self.initial.slots.iter().enumerate() {
            let delta = (next[i] - prev[i]).abs();
            let slot = &mut d[a.index()];
            if delta > *slot || delta.is_nan() {
                *slot = delta;
            }
        }
        d
    }

    fn is_converged(&self, deltas: &[f64], ranges: &[f64]) -> bool {
        deltas
            .iter()
            .zip(ranges)
            .all(|(&d, &r)| d == 0.0 || d < self.cfg.conv_frac * r)
    }

    /// Iterates until every type's max change drops below `conv_frac` of its
    /// range, or `max_iters` sweeps have run.
    pub fn run(&self) -> (PropagationState, ImputationReport) {
        let mut state = self.initial.clone();
        let mut scratch = state.values.clone();
        let mut trace = Vec::new();
        for k in 1..=self.cfg.max_iters {
            self.sweep(&state.values, &mut scratch);
            let deltas = self.deltas(&state.values, &scratch);
            std::mem::swap(&mut state.values, &mut scratch);
            state.iteration = k;
            let loss = self.plan.loss(&state.values);
            for (a, &d) in deltas.iter().enumerate() {
                trace.push(TraceRow {
                    iter: k,
                    attr: AttrTypeId(a as u32),
                    max_delta: d,
                    loss,
                });
            }
            state.converged = self.is_converged(&deltas, &state.ranges);
            state.last_max_delta = deltas;
            log::debug!("iteration {k}: loss {loss:.6e}");
            if state.converged {
                break;
            }
        }
        if !state.converged {
            log::warn!("no convergence after {} iterations", self.cfg.max_iters);
        }

        let mut targets = Vec::new();
        let mut unmessaged = 0;
        for (i, &key) in state.slots.iter().enumerate() {
            if state.observed[i] {
                continue;
            }
            let n = self.plan.in_degree(i);
            if n == 0 {
                unmessaged += 1;
            }
            targets.push(TargetResult {
                key,
                value: state.values[i],
                n_messages: n,
                total_weight: self.plan.total_weight(i),
            });
        }
        let report = ImputationReport {
            iterations: state.iteration,
            converged: state.converged,
            final_deltas: state.last_max_delta.clone(),
            unmessaged,
            paths: self.plan.len(),
            targets,
            trace,
        };
        (state, report)
    }

    pub fn bundle(&self) -> &DatasetBundle {
        self.bundle
    }

    pub fn registry(&self) -> &ModelRegistry {
        self.registry
    }
}

/// Runs propagation to convergence or the iteration cap.
pub fn run(
    bundle: &DatasetBundle,
    registry: &ModelRegistry,
    cfg: &PropagationConfig,
) -> Result<(PropagationState, ImputationReport), PropagationError> {
    Ok(Propagator::new(bundle, registry, cfg)?.run())
}

/// Loss of `state` under the active paths of `cfg`.
pub fn loss(
    bundle: &DatasetBundle,
    registry: &ModelRegistry,
    state: &PropagationState,
    cfg: &PropagationConfig,
) -> Result<f64, PropagationError> {
    Ok(Propagator::new(bundle, registry, cfg)?.loss(state))
}

/// Solves the stationarity system `y_v = Σ w·(η·x + τ) / Σ w` directly.
///
/// Unknowns are the non-observed slots with at least one incoming path;
/// observed slots are constants and message-less targets are fixed at their
/// initial value. Paths are enumerated from the edge list rather than the
/// adjacency lists, and the dense system is solved by Gaussian elimination
/// with partial pivoting. Intended for small instances.
pub fn fixed_point_oracle(
    bundle: &DatasetBundle,
    registry: &ModelRegistry,
    cfg: &PropagationConfig,
) -> Result<BTreeMap<AttrKey, f64>, PropagationError> {
    let init = PropagationState::initial(&bundle.attrs, cfg.init_policy)?;
    let filter = cfg.filter();
    let attrs = &bundle.attrs;

    // (target, source, model) triples.
    let mut paths: Vec<(AttrKey, AttrKey, &RegressionModel)> = Vec::new();
    let mut add = |v: EntityId, n: EntityId, o: OrientedRelation| {
        for (y, _) in attrs.of_entity(v) {
            for (x, _) in attrs.of_entity(n) {
                let key = PathKey::relational(y, x, o);
                if let Some(m) = registry.get(&key).filter(|_| filter.allows(&key)) {
                    paths.push(((v, y), (n, x), m));
                }
            }
        }
    };
    for e in bundle.graph.edges() {
        add(e.tail, e.head, OrientedRelation::forward(e.relation));
        add(e.head, e.tail, OrientedRelation::reverse(e.relation));
    }
    for (v, _) in attrs.iter() {
        let (v, y) = v;
        for (x, _) in attrs.of_entity(v) {
            let key = PathKey::inner(y, x);
            if x != y && filter.allows(&key) {
                if let Some(m) = registry.get(&key) {
                    paths.push(((v, y), (v, x), m));
                }
            }
        }
    }

    let mut fixed: BTreeMap<AttrKey, f64> = BTreeMap::new();
    for (i, &k) in init.slots().iter().enumerate() {
        fixed.insert(k, init.values[i]);
    }
    let mut unknown_index: BTreeMap<AttrKey, usize> = BTreeMap::new();
    for &(t, _, _) in &paths {
        if attrs.get(t).is_some_and(|e| !e.is_observed()) {
            let next = unknown_index.len();
            unknown_index.entry(t).or_insert(next);
        }
    }
    let unknowns: Vec<AttrKey> = {
        let mut u = vec![(EntityId(0), AttrTypeId(0)); unknown_index.len()];
        for (&k, &i) in &unknown_index {
            u[i] = k;
        }
        u
    };
    let m = unknowns.len();
    let mut a = vec![vec![0.0f64; m]; m];
    let mut b = vec![0.0f64; m];
    let mut q = vec![0.0f64; m];
    for &(t, s, model) in &paths {
        let Some(&row) = unknown_index.get(&t) else { continue };
        q[row] += model.weight;
        match unknown_index.get(&s) {
            Some(&col) => {
                a[row][col] -= model.weight * model.eta;
                b[row] += model.weight * model.tau;
            }
            None => b[row] += model.weight * model.predict(fixed[&s]),
        }
    }
    for row in 0..m {
        let qr = q[row];
        for c in a[row].iter_mut() {
            *c /= qr;
        }
        a[row][row] += 1.0;
        b[row] /= qr;
    }

    let solution = solve_dense(a, b).map_err(|cols| {
        PropagationError::Singular(
            cols.into_iter()
                .map(|c| {
                    let (e, t) = unknowns[c];
                    format!("{}/{}", bundle.entity_label(e), bundle.type_label(t))
                })
                .collect(),
        )
    })?;
    for (i, k) in unknowns.into_iter().enumerate() {
        fixed.insert(k, solution[i]);
    }
    fixed.retain(|k, _| attrs.get(*k).is_some_and(|e| !e.is_observed()));
    Ok(fixed)
}

/// Gaussian elimination with partial pivoting. On failure returns the
/// columns whose pivots vanished.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, Vec<usize>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut singular = Vec::new();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs().is_nan() || a[pivot][col].abs() <= tol {
            singular.push(col);
            continue;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        perm.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let prow = &upper[col];
        for (off, row) in lower.iter_mut().enumerate() {
            let f = row[col] / prow[col];
            if f != 0.0 {
                for c in col..n {
                    row[c] -= f * prow[c];
                }
                b[col + 1 + off] -= f * b[col];
            }
        }
    }
    if !singular.is_empty() {
        return Err(singular);
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Writes `entity<TAB>attribute_type<TAB>value<TAB>n_messages<TAB>total_weight`
/// for every target.
pub fn write_imputations<W: Write>(bundle: &DatasetBundle, report: &ImputationReport, mut out: W) -> std::io::Result<()> {
    for t in &report.targets {
        writeln!(
            out,
            "{}\t{}\t{:.16e}\t{}\t{:.16e}",
            bundle.entity_label(t.key.0),
            bundle.type_label(t.key.1),
            t.value,
            t.n_messages,
            t.total_weight
        )?;
    }
    out.flush()
}

/// Reads imputation lines back into a prediction map keyed against `bundle`.
pub fn read_imputations<R: std::io::BufRead>(
    reader: R,
    bundle: &DatasetBundle,
) -> Result<BTreeMap<AttrKey, f64>, crate::error::DumpError> {
    use crate::error::DumpError;
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| DumpError::Malformed { line: i + 1, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let e = bundle.graph.entity(f[0]).ok_or_else(|| bad(format!("unknown entity `{}`", f[0])))?;
        let a = bundle.attrs.type_id(f[1]).ok_or_else(|| bad(format!("unknown attribute type `{}`", f[1])))?;
        let v: f64 = f[2].parse().map_err(|_| bad(format!("bad number `{}`", f[2])))?;
        out.insert((e, a), v);
    }
    Ok(out)
}

/// Writes the per-iteration CSV `iter,attr_type,max_delta,loss`.
pub fn write_trace<W: Write>(bundle: &DatasetBundle, report: &ImputationReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,attr_type,max_delta,loss")?;
    for r in &report.trace {
        writeln!(out, "{},{},{:.16e},{:.16e}", r.iter, bundle.type_label(r.attr), r.max_delta, r.loss)?;
    }
    out.flush()
}
