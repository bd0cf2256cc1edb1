//! Triple and attribute file parsing, seeded train/dev/test splitting, and
//! observed-set subsampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attributes::{AttrEntry, AttrKey, AttributeTable};
use crate::error::IngestError;
use crate::graph::{AttrTypeId, EntityId, GraphBuilder, Interner, KnowledgeGraph};

pub type Triple = (String, String, String);
pub type AttrRow = (String, String, f64);

/// Iterates `(line_number, fields)` over non-blank, non-comment lines.
fn records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, Vec<String>), IngestError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        Some(Ok((i + 1, line.split('\t').map(str::to_owned).collect())))
    })
}

fn check_fields(line: usize, fields: &[String], expected: usize) -> Result<(), IngestError> {
    if fields.len() != expected {
        return Err(IngestError::Arity {
            line,
            expected,
            found: fields.len(),
        });
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(IngestError::EmptyField { line });
    }
    Ok(())
}

/// Parses `head<TAB>relation<TAB>tail` lines in file order.
pub fn parse_triples<R: BufRead>(reader: R) -> Result<Vec<Triple>, IngestError> {
    records(reader)
        .map(|rec| {
            let (line, mut f) = rec?;
            check_fields(line, &f, 3)?;
            let tail = f.pop().unwrap();
            let relation = f.pop().unwrap();
            let head = f.pop().unwrap();
            Ok((head, relation, tail))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedAttributes {
    pub rows: Vec<AttrRow>,
    /// Rows that overwrote an earlier row with the same `(entity, type)` key.
    pub duplicates: usize,
}

fn parse_value(line: usize, text: &str) -> Result<f64, IngestError> {
    f64::from_str(text.trim())
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::BadNumber {
            line,
            text: text.to_owned(),
        })
}

/// Parses `entity<TAB>attribute_type<TAB>value` lines. A repeated key keeps
/// its first position but takes the last value.
pub fn parse_attributes<R: BufRead>(reader: R) -> Result<ParsedAttributes, IngestError> {
    let mut out = ParsedAttributes::default();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for rec in records(reader) {
        let (line, f) = rec?;
        check_fields(line, &f, 3)?;
        let value = parse_value(line, &f[2])?;
        let key = (f[0].clone(), f[1].clone());
        match index.get(&key) {
            Some(&pos) => {
                out.rows[pos].2 = value;
                out.duplicates += 1;
            }
            None => {
                index.insert(key, out.rows.len());
                let mut f = f;
                f.truncate(2);
                let attr = f.pop().unwrap();
                let entity = f.pop().unwrap();
                out.rows.push((entity, attr, value));
            }
        }
    }
    if out.duplicates > 0 {
        log::warn!("{} duplicate attribute rows; last value kept", out.duplicates);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub dev_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            dev_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, dev: f64, test: f64, seed: u64) -> Result<Self, IngestError> {
        let spec = Self {
            train_frac: train,
            dev_frac: dev,
            test_frac: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.dev_frac, self.test_frac]
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let f = self.fractions();
        let ok = f.iter().all(|x| x.is_finite() && *x > 0.0) && (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(IngestError::BadSplitSpec(f))
        }
    }
}

/// Splits `n` items into integer counts proportional to `fractions`
/// (which sum to one) by largest-remainder rounding. Ties go to the
/// earlier bucket.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| snap_floor(*q)).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

// Floor that treats values within 1e-9 of an integer as that integer.
fn snap_floor(q: f64) -> usize {
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        q.floor().max(0.0) as usize
    }
}

fn snap_ceil(q: f64) -> usize {
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        q.ceil().max(0.0) as usize
    }
}

/// Graph plus ground-truth attribute values, before any split.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub attr_types: Interner,
    pub truth: BTreeMap<AttrKey, f64>,
}

impl Dataset {
    /// Entities named only in the attribute rows become isolated nodes.
    pub fn from_rows<S: AsRef<str>>(triples: &[(S, S, S)], rows: &[AttrRow]) -> Self {
        let mut builder = GraphBuilder::new();
        for (h, r, t) in triples {
            builder.add_triple(h.as_ref(), r.as_ref(), t.as_ref());
        }
        let mut attr_types = Interner::new();
        let mut keyed = Vec::with_capacity(rows.len());
        for (e, a, v) in rows {
            let e = builder.add_entity(e);
            let a = AttrTypeId(attr_types.intern(a));
            keyed.push(((e, a), *v));
        }
        Self {
            graph: builder.build(),
            attr_types,
            truth: keyed.into_iter().collect(),
        }
    }

    pub fn keys_by_type(&self) -> Vec<Vec<AttrKey>> {
        let mut by_type = vec![Vec::new(); self.attr_types.len()];
        for &k in self.truth.keys() {
            by_type[k.1.index()].push(k);
        }
        by_type
    }
}

/// A dataset with a split assignment and the observed/missing status of
/// every attribute slot.
#[derive(Debug, Clone, Default)]
pub struct DatasetBundle {
    pub graph: KnowledgeGraph,
    pub attrs: AttributeTable,
    pub truth: BTreeMap<AttrKey, f64>,
    pub split: BTreeMap<AttrKey, Split>,
}

impl DatasetBundle {
    /// Train entries observed, dev/test entries missing.
    pub fn with_split(dataset: Dataset, split: BTreeMap<AttrKey, Split>) -> Self {
        let mut attrs = AttributeTable::with_types(dataset.attr_types);
        for (&k, &v) in &dataset.truth {
            let entry = match split[&k] {
                Split::Train => AttrEntry::observed(v),
                _ => AttrEntry::missing(),
            };
            attrs.insert(k, entry);
        }
        Self {
            graph: dataset.graph,
            attrs,
            truth: dataset.truth,
            split,
        }
    }

    pub fn split_count(&self, which: Split) -> usize {
        self.split.values().filter(|s| **s == which).count()
    }

    /// Non-observed slots: every propagation target.
    pub fn targets(&self) -> impl Iterator<Item = AttrKey> + '_ {
        self.attrs
            .iter()
            .filter(|(_, e)| !e.is_observed())
            .map(|(k, _)| k)
    }

    /// Slots assigned to `which`, in key order.
    pub fn split_keys(&self, which: Split) -> impl Iterator<Item = AttrKey> + '_ {
        self.split
            .iter()
            .filter(move |(_, s)| **s == which)
            .map(|(k, _)| *k)
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.graph.entity_label(e)
    }

    pub fn type_label(&self, a: AttrTypeId) -> &str {
        self.attrs.type_label(a)
    }
}

/// Seeded split, stratified per attribute type with largest-remainder counts.
pub fn split_attributes(dataset: Dataset, spec: &SplitSpec) -> Result<DatasetBundle, IngestError> {
    spec.validate()?;
    if dataset.truth.is_empty() {
        return Err(IngestError::NoAttributes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = BTreeMap::new();
    for mut keys in dataset.keys_by_type() {
        keys.shuffle(&mut rng);
        let counts = largest_remainder(keys.len(), &spec.fractions());
        for (i, k) in keys.into_iter().enumerate() {
            let label = if i < counts[0] {
                Split::Train
            } else if i < counts[0] + counts[1] {
                Split::Dev
            } else {
                Split::Test
            };
            split.insert(k, label);
        }
    }
    Ok(DatasetBundle::with_split(dataset, split))
}

/// Keeps `⌈fraction · |train of type|⌉` train entries observed per type;
/// the remaining train entries become missing targets. Dev/test entries stay
/// missing. Always resamples from the full train split of `bundle`.
pub fn subsample_observed(
    bundle: &DatasetBundle,
    fraction: f64,
    seed: u64,
) -> Result<DatasetBundle, IngestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::BadFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut by_type: Vec<Vec<AttrKey>> = vec![Vec::new(); bundle.attrs.num_types()];
    for k in bundle.split_keys(Split::Train) {
        by_type[k.1.index()].push(k);
    }
    let mut attrs = AttributeTable::with_types(bundle.attrs.types().clone());
    for (&k, &s) in &bundle.split {
        if s != Split::Train {
            attrs.insert(k, AttrEntry::missing());
        }
    }
    for mut keys in by_type {
        keys.shuffle(&mut rng);
        let keep = snap_ceil(fraction * keys.len() as f64).min(keys.len());
        for (i, k) in keys.into_iter().enumerate() {
            let entry = if i < keep {
                AttrEntry::observed(bundle.truth[&k])
            } else {
                AttrEntry::missing()
            };
            attrs.insert(k, entry);
        }
    }
    Ok(DatasetBundle {
        graph: bundle.graph.clone(),
        attrs,
        truth: bundle.truth.clone(),
        split: bundle.split.clone(),
    })
}

/// Writes `entity<TAB>attribute_type<TAB>{train|dev|test}` in key order.
pub fn write_manifest<W: Write>(bundle: &DatasetBundle, mut out: W) -> std::io::Result<()> {
    for (&(e, a), s) in &bundle.split {
        writeln!(out, "{}\t{}\t{}", bundle.entity_label(e), bundle.type_label(a), s)?;
    }
    out.flush()
}

/// Reads a manifest produced by [`write_manifest`] against `dataset`; every
/// attribute entry must be covered.
pub fn read_manifest<R: BufRead>(
    reader: R,
    dataset: &Dataset,
) -> Result<BTreeMap<AttrKey, Split>, IngestError> {
    let mut split = BTreeMap::new();
    for rec in records(reader) {
        let (line, f) = rec?;
        check_fields(line, &f, 3)?;
        let unknown = || IngestError::UnknownEntry {
            line,
            entity: f[0].clone(),
            attr: f[1].clone(),
        };
        let e = dataset.graph.entity(&f[0]).ok_or_else(unknown)?;
        let a = dataset.attr_types.get(&f[1]).map(AttrTypeId).ok_or_else(unknown)?;
        if !dataset.truth.contains_key(&(e, a)) {
            return Err(unknown());
        }
        let s = f[2].parse().map_err(|_| IngestError::BadSplitLabel {
            line,
            text: f[2].clone(),
        })?;
        split.insert((e, a), s);
    }
    let missing = dataset.truth.len() - split.len();
    if missing > 0 {
        return Err(IngestError::IncompleteManifest { missing });
    }
    Ok(split)
}

/// Hand-assembled bundles for fixtures and synthetic experiments.
///
/// Observed slots are train entries; missing slots are test entries unless
/// given an explicit split.
#[derive(Debug, Default)]
pub struct BundleBuilder {
    graph: GraphBuilder,
    types: Interner,
    slots: Vec<(AttrKey, AttrEntry, f64, Split)>,
}

impl BundleBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        self.graph.add_entity(label)
    }

    pub fn attr_type(&mut self, label: &str) -> AttrTypeId {
        AttrTypeId(self.types.intern(label))
    }

    pub fn edge(&mut self, head: &str, relation: &str, tail: &str) -> &mut Self {
        self.graph.add_triple(head, relation, tail);
        self
    }

    pub fn observed(&mut self, entity: &str, attr: &str, value: f64) -> &mut Self {
        let key = (self.entity(entity), self.attr_type(attr));
        self.slots.push((key, AttrEntry::observed(value), value, Split::Train));
        self
    }

    /// A missing test slot with known ground truth (`NaN` if unknown).
    pub fn missing(&mut self, entity: &str, attr: &str, truth: f64) -> &mut Self {
        self.missing_in(entity, attr, truth, Split::Test)
    }

    pub fn missing_in(&mut self, entity: &str, attr: &str, truth: f64, split: Split) -> &mut Self {
        let key = (self.entity(entity), self.attr_type(attr));
        self.slots.push((key, AttrEntry::missing(), truth, split));
        self
    }

    pub fn build(self) -> DatasetBundle {
        let mut attrs = AttributeTable::with_types(self.types);
        let mut truth = BTreeMap::new();
        let mut split = BTreeMap::new();
        for (k, entry, t, s) in self.slots {
            attrs.insert(k, entry);
            truth.insert(k, t);
            split.insert(k, s);
        }
        DatasetBundle {
            graph: self.graph.build(),
            attrs,
            truth,
            split,
        }
    }
}
