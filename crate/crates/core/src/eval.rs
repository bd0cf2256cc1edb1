//! Mean-imputation baselines, per-type MAE/RMSE, ablations and residual
//! diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::attributes::AttrKey;
use crate::error::{AttrError, PropagationError};
use crate::graph::AttrTypeId;
use crate::ingest::{DatasetBundle, Split};
use crate::propagation::{self, PropagationConfig};
use crate::regression::{extract_pairs, ModelRegistry, PathKey};

pub type Predictions = BTreeMap<AttrKey, f64>;

fn type_means(bundle: &DatasetBundle) -> Vec<Option<f64>> {
    bundle.attrs.summaries().iter().map(|s| s.map(|s| s.mean)).collect()
}

/// Every target takes the mean of the observed values of its type.
pub fn baseline_global(bundle: &DatasetBundle) -> Result<Predictions, AttrError> {
    let means = type_means(bundle);
    bundle
        .targets()
        .map(|k| {
            means[k.1.index()]
                .map(|m| (k, m))
                .ok_or_else(|| AttrError::NoObserved(bundle.type_label(k.1).to_owned()))
        })
        .collect()
}

/// Every target takes the mean of observed same-type values over its
/// distinct neighbors, ignoring relation type and direction; falls back to
/// the global mean when no neighbor has one.
pub fn baseline_local(bundle: &DatasetBundle) -> Result<Predictions, AttrError> {
    let global = baseline_global(bundle)?;
    let mut out = Predictions::new();
    for (k, g) in global {
        let (v, a) = k;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut last = None;
        for &(n, _) in bundle.graph.incidences(v) {
            if last == Some(n) {
                continue;
            }
            last = Some(n);
            if let Some(x) = bundle.attrs.observed_value((n, a)) {
                sum += x;
                count += 1;
            }
        }
        out.insert(k, if count > 0 { sum / count as f64 } else { g });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub attr: AttrTypeId,
    pub attr_label: String,
    pub mae: f64,
    pub rmse: f64,
    pub n_test: usize,
    pub n_unpredicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub setup: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, attr_label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.attr_label == attr_label)
    }
}

/// Per-type MAE and RMSE over the slots assigned to `split`.
///
/// Targets absent from `predictions` are counted and scored at the global
/// mean of their type. Types with no slots in `split` are omitted.
pub fn evaluate(
    predictions: &Predictions,
    truth: &DatasetBundle,
    split: Split,
    method: &str,
    setup: &str,
) -> Result<EvalReport, AttrError> {
    let means = type_means(truth);
    let mut acc: Vec<(f64, f64, usize, usize)> = vec![(0.0, 0.0, 0, 0); truth.attrs.num_types()];
    for k in truth.split_keys(split) {
        let slot = &mut acc[k.1.index()];
        let pred = match predictions.get(&k) {
            Some(&p) => p,
            None => {
                slot.3 += 1;
                means[k.1.index()].ok_or_else(|| AttrError::NoObserved(truth.type_label(k.1).to_owned()))?
            }
        };
        let err = pred - truth.truth[&k];
        slot.0 += err.abs();
        slot.1 += err * err;
        slot.2 += 1;
    }
    let mut rows = Vec::new();
    for (a, (abs, sq, n, unpred)) in acc.into_iter().enumerate() {
        let attr = AttrTypeId(a as u32);
        if n == 0 {
            log::warn!("no {split} entries for `{}`; omitted from report", truth.type_label(attr));
            continue;
        }
        let mae = abs / n as f64;
        let rmse = (sq / n as f64).sqrt().max(mae);
        rows.push(EvalRow {
            attr,
            attr_label: truth.type_label(attr).to_owned(),
            mae,
            rmse,
            n_test: n,
            n_unpredicted: unpred,
        });
    }
    Ok(EvalReport {
        method: method.to_owned(),
        setup: setup.to_owned(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub report: EvalReport,
    pub paths: usize,
    pub converged: bool,
}

/// Full model, without inner paths, and without cross-type paths, on the
/// same bundle and registry.
pub fn ablation_suite(
    bundle: &DatasetBundle,
    registry: &ModelRegistry,
    cfg: &PropagationConfig,
    split: Split,
    setup: &str,
) -> Result<Vec<AblationRun>, PropagationError> {
    let variants = [
        ("MrAP", false, false),
        ("w/o Inner", false, true),
        ("w/o Cross", true, false),
    ];
    variants
        .iter()
        .map(|&(name, no_cross, no_inner)| {
            let cfg = PropagationConfig {
                no_cross,
                no_inner,
                ..*cfg
            };
            let (_, report) = propagation::run(bundle, registry, &cfg)?;
            Ok(AblationRun {
                report: evaluate(&report.predictions(), bundle, split, name, setup)?,
                paths: report.paths,
                converged: report.converged,
            })
        })
        .collect()
}

/// `y − x` over a key's training pairs with a fitted normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Differences {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Differences `y_v − x_n` over the observed training pairs of `key`.
pub fn export_differences(bundle: &DatasetBundle, key: &PathKey) -> Differences {
    let values: Vec<f64> = extract_pairs(&bundle.graph, &bundle.attrs, key)
        .into_iter()
        .map(|(y, x)| y - x)
        .collect();
    if values.is_empty() {
        log::warn!("no training pairs for the requested key");
        return Differences {
            values,
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Differences { values, mean, std }
}

/// CSV `method,setup,attr_type,mae,rmse,n_test,n_unpredicted`.
pub fn write_report_csv<W: Write>(reports: &[EvalReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "method,setup,attr_type,mae,rmse,n_test,n_unpredicted")?;
    for r in reports {
        for row in &r.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{}",
                r.method, r.setup, row.attr_label, row.mae, row.rmse, row.n_test, row.n_unpredicted
            )?;
        }
    }
    out.flush()
}

/// Aligned text table: one line per attribute type, MAE and RMSE per method.
///
/// With `best_of_baselines`, a `Local/Global` column shows the better of the
/// `Local` and `Global` reports, marked `*` where `Global` wins.
pub fn format_table(reports: &[EvalReport], best_of_baselines: bool) -> String {
    let mut attrs: Vec<&str> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !attrs.contains(&row.attr_label.as_str()) {
                attrs.push(&row.attr_label);
            }
        }
    }
    let find = |m: &str| reports.iter().find(|r| r.method == m);
    let (local, global) = (find("Local"), find("Global"));
    let combined = best_of_baselines && local.is_some() && global.is_some();

    let mut columns: Vec<String> = Vec::new();
    if combined {
        columns.push("Local/Global".into());
    }
    columns.extend(reports.iter().map(|r| r.method.clone()));

    let cell = |r: Option<&EvalRow>| r.map_or_else(|| "-".to_owned(), |r| format!("{:.2}/{:.2}", r.mae, r.rmse));
    let mut lines: Vec<Vec<String>> = Vec::new();
    for a in &attrs {
        let mut line = vec![a.to_string()];
        if combined {
            let (l, g) = (local.unwrap().row(a), global.unwrap().row(a));
            line.push(match (l, g) {
                (Some(l), Some(g)) if g.mae < l.mae => format!("{}*", cell(Some(g))),
                (Some(l), _) => cell(Some(l)),
                (None, g) => cell(g),
            });
        }
        for r in reports {
            line.push(cell(r.row(a)));
        }
        lines.push(line);
    }

    let setup = reports.first().map_or("", |r| r.setup.as_str());
    let mut header = vec![format!("attribute ({setup})")];
    header.extend(columns);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].len())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    let render = |s: &mut String, cells: &[String]| {
        for (c, text) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{:<w$}", text, w = widths[c]);
            } else {
                let _ = write!(s, "  {:>w$}", text, w = widths[c]);
            }
        }
        s.push('\n');
    };
    render(&mut s, &header);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1));
    s.push_str(&"-".repeat(rule));
    s.push('\n');
    for l in &lines {
        render(&mut s, l);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{OrientedRelation, RelationId};
    use crate::ingest::BundleBuilder;

    #[test]
    fn global_examples() {
        let mut b = BundleBuilder::new();
        b.observed("a", "x", 10.0).observed("b", "x", 20.0).missing("c", "x", 0.0);
        let bundle = b.build();
        let g = baseline_global(&bundle).unwrap();
        assert_eq!(g.values().copied().collect::<Vec<_>>(), vec![15.0]);

        let mut b = BundleBuilder::new();
        b.observed("a", "x", 7.0).missing("c", "x", 0.0).missing("d", "x", 0.0);
        let g = baseline_global(&b.build()).unwrap();
        assert!(g.values().all(|&v| v == 7.0));
    }

    #[test]
    fn global_without_observed_fails() {
        let mut b = BundleBuilder::new();
        b.missing("c", "area", 0.0);
        assert_eq!(baseline_global(&b.build()), Err(AttrError::NoObserved("area".into())));
    }

    #[test]
    fn local_examples() {
        let mut b = BundleBuilder::new();
        b.edge("n1", "p", "v")
            .edge("v", "q", "n2")
            .edge("v", "r", "n2")
            .observed("n1", "x", 8.0)
            .observed("n2", "x", 12.0)
            .missing("v", "x", 0.0)
            .missing("lonely", "x", 0.0)
            .edge("w", "p", "n3")
            .observed("n3", "x", 42.0)
            .missing("w", "x", 0.0);
        let bundle = b.build();
        let l = baseline_local(&bundle).unwrap();
        let key = |e: &str| (bundle.graph.entity(e).unwrap(), bundle.attrs.type_id("x").unwrap());
        // n2 is linked twice but counted once.
        assert_eq!(l[&key("v")], 10.0);
        assert_eq!(l[&key("w")], 42.0);
        assert_eq!(l[&key("lonely")], (8.0 + 12.0 + 42.0) / 3.0);
    }

    #[test]
    fn evaluate_examples() {
        let mut b = BundleBuilder::new();
        b.observed("o", "x", 0.0).missing("a", "x", 2.0).missing("b", "x", 4.0);
        let bundle = b.build();
        let key = |e: &str| (bundle.graph.entity(e).unwrap(), AttrTypeId(0));
        let preds: Predictions = [(key("a"), 1.0), (key("b"), 2.0)].into_iter().collect();
        let r = evaluate(&preds, &bundle, Split::Test, "m", "100%").unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].mae, 1.5);
        assert!((r.rows[0].rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.rows[0].n_test, 2);

        let perfect: Predictions = [(key("a"), 2.0), (key("b"), 4.0)].into_iter().collect();
        let r = evaluate(&perfect, &bundle, Split::Test, "m", "100%").unwrap();
        assert_eq!((r.rows[0].mae, r.rows[0].rmse), (0.0, 0.0));

        // A missing prediction is scored at the global mean (0.0 here).
        let partial: Predictions = [(key("a"), 2.0)].into_iter().collect();
        let r = evaluate(&partial, &bundle, Split::Test, "m", "100%").unwrap();
        assert_eq!(r.rows[0].n_unpredicted, 1);
        assert_eq!(r.rows[0].mae, 2.0);

        // Empty split omits the type.
        let r = evaluate(&perfect, &bundle, Split::Dev, "m", "100%").unwrap();
        assert!(r.rows.is_empty());
    }

    #[test]
    fn differences_constant_shift() {
        let mut b = BundleBuilder::new();
        for i in 0..5 {
            b.edge(&format!("p{i}"), "directed", &format!("f{i}"));
            b.observed(&format!("p{i}"), "birth", 1900.0 + i as f64);
            b.observed(&format!("f{i}"), "release", 1925.0 + i as f64);
        }
        let bundle = b.build();
        let key = PathKey::relational(
            bundle.attrs.type_id("release").unwrap(),
            bundle.attrs.type_id("birth").unwrap(),
            OrientedRelation::forward(RelationId(0)),
        );
        let d = export_differences(&bundle, &key);
        assert_eq!(d.values, vec![25.0; 5]);
        assert_eq!((d.mean, d.std), (25.0, 0.0));

        let reversed = export_differences(&bundle, &key.reversed());
        assert_eq!(reversed.values, vec![-25.0; 5]);

        let empty = export_differences(&bundle, &PathKey::inner(key.dep, key.indep));
        assert!(empty.values.is_empty());
        assert!(empty.mean.is_nan());
    }

    #[test]
    fn table_marks_global_wins() {
        let row = |label: &str, mae: f64| EvalRow {
            attr: AttrTypeId(0),
            attr_label: label.into(),
            mae,
            rmse: mae,
            n_test: 1,
            n_unpredicted: 0,
        };
        let mk = |m: &str, rows: Vec<EvalRow>| EvalReport { method: m.into(), setup: "50%".into(), rows };
        let reports = vec![
            mk("Global", vec![row("a", 1.0), row("b", 5.0)]),
            mk("Local", vec![row("a", 2.0), row("b", 3.0)]),
        ];
        let t = format_table(&reports, true);
        let a_line = t.lines().find(|l| l.starts_with("a ")).unwrap();
        let b_line = t.lines().find(|l| l.starts_with("b ")).unwrap();
        assert!(a_line.contains("1.00/1.00*"));
        assert!(!b_line.contains('*'));

        let mut buf = Vec::new();
        write_report_csv(&reports, &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("Local,50%,b,3.000000,3.000000,1,0"));
    }
}
