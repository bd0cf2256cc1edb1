//! Seeded synthetic datasets with planted linear attribute relationships,
//! for tests, benchmarks and demos.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{AttrRow, BundleBuilder, Dataset, DatasetBundle, Triple};

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Small random connected graph (8–20 nodes, 1–4 relations, 1–3 attribute
/// types) whose attributes are noisy affine functions of a node latent that
/// drifts along edges. About 60% of slots are observed and every type keeps
/// at least two observed values.
pub fn random_instance(seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..=20usize);
    let n_rel = rng.random_range(1..=4usize);
    let n_types = rng.random_range(1..=3usize);

    let shifts: Vec<f64> = (0..n_rel).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut latent = vec![0.0f64; n];
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        let r = rng.random_range(0..n_rel);
        if rng.random_bool(0.5) {
            latent[i] = latent[j] + shifts[r] + gauss(&mut rng, 0.3);
            edges.push((j, r, i));
        } else {
            latent[i] = latent[j] - shifts[r] + gauss(&mut rng, 0.3);
            edges.push((i, r, j));
        }
    }
    for _ in 0..n / 2 {
        let (h, t) = (rng.random_range(0..n), rng.random_range(0..n));
        if h != t {
            edges.push((h, rng.random_range(0..n_rel), t));
        }
    }

    let coeffs: Vec<(f64, f64)> = (0..n_types)
        .map(|_| {
            let slope = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (rng.random_range(-50.0..50.0), slope)
        })
        .collect();
    let mut slots: Vec<(usize, usize, f64)> = Vec::new();
    for (v, &z) in latent.iter().enumerate() {
        let first = rng.random_range(0..n_types);
        for (t, &(a, b)) in coeffs.iter().enumerate() {
            if t == first || rng.random_bool(0.6) {
                slots.push((v, t, a + b * z + gauss(&mut rng, 0.2)));
            }
        }
    }

    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng);
    let n_obs = (slots.len() * 3).div_ceil(5);
    let mut observed = vec![false; slots.len()];
    for &i in &order[..n_obs] {
        observed[i] = true;
    }
    for t in 0..n_types {
        let of_type: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].1 == t).collect();
        let have = of_type.iter().filter(|&&i| observed[i]).count();
        let flip: Vec<usize> = of_type
            .iter()
            .copied()
            .filter(|&i| !observed[i])
            .take(2usize.saturating_sub(have))
            .collect();
        for i in flip {
            observed[i] = true;
        }
    }

    let mut b = BundleBuilder::new();
    for v in 0..n {
        b.entity(&format!("n{v}"));
    }
    for (h, r, t) in edges {
        b.edge(&format!("n{h}"), &format!("r{r}"), &format!("n{t}"));
    }
    for (i, &(v, t, value)) in slots.iter().enumerate() {
        let (e, a) = (format!("n{v}"), format!("t{t}"));
        if observed[i] {
            b.observed(&e, &a, value);
        } else {
            b.missing(&e, &a, value);
        }
    }
    b.build()
}

/// Noiseless layered graph: node latents are their layer index, relation
/// `r0` maps layer `L` one-to-one onto layer `L + 1`, `r1` joins layer `L` to
/// random nodes of layer `L + 2`, and every attribute type is an exact affine
/// function of the latent. Every fitted model is exact and the ground truth
/// is a fixed point of propagation.
pub fn planted_affine(seed: u64, layers: usize, width: usize, n_types: usize, observed_frac: f64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> = (0..n_types)
        .map(|t| (100.0 * t as f64 + rng.random_range(-10.0..10.0), rng.random_range(0.5..3.0)))
        .collect();
    let node = |l: usize, i: usize| format!("L{l}_{i}");

    let mut b = BundleBuilder::new();
    for l in 0..layers {
        for i in 0..width {
            b.entity(&node(l, i));
        }
    }
    for l in 0..layers.saturating_sub(1) {
        let mut perm: Vec<usize> = (0..width).collect();
        perm.shuffle(&mut rng);
        for (i, &p) in perm.iter().enumerate() {
            b.edge(&node(l, i), "r0", &node(l + 1, p));
            if l + 2 < layers {
                let j = rng.random_range(0..width);
                b.edge(&node(l, i), "r1", &node(l + 2, j));
            }
        }
    }

    let mut slots = Vec::new();
    for l in 0..layers {
        for i in 0..width {
            for (t, &(a, s)) in coeffs.iter().enumerate() {
                if t == (l + i) % n_types || rng.random_bool(0.7) {
                    slots.push((node(l, i), format!("t{t}"), a + s * l as f64));
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng);
    let n_obs = ((slots.len() as f64) * observed_frac).ceil() as usize;
    let mut observed = vec![false; slots.len()];
    for &i in &order[..n_obs.min(slots.len())] {
        observed[i] = true;
    }
    for (i, (e, a, v)) in slots.iter().enumerate() {
        if observed[i] {
            b.observed(e, a, *v);
        } else {
            b.missing(e, a, *v);
        }
    }
    b.build()
}

/// People with `date_of_birth` and `date_of_death`, films with `film_release`,
/// linked by `directed` (person → film) and `sibling` (person → person).
///
/// Planted relationships: death ≈ birth + 72 (sd 4), release ≈ director's
/// birth + 40 (sd 6), sibling births differ with sd 5.
pub fn film_people(seed: u64, n_persons: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples: Vec<Triple> = Vec::new();
    let mut rows: Vec<AttrRow> = Vec::new();
    let mut births = Vec::with_capacity(n_persons);
    let mut film = 0usize;
    for i in 0..n_persons {
        let person = format!("person{i}");
        let birth = if i > 0 && rng.random_bool(0.4) {
            let j = rng.random_range(0..i);
            triples.push((format!("person{j}"), "sibling".into(), person.clone()));
            births[j] + gauss(&mut rng, 5.0)
        } else {
            rng.random_range(1850.0..1960.0)
        };
        births.push(birth);
        rows.push((person.clone(), "date_of_birth".into(), birth));
        rows.push((person.clone(), "date_of_death".into(), birth + 72.0 + gauss(&mut rng, 4.0)));
        for _ in 0..rng.random_range(0..=3) {
            let f = format!("film{film}");
            film += 1;
            triples.push((person.clone(), "directed".into(), f.clone()));
            rows.push((f, "film_release".into(), birth + 40.0 + gauss(&mut rng, 6.0)));
        }
    }
    Dataset::from_rows(&triples, &rows)
}

/// Label triples and attribute rows of a dataset, for writing fixture files.
pub fn dataset_rows(ds: &Dataset) -> (Vec<Triple>, Vec<AttrRow>) {
    let triples = ds
        .graph
        .triples()
        .map(|(h, r, t)| (h.to_owned(), r.to_owned(), t.to_owned()))
        .collect();
    let rows = ds
        .truth
        .iter()
        .map(|(&(e, a), &v)| {
            (
                ds.graph.entity_label(e).to_owned(),
                ds.attr_types.label(a.0).unwrap_or_default().to_owned(),
                v,
            )
        })
        .collect();
    (triples, rows)
}

/// Ground truth of the missing slots.
pub fn hidden_truth(bundle: &DatasetBundle) -> BTreeMap<crate::attributes::AttrKey, f64> {
    bundle.targets().map(|k| (k, bundle.truth[&k])).collect()
}
