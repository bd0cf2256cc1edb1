//! Shared fixtures for the criterion benchmarks.

use mrap_core::synthetic::film_people;
use mrap_core::{build_registry, split_attributes, subsample_observed, AdmissionConfig, DatasetBundle, ModelRegistry, SplitSpec};

/// Film/person graph with `n_persons` people, split 80/10/10 and with the
/// given fraction of the training values observed.
pub fn film_bundle(n_persons: usize, observed_fraction: f64) -> DatasetBundle {
    let bundle = split_attributes(film_people(42, n_persons), &SplitSpec::default()).expect("non-empty dataset");
    if observed_fraction < 1.0 {
        subsample_observed(&bundle, observed_fraction, 42).expect("valid fraction")
    } else {
        bundle
    }
}

pub fn fitted(n_persons: usize, observed_fraction: f64) -> (DatasetBundle, ModelRegistry) {
    let bundle = film_bundle(n_persons, observed_fraction);
    let reg = build_registry(&bundle, &AdmissionConfig::default());
    (bundle, reg)
}
