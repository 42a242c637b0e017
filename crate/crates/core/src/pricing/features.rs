//! Input vector of the cost predictors.
//!
//! Layout: every transfer splitting rate in [`NetworkSpec::triples`] order,
//! the border flows `M_IH` in [`NetworkSpec::border_pairs`] order, then
//! `N_I / N_crit,I` for every region.

use crate::network::{NetworkSpec, RegionId};
use crate::plant::{FlowRecord, NetworkState, SplitRates};

pub fn feature_len(spec: &NetworkSpec) -> usize {
    spec.triples().len() + spec.border_pairs().len() + spec.k()
}

pub fn feature_names(spec: &NetworkSpec) -> Vec<String> {
    let mut names: Vec<String> = spec.triples().iter().map(|t| format!("theta_{}", t.label())).collect();
    names.extend(spec.border_pairs().iter().map(|(i, h)| format!("m_{i}_{h}")));
    names.extend(spec.region_ids().map(|i| format!("nc_{i}")));
    names
}

pub fn build_features(spec: &NetworkSpec, state: &NetworkState, split: &SplitRates, flows: &FlowRecord) -> Vec<f64> {
    let mut x = Vec::with_capacity(feature_len(spec));
    x.extend_from_slice(&split.theta);
    x.extend(flows.border_flows(spec));
    x.extend(
        spec.region_ids()
            .map(|i: RegionId| state.region_total(i) / spec.critical(i).accumulation),
    );
    x
}
