//! Shared fixtures for the benchmarks.

use spms_core::simulate::{simulate_dataset, GroundTruth};
use spms_core::transition::{build_pseudo_data, PseudoData};
use spms_core::{initialize, EmConfig, GeneratingSpec, ModelParameters, TimeSeriesDataset};

pub struct Fixture {
    pub data: TimeSeriesDataset,
    pub truth: GroundTruth,
    pub params: ModelParameters,
    pub pseudo: PseudoData,
}

/// Benchmark-design data of length `t_len` with initialized parameters
/// and the regime-0 pseudo-data of their posterior.
pub fn fixture(t_len: usize) -> Fixture {
    let (data, truth) = simulate_dataset(t_len, 1, &GeneratingSpec::benchmark()).expect("simulate");
    let params = initialize(&data, &EmConfig::default()).expect("initialize");
    let post = spms_core::forward_backward(&data, &params).expect("posterior");
    let pseudo = build_pseudo_data(&post, &data, 0).expect("pseudo-data");
    Fixture {
        data,
        truth,
        params,
        pseudo,
    }
}
