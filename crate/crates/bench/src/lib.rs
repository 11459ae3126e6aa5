//! Fixtures shared by the benchmarks.

use arcpool_core::data::gen_blobs;
use arcpool_core::engine::AlConfig;
use arcpool_core::seed::{derive, Stream};
use arcpool_core::{Dataset, HyperParams, ModelParams, SynthConfig};

/// The overlapping-blobs preset (3000 samples, 16 features, 6 classes).
pub fn dataset() -> Dataset {
    gen_blobs(&SynthConfig::preset("overlap-blobs").expect("preset")).expect("generate")
}

/// Default experiment hyper-parameters and a freshly initialised model.
pub fn model(data: &Dataset) -> (HyperParams, ModelParams) {
    let hp = AlConfig::default_hyper(data.d_in());
    let model =
        ModelParams::init(&hp, data.num_classes(), derive(0, Stream::ModelInit, 0)).expect("init");
    (hp, model)
}
