//! Fixtures shared by the benchmarks.

use fairrobust::{init_model, sample_multiclass_mixture, Activation, Dataset, Model, ModelSpec, MulticlassMixtureSpec};

/// Benchmark data of the given size per class with a fixed seed.
pub fn benchmark_data(n_per_class: usize) -> Dataset {
    sample_multiclass_mixture(&MulticlassMixtureSpec::four_class_benchmark(), n_per_class, 11).expect("valid spec")
}

/// Untrained MLP-32 on the four-class benchmark.
pub fn benchmark_mlp() -> Model {
    init_model(&ModelSpec::mlp(4, 32, 4, Activation::Relu), 5).expect("valid spec")
}
