//! The synthetic benchmark: corrupted blob training set plus a clean test
//! set, both fully determined by a config.

use crate::config::TrainConfig;
use crate::datagen::{inject_closedset, inject_openset, BlobLayout, LabeledExample, PartialDataset};
use crate::error::Result;
use crate::seeding::{stream_rng, Stream};

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: PartialDataset,
    pub test: Vec<LabeledExample>,
    /// Clean held-out draw for proportion estimation, same size as `test`.
    pub validation: Vec<LabeledExample>,
}

pub fn layout(config: &TrainConfig) -> Result<BlobLayout> {
    BlobLayout::new(config.classes, config.dim, config.separation, config.open_classes)
}

/// Blobs from the data stream, closed-set and open-set corruption from the
/// corruption stream, and independent test and validation draws.
pub fn build_benchmark(config: &TrainConfig) -> Result<Benchmark> {
    config.validate()?;
    let layout = layout(config)?;
    let mut data_rng = stream_rng(config.seed, Stream::Data);
    let clean = layout.sample_classes(config.n_per_class, &mut data_rng);
    let (n, n_open) = config.dataset_sizes();
    let per_cluster = n_open.div_ceil(config.open_classes.max(1));
    let aux = layout.sample_open(per_cluster, &mut data_rng);

    let mut corrupt_rng = stream_rng(config.seed, Stream::Corruption);
    let base = PartialDataset::from_clean(clean, config.classes, config.q, &mut corrupt_rng)?;
    debug_assert_eq!(base.len(), n);
    let closed = inject_closedset(&base, config.tau1, &mut corrupt_rng)?;
    let train = if config.tau2 > 0.0 {
        inject_openset(&closed, &aux, config.tau2, config.q, &mut corrupt_rng)?
    } else {
        closed
    };

    let mut test_rng = stream_rng(config.seed, Stream::Test);
    let test = layout.sample_classes(config.test_per_class, &mut test_rng);
    let mut validation_rng = stream_rng(config.seed, Stream::Validation);
    let validation = layout.sample_classes(config.test_per_class, &mut validation_rng);
    Ok(Benchmark {
        train,
        test,
        validation,
    })
}
