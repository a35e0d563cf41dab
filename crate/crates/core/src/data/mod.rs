//! Ingestion, the zero-shot split, pair sampling, augmentation, synthetic
//! data and feature import.

mod augment;
mod dataset;
mod embeddings;
mod pairs;
mod split;
mod synth;

pub use augment::{apply_ops, augment, AugmentOps};
pub use dataset::{
    catalog_of, decode_image, load_manifest, read_manifest, write_manifest, Dataset, ImageSample,
    ManifestRow, SpeciesCatalog,
};
pub use embeddings::{import_embeddings, EmbeddingStore, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use pairs::{
    load_pairs, pairs_to_csv, parse_pairs, positive_count, sample_pairs, sample_pairs_from,
    save_pairs, scoped_groups, Pair, Scope,
};
pub use split::{make_split, Partition, SplitCensus, SplitManifest, SplitParams};
pub use synth::{
    draw_species, read_species_list, render_sample, synth_generate, SpeciesParams, SynthConfig,
    SynthOutput, SynthSpecies,
};
