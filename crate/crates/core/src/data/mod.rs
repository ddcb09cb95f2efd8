//! Dataset directories, synthetic graphs and result files.

mod export;
mod io;
mod sbm;

pub use export::{
    episodes_csv_path, export_embeddings, export_results, read_embeddings, read_results,
    EmbeddingFormat, EMBEDDING_TENSOR,
};
pub use io::{
    load_dataset, load_split, save_dataset, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE,
};
pub use sbm::{generate_sbm, SbmSpec};
