//! Prototype selection, diversity, model points and correlation statistics.

mod correlate;
mod diversity;
mod embedding;
mod points;
mod prototype;

pub use correlate::{correlate, rank, Correlation, Method};
pub use diversity::{diversity_cosine, diversity_std, Aggregation, DiversityMeasure, DiversityScore};
pub use embedding::{EmbeddingMatrix, SourceId};
pub use points::{
    model_point, per_concept_distance, per_concept_distances, top_k_concepts, zscore_and_distance, ConceptMetrics,
    DistanceRow, ModelPoint,
};
pub use prototype::{select_prototype, Prototype};
