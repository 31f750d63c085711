//! Where does the classifier look? Grad-CAM heatmaps for white-box models and
//! coarse-to-fine zero-masking queries for black-box ones.

mod blackbox;
mod gradcam;

pub use blackbox::{
    analyze_blackbox, coarse_partition, rank, refine, segment_score, BlackBoxConfig, ImportanceReport, ScoredSegment,
};
pub use gradcam::{grad_cam, heatmap_to_mask, Heatmap};
