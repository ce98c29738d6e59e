//! Shared domain types and the model-free algorithms of the grounding
//! pipeline: box geometry, mask-to-box extraction, selective-search region
//! proposals and caption clustering.

pub mod cluster;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod image;
pub mod mask;
pub mod mask2box;
pub mod proposals;
pub mod text;

pub use cluster::{cluster_captions, CaptionCluster, ClusterConfig};
pub use detection::{Detection, DetectionSet, GroundingAnnotation, GroundingRegion};
pub use error::{CoreError, Result};
pub use geometry::{iou, nms, nms_indices, BoundingBox};
pub use image::ImageTensor;
pub use mask::{pointing_hit, pointing_hit_any, RelevancyMap, SaliencyMask};
pub use mask2box::{extract_wsg_boxes, extract_wsol_box, ExtractionConfig};
pub use proposals::{selective_search, ProposalConfig, RegionProposal};
pub use text::{Phrase, TextEmbedding};
