//! Attribute annotation, reasoning-trace composition and quality control.

pub mod analysis;
mod annotate;
pub mod dataset;
pub mod external;
pub mod qc;
pub mod taxonomy;
pub mod trace;

pub(crate) use annotate::unambiguous;
pub use annotate::{annotate_frame, annotate_from_frames, annotate_from_params, AREA_TOLERANCE, INTENSITY_TOLERANCE};
pub use dataset::{build_cot_dataset, corrupt, CotDataset, CotEntry};
pub use external::{external_annotate, parse_annotation, ATTRIBUTE_TEMPLATE_ID};
pub use qc::{qc_all, qc_causal_alignment, qc_structure, qc_terminology, QCReport, QcCheck};
pub use taxonomy::{Attribute, AttributeEntry, AttributeRecord, Factor, NOT_APPARENT};
pub use trace::{compose_trace, CoTTrace};
