//! Anchors, target assignment, the composite detection loss, decoding and
//! non-maximum suppression.

mod anchors;
mod assign;
mod bbox;
mod decode;
mod loss;

pub use anchors::{shape_iou, Anchors};
pub use assign::{assign_targets, Positive, ScaleTargets, Targets, ANCHOR_RATIO_LIMIT};
pub use bbox::BBox;
pub use decode::{
    decode, decode_and_nms, decode_box, encode_box, format_detections, nms, parse_detections, Detection,
    DEFAULT_CONF, DEFAULT_IOU, MAX_CANDIDATES, MAX_DETECTIONS,
};
pub use loss::{ciou, detection_loss, LossConfig, LossOutput, LossParts, ScaleLoss, ScaleOutput};

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}
