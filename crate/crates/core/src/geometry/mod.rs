//! Oriented boxes and everything needed to score detections against them.

pub mod annotations;
pub mod iou;
pub mod map;
pub mod nms;
pub mod obb;
pub mod pgm;
pub mod scene;

pub use iou::{raster_iou_oracle, rotated_iou};
pub use map::{eval_map, eval_map_coco, MapReport};
pub use nms::{batched_rotated_nms, rotated_nms};
pub use obb::{box_to_polygon, BoxFrame, ConvexPolygon, OrientedBox, Point};
pub use scene::{gen_scene, Scene, SceneSpec};
