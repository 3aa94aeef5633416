//! Task output JSON: a list of
//! `{category_id, name, bbox: [x_min, y_min, x_max, y_max], mask_rle}`.
//!
//! `mask_rle` is `{size: [height, width], counts}` with alternating run
//! lengths over the mask in row-major order, starting with an unset run
//! (which may be 0). Bboxes are inclusive pixel coordinates.

use hmic::imagery::{CategoryDictionary, Mask};
use hmic::profile::TaskOutputs;
use serde::Serialize;

#[derive(Debug, Serialize, PartialEq)]
pub struct MaskRle {
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TaskJson {
    pub category_id: u16,
    pub name: String,
    pub bbox: [usize; 4],
    pub mask_rle: MaskRle,
}

pub fn rle(mask: &Mask) -> MaskRle {
    let mut counts = Vec::new();
    let (mut current, mut run) = (false, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) != current {
                counts.push(run);
                current = !current;
                run = 0;
            }
            run += 1;
        }
    }
    counts.push(run);
    MaskRle {
        size: [mask.height(), mask.width()],
        counts,
    }
}

/// Instances in decode order; categories missing from `dict` get an empty
/// name.
pub fn task_json(tasks: &TaskOutputs, dict: &CategoryDictionary) -> Vec<TaskJson> {
    tasks
        .instances
        .iter()
        .map(|t| TaskJson {
            category_id: t.category_id,
            name: dict.name(t.category_id).unwrap_or_default().to_string(),
            bbox: [t.bbox.x_min, t.bbox.y_min, t.bbox.x_max, t.bbox.y_max],
            mask_rle: rle(&t.mask),
        })
        .collect()
}
