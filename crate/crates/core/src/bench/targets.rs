use std::collections::BTreeMap;

use crate::depth::{tight_bbox, BBox, BinaryMask};
use crate::error::{Error, Result};
use crate::io::InstanceMap;

/// Default minimum target area as a fraction of the image.
pub const DEFAULT_MIN_AREA_FRAC: f64 = 0.001;

/// One retained instance of an instance map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Target {
    pub instance_id: u16,
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub area: usize,
}

/// Pixel count per nonzero instance id, ascending by id.
pub fn instance_areas(map: &InstanceMap) -> BTreeMap<u16, usize> {
    let mut areas = BTreeMap::new();
    for &id in &map.ids {
        if id != 0 {
            *areas.entry(id).or_insert(0) += 1;
        }
    }
    areas
}

/// Instances covering at least `min_area_frac` of the image, ascending by id.
/// ID 0 is background and never a target.
pub fn extract_targets(map: &InstanceMap, min_area_frac: f64) -> Result<Vec<Target>> {
    if !(min_area_frac > 0.0 && min_area_frac < 1.0) {
        return Err(Error::invalid(format!(
            "min_area_frac must lie in (0, 1), got {min_area_frac}"
        )));
    }
    let threshold = min_area_frac * (map.height * map.width) as f64;
    instance_areas(map)
        .into_iter()
        .filter(|&(_, area)| area as f64 >= threshold)
        .map(|(instance_id, area)| {
            let mask = map.mask_of(instance_id);
            let bbox = tight_bbox(&mask)?;
            Ok(Target {
                instance_id,
                mask,
                bbox,
                area,
            })
        })
        .collect()
}
