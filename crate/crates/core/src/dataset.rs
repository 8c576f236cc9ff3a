use std::collections::BTreeMap;

use crate::curve::ViewCurves;
use crate::geometry::Camera;

/// Calibrated cameras plus the curve fragments observed in each view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub cameras: BTreeMap<usize, Camera>,
    pub views: BTreeMap<usize, ViewCurves>,
}

impl Dataset {
    pub fn new(cameras: Vec<Camera>, views: Vec<ViewCurves>) -> Self {
        Self {
            cameras: cameras.into_iter().map(|c| (c.view_id(), c)).collect(),
            views: views.into_iter().map(|v| (v.view_id, v)).collect(),
        }
    }

    /// View ids that have both a camera and curve fragments, ascending.
    pub fn view_ids(&self) -> Vec<usize> {
        self.views.keys().copied().filter(|v| self.cameras.contains_key(v)).collect()
    }

    pub fn edgel_count(&self) -> usize {
        self.views.values().map(|v| v.edgels().count()).sum()
    }

    pub fn curve_count(&self) -> usize {
        self.views.values().map(|v| v.curves.len()).sum()
    }
}
