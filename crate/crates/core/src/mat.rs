//! Mat geometry: six rectangular action zones and point-to-zone lookup.
//!
//! Coordinates are millimetres with the origin at the mat's top-left
//! corner, x to the right and y downward. Headings are degrees measured
//! from +x toward +y (clockwise as seen from above).

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, NUM_ACTIONS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayoutError {
    #[error("layout json: {0}")]
    Json(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Closed containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    fn interiors_overlap(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub rect: Rect,
    pub action: ActionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatLayout {
    pub width_mm: f64,
    pub height_mm: f64,
    /// One zone per action, in label-id order.
    pub zones: Vec<Zone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevicePose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
}

pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

impl DevicePose {
    pub fn new(x_mm: f64, y_mm: f64, heading_deg: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            heading_deg: normalize_heading(heading_deg),
        }
    }
}

pub const CANONICAL_WIDTH_MM: f64 = 420.0;
pub const CANONICAL_HEIGHT_MM: f64 = 297.0;
pub const CANONICAL_MARGIN_MM: f64 = 10.0;
pub const CANONICAL_GUTTER_MM: f64 = 10.0;

impl MatLayout {
    /// A 3 x 2 grid of equal zones assigned row-major in label-id order.
    pub fn grid(width_mm: f64, height_mm: f64, margin_mm: f64, gutter_mm: f64) -> Result<Self, LayoutError> {
        let zone_w = (width_mm - 2.0 * margin_mm - 2.0 * gutter_mm) / 3.0;
        let zone_h = (height_mm - 2.0 * margin_mm - gutter_mm) / 2.0;
        let zones = ActionLabel::ALL
            .into_iter()
            .enumerate()
            .map(|(i, action)| {
                let (col, row) = ((i % 3) as f64, (i / 3) as f64);
                let x0 = margin_mm + col * (zone_w + gutter_mm);
                let y0 = margin_mm + row * (zone_h + gutter_mm);
                Zone {
                    rect: Rect {
                        x0,
                        y0,
                        x1: x0 + zone_w,
                        y1: y0 + zone_h,
                    },
                    action,
                }
            })
            .collect();
        let layout = Self {
            width_mm,
            height_mm,
            zones,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn canonical() -> Self {
        Self::grid(
            CANONICAL_WIDTH_MM,
            CANONICAL_HEIGHT_MM,
            CANONICAL_MARGIN_MM,
            CANONICAL_GUTTER_MM,
        )
        .expect("canonical layout is valid")
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::Invalid(m));
        if !(self.width_mm > 0.0 && self.height_mm > 0.0)
            || !self.width_mm.is_finite()
            || !self.height_mm.is_finite()
        {
            return bad("mat dimensions must be positive and finite".into());
        }
        if self.zones.len() != NUM_ACTIONS {
            return bad(format!("expected {NUM_ACTIONS} zones, got {}", self.zones.len()));
        }
        for (i, z) in self.zones.iter().enumerate() {
            if z.action.index() != i {
                return bad(format!("zone {i} is labeled {} (zones must follow label order)", z.action));
            }
            let r = &z.rect;
            if ![r.x0, r.y0, r.x1, r.y1].iter().all(|v| v.is_finite()) || r.x0 >= r.x1 || r.y0 >= r.y1 {
                return bad(format!("zone {i} has a degenerate rectangle"));
            }
            if r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > self.width_mm || r.y1 > self.height_mm {
                return bad(format!("zone {i} extends past the mat"));
            }
            for (j, other) in self.zones[..i].iter().enumerate() {
                if r.interiors_overlap(&other.rect) {
                    return bad(format!("zones {j} and {i} overlap"));
                }
            }
        }
        Ok(())
    }

    pub fn zone(&self, action: ActionLabel) -> Option<&Zone> {
        self.zones.iter().find(|z| z.action == action)
    }

    /// The zone containing the pose; shared boundaries resolve to the lowest
    /// label id, and gutters, margins, off-mat or non-finite poses to `None`.
    pub fn zone_at(&self, pose: &DevicePose) -> Option<ActionLabel> {
        let (x, y) = (pose.x_mm, pose.y_mm);
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        self.zones
            .iter()
            .find(|z| z.rect.contains(x, y))
            .map(|z| z.action)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x <= self.width_mm && y >= 0.0 && y <= self.height_mm
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let layout: Self = serde_json::from_str(text).map_err(|e| LayoutError::Json(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }
}
