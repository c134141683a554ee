use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Visual style of the grasped component. Each style has its own peg glyph,
/// hole size and pin-mark layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentStyle {
    PH,
    LED,
    C1,
    DSUB,
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlyphShape {
    Disc { radius: f64 },
    Rect { half_width: f64, half_height: f64 },
}

/// Glyph dimensions in millimeters, in image-aligned axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub shape: GlyphShape,
    pub hole_radius: f64,
    pub pins: &'static [(f64, f64)],
    pub pin_radius: f64,
}

impl ComponentStyle {
    pub const ALL: [ComponentStyle; 5] = [
        ComponentStyle::PH,
        ComponentStyle::LED,
        ComponentStyle::C1,
        ComponentStyle::DSUB,
        ComponentStyle::C2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentStyle::PH => "PH",
            ComponentStyle::LED => "LED",
            ComponentStyle::C1 => "C1",
            ComponentStyle::DSUB => "DSUB",
            ComponentStyle::C2 => "C2",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            ComponentStyle::PH => 0,
            ComponentStyle::LED => 1,
            ComponentStyle::C1 => 2,
            ComponentStyle::DSUB => 3,
            ComponentStyle::C2 => 4,
        }
    }

    pub fn glyph(self) -> Glyph {
        match self {
            ComponentStyle::PH => Glyph {
                shape: GlyphShape::Rect { half_width: 0.35, half_height: 0.25 },
                hole_radius: 0.22,
                pins: &[(0.0, 0.0)],
                pin_radius: 0.08,
            },
            ComponentStyle::LED => Glyph {
                shape: GlyphShape::Disc { radius: 0.3 },
                hole_radius: 0.2,
                pins: &[(-0.12, 0.0), (0.12, 0.0)],
                pin_radius: 0.05,
            },
            ComponentStyle::C1 => Glyph {
                shape: GlyphShape::Disc { radius: 0.4 },
                hole_radius: 0.25,
                pins: &[(-0.15, 0.0), (0.15, 0.0)],
                pin_radius: 0.07,
            },
            ComponentStyle::DSUB => Glyph {
                shape: GlyphShape::Rect { half_width: 0.6, half_height: 0.22 },
                hole_radius: 0.2,
                pins: &[(-0.4, 0.0), (-0.2, 0.0), (0.0, 0.0), (0.2, 0.0), (0.4, 0.0)],
                pin_radius: 0.06,
            },
            ComponentStyle::C2 => Glyph {
                shape: GlyphShape::Rect { half_width: 0.45, half_height: 0.45 },
                hole_radius: 0.25,
                pins: &[(-0.2, -0.2), (0.2, -0.2), (-0.2, 0.2), (0.2, 0.2)],
                pin_radius: 0.07,
            },
        }
    }
}

impl fmt::Display for ComponentStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentStyle::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown component style '{s}' (expected PH, LED, C1, DSUB or C2)"))
    }
}
