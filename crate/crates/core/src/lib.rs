//! Procedural generation of annotated leaf images on millimeter paper.
//!
//! The crate is pure and deterministic: every generator takes an explicit
//! [`NoiseSeed`] and produces bit-identical output for identical inputs. File
//! I/O, the inpainting client and dataset orchestration live in the `leafgen`
//! pipeline crate; this crate also builds for `wasm32-unknown-unknown`.

pub mod annotate;
pub mod edges;
mod error;
pub mod geom;
pub mod leaf;
pub mod leaf_shape;
pub mod leaf_texture;
pub mod metrics;
pub mod noise;
pub mod paper;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod venation;

pub use error::{Error, Result};
pub use geom::{Rect, Vec2, Vec3};
pub use noise::NoiseSeed;
pub use raster::{BinaryMask, RasterImage, Rgb};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Leaf species supported by the shape and texture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Beech,
    Oak,
}

impl Species {
    pub const ALL: [Species; 2] = [Species::Beech, Species::Oak];

    pub fn as_str(self) -> &'static str {
        match self {
            Species::Beech => "beech",
            Species::Oak => "oak",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "beech" => Ok(Species::Beech),
            "oak" => Ok(Species::Oak),
            other => Err(Error::input(format!("unknown species `{other}`"))),
        }
    }
}
