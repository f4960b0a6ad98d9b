use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Polytope;
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Wire form: `{"normals": [[...]], "offsets": [...]}` or `{"box": {"lo": [...], "hi": [...]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PolytopeJson {
    Box {
        #[serde(rename = "box")]
        bounds: BoxBounds,
    },
    Halfspaces {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
}

impl TryFrom<PolytopeJson> for Polytope {
    type Error = Error;

    fn try_from(value: PolytopeJson) -> Result<Self> {
        match value {
            PolytopeJson::Box { bounds } => Polytope::from_box(&bounds.lo, &bounds.hi),
            PolytopeJson::Halfspaces { normals, offsets } => {
                let n = matrix_from_rows(&normals)?;
                Polytope::from_halfspaces(n, DVector::from_vec(offsets))
            }
        }
    }
}

impl From<&Polytope> for PolytopeJson {
    fn from(p: &Polytope) -> Self {
        PolytopeJson::Halfspaces {
            normals: matrix_to_rows(p.normals()),
            offsets: p.offsets().iter().copied().collect(),
        }
    }
}

impl Serialize for Polytope {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = PolytopeJson::deserialize(deserializer)?;
        Polytope::try_from(raw).map_err(serde::de::Error::custom)
    }
}
