use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::{AttrKind, Color, Label, Material, ObjShape, Side, Size};
use crate::error::{Error, Result};

/// Fewest and most objects a scene may hold.
pub const MIN_OBJECTS: usize = 3;
pub const MAX_OBJECTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub color: Color,
    pub shape: ObjShape,
    pub material: Material,
    pub size: Size,
    pub row: usize,
    pub col: usize,
}

impl Object {
    /// This object's value for `kind`, as a single-head label.
    pub fn value(&self, kind: AttrKind) -> Label {
        let index = match kind {
            AttrKind::Color => self.color.index(),
            AttrKind::Shape => self.shape.index(),
            AttrKind::Material => self.material.index(),
            AttrKind::Size => self.size.index(),
        };
        Label::attr_value(kind, index)
    }

    /// Left half holds the columns with `2 * col < grid_size`.
    pub fn side(&self, grid_size: usize) -> Side {
        if 2 * self.col < grid_size {
            Side::Left
        } else {
            Side::Right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: u64,
    pub grid_size: usize,
    pub objects: Vec<Object>,
}

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n) || self.grid_size * self.grid_size < n {
            return Err(Error::Invalid(format!(
                "scene {} has {n} objects on a {}x{} grid",
                self.scene_id, self.grid_size, self.grid_size
            )));
        }
        let mut cells: Vec<_> = self.objects.iter().map(|o| (o.row, o.col)).collect();
        if cells.iter().any(|&(r, c)| r >= self.grid_size || c >= self.grid_size) {
            return Err(Error::Invalid(format!("scene {} has an object off the grid", self.scene_id)));
        }
        cells.sort_unstable();
        cells.dedup();
        if cells.len() != n {
            return Err(Error::Invalid(format!("scene {} reuses a cell", self.scene_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub grid_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_size: 6,
            min_objects: MIN_OBJECTS,
            max_objects: MAX_OBJECTS,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < MIN_OBJECTS
            || self.max_objects > MAX_OBJECTS
            || self.min_objects > self.max_objects
        {
            return Err(Error::Config(format!(
                "object count range {}..={} must lie within {MIN_OBJECTS}..={MAX_OBJECTS}",
                self.min_objects, self.max_objects
            )));
        }
        if self.grid_size * self.grid_size < self.max_objects {
            return Err(Error::Config(format!(
                "a {0}x{0} grid cannot hold {1} objects",
                self.grid_size, self.max_objects
            )));
        }
        Ok(())
    }
}

/// Samples a scene: object count uniform over the configured range,
/// attributes uniform per family, cells drawn without replacement.
pub fn gen_scene<R: Rng>(rng: &mut R, config: &SceneConfig, scene_id: u64) -> Result<SceneGraph> {
    config.validate()?;
    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let g = config.grid_size;
    let cells = sample(rng, g * g, n).into_vec();
    let objects = cells
        .into_iter()
        .map(|cell| Object {
            color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
            shape: ObjShape::ALL[rng.gen_range(0..ObjShape::ALL.len())],
            material: Material::ALL[rng.gen_range(0..Material::ALL.len())],
            size: Size::ALL[rng.gen_range(0..Size::ALL.len())],
            row: cell / g,
            col: cell % g,
        })
        .collect();
    Ok(SceneGraph {
        scene_id,
        grid_size: g,
        objects,
    })
}
