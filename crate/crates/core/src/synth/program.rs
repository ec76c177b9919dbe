//! Functional programs: executable filter/unique/query/compare chains that
//! define each question's answer on its scene.

use serde::{Deserialize, Serialize};

use super::labels::{AttrKind, Color, Label, Material, ObjShape, Side, Size};
use super::scene::{Object, SceneGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "arg", rename_all = "snake_case")]
pub enum FpStep {
    FilterColor(Color),
    FilterShape(ObjShape),
    FilterMaterial(Material),
    FilterSize(Size),
    FilterSide(Side),
    Unique,
    QueryAttr(AttrKind),
    /// Compares the current referent with the one selected by `other`, a
    /// filter chain ending in `unique` that starts from the whole scene.
    EqualAttr { attr: AttrKind, other: Vec<FpStep> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionalProgram {
    pub steps: Vec<FpStep>,
}

/// Attribute constraints plus optional side that pick out objects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Referent {
    pub size: Option<Size>,
    pub color: Option<Color>,
    pub material: Option<Material>,
    pub shape: Option<ObjShape>,
    pub side: Option<Side>,
}

impl Referent {
    pub fn matches(&self, o: &Object, grid_size: usize) -> bool {
        self.size.is_none_or(|v| o.size == v)
            && self.color.is_none_or(|v| o.color == v)
            && self.material.is_none_or(|v| o.material == v)
            && self.shape.is_none_or(|v| o.shape == v)
            && self.side.is_none_or(|v| o.side(grid_size) == v)
    }

    pub fn mentions(&self, kind: AttrKind) -> bool {
        match kind {
            AttrKind::Color => self.color.is_some(),
            AttrKind::Shape => self.shape.is_some(),
            AttrKind::Material => self.material.is_some(),
            AttrKind::Size => self.size.is_some(),
        }
    }

    /// Filter steps in a fixed order, followed by `unique`.
    pub fn to_steps(&self) -> Vec<FpStep> {
        let mut steps = Vec::new();
        if let Some(v) = self.size {
            steps.push(FpStep::FilterSize(v));
        }
        if let Some(v) = self.color {
            steps.push(FpStep::FilterColor(v));
        }
        if let Some(v) = self.material {
            steps.push(FpStep::FilterMaterial(v));
        }
        if let Some(v) = self.shape {
            steps.push(FpStep::FilterShape(v));
        }
        if let Some(v) = self.side {
            steps.push(FpStep::FilterSide(v));
        }
        steps.push(FpStep::Unique);
        steps
    }

    /// Noun phrase such as `the large red rubber cube on the left`.
    pub fn phrase(&self) -> String {
        let mut words = vec!["the"];
        if let Some(v) = self.size {
            words.push(v.name());
        }
        if let Some(v) = self.color {
            words.push(v.name());
        }
        if let Some(v) = self.material {
            words.push(v.name());
        }
        words.push(self.shape.map_or("thing", ObjShape::name));
        if let Some(v) = self.side {
            words.extend(["on", "the", v.name()]);
        }
        words.join(" ")
    }
}

impl FunctionalProgram {
    pub fn query(referent: &Referent, attr: AttrKind) -> Self {
        let mut steps = referent.to_steps();
        steps.push(FpStep::QueryAttr(attr));
        FunctionalProgram { steps }
    }

    pub fn equal(first: &Referent, second: &Referent, attr: AttrKind) -> Self {
        let mut steps = first.to_steps();
        steps.push(FpStep::EqualAttr {
            attr,
            other: second.to_steps(),
        });
        FunctionalProgram { steps }
    }
}

fn apply_filter(step: &FpStep, set: &mut Vec<Object>, grid_size: usize) -> bool {
    match *step {
        FpStep::FilterColor(v) => set.retain(|o| o.color == v),
        FpStep::FilterShape(v) => set.retain(|o| o.shape == v),
        FpStep::FilterMaterial(v) => set.retain(|o| o.material == v),
        FpStep::FilterSize(v) => set.retain(|o| o.size == v),
        FpStep::FilterSide(v) => set.retain(|o| o.side(grid_size) == v),
        _ => return false,
    }
    true
}

/// Runs a referent chain (filters then `unique`) from the full object set.
fn resolve(steps: &[FpStep], scene: &SceneGraph) -> Result<Object> {
    let mut set = scene.objects.clone();
    let mut chosen = None;
    for step in steps {
        if chosen.is_some() {
            return Err(Error::Invalid("referent chain continues after unique".into()));
        }
        if apply_filter(step, &mut set, scene.grid_size) {
            continue;
        }
        match step {
            FpStep::Unique => {
                if set.len() != 1 {
                    return Err(Error::AmbiguousReferent { count: set.len() });
                }
                chosen = Some(set[0]);
            }
            other => {
                return Err(Error::Invalid(format!("unexpected {other:?} in referent chain")));
            }
        }
    }
    chosen.ok_or_else(|| Error::Invalid("referent chain without unique".into()))
}

/// Executes `fp` on `scene` and returns the answer it defines.
pub fn exec_fp(fp: &FunctionalProgram, scene: &SceneGraph) -> Result<Label> {
    let (last, chain) = fp
        .steps
        .split_last()
        .ok_or_else(|| Error::Invalid("empty program".into()))?;
    let subject = resolve(chain, scene)?;
    match last {
        FpStep::QueryAttr(attr) => Ok(subject.value(*attr)),
        FpStep::EqualAttr { attr, other } => {
            let second = resolve(other, scene)?;
            Ok(Label::from_bool(subject.value(*attr) == second.value(*attr)))
        }
        other => Err(Error::Invalid(format!("program ends with {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(color: Color, shape: ObjShape, material: Material, size: Size, col: usize) -> Object {
        Object {
            color,
            shape,
            material,
            size,
            row: 0,
            col,
        }
    }

    #[test]
    fn query_on_single_large_object() {
        let scene = SceneGraph {
            scene_id: 0,
            grid_size: 6,
            objects: vec![obj(Color::Gray, ObjShape::Cube, Material::Rubber, Size::Large, 0)],
        };
        let fp = FunctionalProgram {
            steps: vec![
                FpStep::FilterSize(Size::Large),
                FpStep::Unique,
                FpStep::QueryAttr(AttrKind::Material),
            ],
        };
        assert_eq!(exec_fp(&fp, &scene).unwrap().name(), "rubber");
    }

    #[test]
    fn equal_color_of_two_red_objects() {
        let scene = SceneGraph {
            scene_id: 0,
            grid_size: 6,
            objects: vec![
                obj(Color::Red, ObjShape::Cube, Material::Metal, Size::Small, 0),
                obj(Color::Red, ObjShape::Sphere, Material::Rubber, Size::Large, 4),
                obj(Color::Blue, ObjShape::Cylinder, Material::Rubber, Size::Large, 5),
            ],
        };
        let a = Referent {
            shape: Some(ObjShape::Cube),
            ..Referent::default()
        };
        let b = Referent {
            shape: Some(ObjShape::Sphere),
            ..Referent::default()
        };
        assert_eq!(exec_fp(&FunctionalProgram::equal(&a, &b, AttrKind::Color), &scene).unwrap(), Label::YES);
        let c = Referent {
            shape: Some(ObjShape::Cylinder),
            ..Referent::default()
        };
        assert_eq!(exec_fp(&FunctionalProgram::equal(&a, &c, AttrKind::Color), &scene).unwrap(), Label::NO);
    }

    #[test]
    fn ambiguous_unique_is_an_error() {
        let scene = SceneGraph {
            scene_id: 0,
            grid_size: 6,
            objects: vec![
                obj(Color::Red, ObjShape::Cube, Material::Metal, Size::Small, 0),
                obj(Color::Red, ObjShape::Sphere, Material::Rubber, Size::Large, 4),
                obj(Color::Blue, ObjShape::Cylinder, Material::Rubber, Size::Large, 5),
            ],
        };
        let r = Referent {
            color: Some(Color::Red),
            ..Referent::default()
        };
        assert!(matches!(
            exec_fp(&FunctionalProgram::query(&r, AttrKind::Size), &scene),
            Err(Error::AmbiguousReferent { count: 2 })
        ));
        let left = Referent {
            color: Some(Color::Red),
            side: Some(Side::Left),
            ..Referent::default()
        };
        assert_eq!(
            exec_fp(&FunctionalProgram::query(&left, AttrKind::Size), &scene).unwrap().name(),
            "small"
        );
    }

    #[test]
    fn program_json_shape() {
        let r = Referent {
            size: Some(Size::Large),
            ..Referent::default()
        };
        let fp = FunctionalProgram::equal(&r, &r, AttrKind::Shape);
        let json = serde_json::to_string(&fp).unwrap();
        assert_eq!(
            json,
            r#"[{"op":"filter_size","arg":"large"},{"op":"unique"},{"op":"equal_attr","arg":{"attr":"shape","other":[{"op":"filter_size","arg":"large"},{"op":"unique"}]}}]"#
        );
        let back: FunctionalProgram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fp);
    }

    #[test]
    fn phrase_uses_shape_as_noun() {
        let r = Referent {
            size: Some(Size::Large),
            color: Some(Color::Red),
            shape: Some(ObjShape::Cube),
            side: Some(Side::Left),
            ..Referent::default()
        };
        assert_eq!(r.phrase(), "the large red cube on the left");
        assert_eq!(Referent::default().phrase(), "the thing");
    }
}
