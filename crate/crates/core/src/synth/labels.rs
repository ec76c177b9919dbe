use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

macro_rules! attribute_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

attribute_enum!(Color {
    Gray => "gray", Red => "red", Blue => "blue", Green => "green",
    Brown => "brown", Purple => "purple", Cyan => "cyan", Yellow => "yellow",
});
attribute_enum!(ObjShape { Cube => "cube", Sphere => "sphere", Cylinder => "cylinder" });
attribute_enum!(Material { Rubber => "rubber", Metal => "metal" });
attribute_enum!(Size { Small => "small", Large => "large" });
attribute_enum!(
    /// Horizontal half of the grid, split by column.
    Side { Left => "left", Right => "right" }
);
attribute_enum!(
    /// The four attribute families questions can be about.
    AttrKind { Color => "color", Shape => "shape", Material => "material", Size => "size" }
);

impl AttrKind {
    pub fn cardinality(self) -> usize {
        match self {
            AttrKind::Color => 8,
            AttrKind::Shape => 3,
            AttrKind::Material => 2,
            AttrKind::Size => 2,
        }
    }

    /// Index of this family's first value in the single-head label space.
    pub fn label_offset(self) -> usize {
        match self {
            AttrKind::Color => 0,
            AttrKind::Shape => 8,
            AttrKind::Material => 11,
            AttrKind::Size => 13,
        }
    }
}

/// The two question tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Attribute queries, 15 possible answers.
    Wh,
    /// Attribute comparisons, answered yes or no.
    Yn,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::Wh, TaskKind::Yn];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Wh => "wh",
            TaskKind::Yn => "yn",
        }
    }

    pub fn other(self) -> TaskKind {
        match self {
            TaskKind::Wh => TaskKind::Yn,
            TaskKind::Yn => TaskKind::Wh,
        }
    }

    /// Labels that answer this task, in label order.
    pub fn labels(self) -> Vec<Label> {
        match self {
            TaskKind::Wh => (0..15).map(Label).collect(),
            TaskKind::Yn => vec![Label::YES, Label::NO],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wh" => Ok(TaskKind::Wh),
            "yn" => Ok(TaskKind::Yn),
            _ => Err(Error::Invalid(format!("unknown task {s:?}"))),
        }
    }
}

/// An answer in the 17-way single-head space: the 15 attribute values in
/// family order (colors, shapes, materials, sizes), then `yes`, `no`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u8);

pub const NUM_LABELS: usize = 17;

const LABEL_NAMES: [&str; NUM_LABELS] = [
    "gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow", "cube", "sphere",
    "cylinder", "rubber", "metal", "small", "large", "yes", "no",
];

impl Label {
    pub const YES: Label = Label(15);
    pub const NO: Label = Label(16);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_LABELS {
            Ok(Label(index as u8))
        } else {
            Err(Error::Invalid(format!("label index {index} out of range")))
        }
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_LABELS as u8).map(Label)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        LABEL_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        LABEL_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| Label(i as u8))
            .ok_or_else(|| Error::Invalid(format!("unknown label {name:?}")))
    }

    pub fn from_bool(answer: bool) -> Self {
        if answer {
            Label::YES
        } else {
            Label::NO
        }
    }

    pub fn attr_value(kind: AttrKind, value_index: usize) -> Self {
        debug_assert!(value_index < kind.cardinality());
        Label((kind.label_offset() + value_index) as u8)
    }

    /// Attribute family of an attribute-valued label; `None` for yes/no.
    pub fn attr_kind(self) -> Option<AttrKind> {
        match self.0 {
            0..=7 => Some(AttrKind::Color),
            8..=10 => Some(AttrKind::Shape),
            11..=12 => Some(AttrKind::Material),
            13..=14 => Some(AttrKind::Size),
            _ => None,
        }
    }

    /// The task whose answers include this label.
    pub fn task(self) -> TaskKind {
        if self.0 >= 15 {
            TaskKind::Yn
        } else {
            TaskKind::Wh
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Label::from_name(&s).map_err(serde::de::Error::custom)
    }
}

/// Query or comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubtypeKind {
    Query,
    Equal,
}

/// One of the eight question subtypes, e.g. `query_color` or `equal_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subtype {
    pub kind: SubtypeKind,
    pub attr: AttrKind,
}

impl Subtype {
    pub fn all() -> Vec<Subtype> {
        let mut v = Vec::with_capacity(8);
        for kind in [SubtypeKind::Query, SubtypeKind::Equal] {
            for &attr in AttrKind::ALL {
                v.push(Subtype { kind, attr });
            }
        }
        v
    }

    pub fn for_task(task: TaskKind) -> Vec<Subtype> {
        let kind = match task {
            TaskKind::Wh => SubtypeKind::Query,
            TaskKind::Yn => SubtypeKind::Equal,
        };
        AttrKind::ALL.iter().map(|&attr| Subtype { kind, attr }).collect()
    }

    pub fn task(self) -> TaskKind {
        match self.kind {
            SubtypeKind::Query => TaskKind::Wh,
            SubtypeKind::Equal => TaskKind::Yn,
        }
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            SubtypeKind::Query => "query",
            SubtypeKind::Equal => "equal",
        };
        write!(f, "{k}_{}", self.attr)
    }
}

impl FromStr for Subtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subtype::all()
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown subtype {s:?}")))
    }
}

impl Serialize for Subtype {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subtype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_is_seventeen_distinct_names() {
        let names: std::collections::BTreeSet<_> = Label::all().map(Label::name).collect();
        assert_eq!(names.len(), NUM_LABELS);
        let wh = TaskKind::Wh.labels();
        let yn = TaskKind::Yn.labels();
        assert_eq!((wh.len(), yn.len()), (15, 2));
        assert!(wh.iter().all(|l| !yn.contains(l)));
        assert_eq!(wh.len() + yn.len(), NUM_LABELS);
    }

    #[test]
    fn attribute_offsets_match_cardinalities() {
        let total: usize = AttrKind::ALL.iter().map(|a| a.cardinality()).sum();
        assert_eq!(total, 15);
        assert_eq!(Color::ALL.len(), 8);
        assert_eq!(ObjShape::ALL.len(), 3);
        assert_eq!(Label::attr_value(AttrKind::Material, 1).name(), "metal");
        assert_eq!(Label::attr_value(AttrKind::Shape, 2).name(), "cylinder");
        assert_eq!(Label::from_name("large").unwrap().attr_kind(), Some(AttrKind::Size));
    }

    #[test]
    fn subtype_names_round_trip() {
        for t in Subtype::all() {
            assert_eq!(t.to_string().parse::<Subtype>().unwrap(), t);
        }
        assert_eq!(Subtype::all()[4].to_string(), "equal_color");
    }
}
