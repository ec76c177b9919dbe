//! Synthetic grounded question answering: scenes, functional programs, the
//! two question tasks, symbolic feature grids and the JSONL bundle format.

pub mod dataset;
pub mod features;
pub mod io;
pub mod labels;
pub mod program;
pub mod question;
pub mod scene;
pub mod vocab;

pub use dataset::{build_dataset, DataConfig, DatasetBundle, Split, SplitStats};
pub use features::{encode_features, FeatureGrid, CHANNELS};
pub use io::{read_bundle, read_jsonl, write_bundle, write_jsonl};
pub use labels::{AttrKind, Color, Label, Material, ObjShape, Side, Size, Subtype, SubtypeKind, TaskKind, NUM_LABELS};
pub use program::{exec_fp, FpStep, FunctionalProgram, Referent};
pub use question::{gen_question, unique_referents, Question};
pub use scene::{gen_scene, Object, SceneConfig, SceneGraph};
pub use vocab::Vocab;
