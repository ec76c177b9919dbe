use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::{AttrKind, Label, Subtype, SubtypeKind, TaskKind};
use super::program::{exec_fp, FunctionalProgram, Referent};
use super::scene::{Object, SceneGraph};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub qid: u64,
    pub scene_id: u64,
    pub task: TaskKind,
    pub subtype: Subtype,
    pub text: String,
    pub tokens: Vec<usize>,
    pub fp: FunctionalProgram,
    pub answer: Label,
}

/// Every descriptor that uses 1–3 attributes other than `exclude` (plus an
/// optional side filter) and matches `target` alone in `scene`.
pub fn unique_referents(scene: &SceneGraph, target: &Object, exclude: AttrKind) -> Vec<Referent> {
    let kinds: Vec<AttrKind> = AttrKind::ALL.iter().copied().filter(|&k| k != exclude).collect();
    let mut out = Vec::new();
    for mask in 1u32..(1 << kinds.len()) {
        for side in [None, Some(target.side(scene.grid_size))] {
            let mut r = Referent {
                side,
                ..Referent::default()
            };
            for (bit, &k) in kinds.iter().enumerate() {
                if mask & (1 << bit) == 0 {
                    continue;
                }
                match k {
                    AttrKind::Color => r.color = Some(target.color),
                    AttrKind::Shape => r.shape = Some(target.shape),
                    AttrKind::Material => r.material = Some(target.material),
                    AttrKind::Size => r.size = Some(target.size),
                }
            }
            let hits = scene
                .objects
                .iter()
                .filter(|o| r.matches(o, scene.grid_size))
                .count();
            if hits == 1 {
                out.push(r);
            }
        }
    }
    out
}

fn pick_referent<R: Rng>(
    rng: &mut R,
    scene: &SceneGraph,
    target: &Object,
    exclude: AttrKind,
) -> Option<Referent> {
    unique_referents(scene, target, exclude).choose(rng).copied()
}

fn wh_text(r: &Referent, attr: AttrKind) -> String {
    format!("what is the {attr} of {} ?", r.phrase())
}

fn yn_text(a: &Referent, b: &Referent, attr: AttrKind) -> String {
    format!("does {} have the same {attr} as {} ?", a.phrase(), b.phrase())
}

/// Builds one question of `task` about `attr` on `scene`.
///
/// Yes/no questions first draw the desired answer with probability 1/2 and
/// then look for an object pair realising it, which keeps the generated
/// stream balanced. Returns [`Error::Retry`] when the scene cannot support
/// the request; the caller should draw another scene. The returned question
/// has `qid` 0.
pub fn gen_question<R: Rng>(
    scene: &SceneGraph,
    task: TaskKind,
    attr: AttrKind,
    rng: &mut R,
    vocab: &Vocab,
) -> Result<Question> {
    let (fp, text) = match task {
        TaskKind::Wh => {
            let mut order: Vec<usize> = (0..scene.objects.len()).collect();
            order.shuffle(rng);
            let found = order.into_iter().find_map(|i| {
                pick_referent(rng, scene, &scene.objects[i], attr).map(|r| (i, r))
            });
            let (_, r) = found.ok_or(Error::Retry)?;
            (FunctionalProgram::query(&r, attr), wh_text(&r, attr))
        }
        TaskKind::Yn => {
            let want_yes = rng.gen_bool(0.5);
            let n = scene.objects.len();
            let mut pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j)
                .filter(|&(i, j)| {
                    (scene.objects[i].value(attr) == scene.objects[j].value(attr)) == want_yes
                })
                .collect();
            pairs.shuffle(rng);
            let mut chosen = None;
            for (i, j) in pairs {
                let Some(a) = pick_referent(rng, scene, &scene.objects[i], attr) else {
                    continue;
                };
                let Some(b) = pick_referent(rng, scene, &scene.objects[j], attr) else {
                    continue;
                };
                chosen = Some((a, b));
                break;
            }
            let (a, b) = chosen.ok_or(Error::Retry)?;
            (FunctionalProgram::equal(&a, &b, attr), yn_text(&a, &b, attr))
        }
    };
    let answer = exec_fp(&fp, scene)?;
    let tokens = vocab.tokenize(&text)?;
    let kind = match task {
        TaskKind::Wh => SubtypeKind::Query,
        TaskKind::Yn => SubtypeKind::Equal,
    };
    Ok(Question {
        qid: 0,
        scene_id: scene.scene_id,
        task,
        subtype: Subtype { kind, attr },
        text,
        tokens,
        fp,
        answer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::labels::{Color, Material, ObjShape, Size};
    use crate::synth::scene::{gen_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn o(color: Color, shape: ObjShape, material: Material, size: Size, col: usize) -> Object {
        Object {
            color,
            shape,
            material,
            size,
            row: 1,
            col,
        }
    }

    #[test]
    fn material_of_the_only_large_object() {
        let scene = SceneGraph {
            scene_id: 5,
            grid_size: 6,
            objects: vec![
                o(Color::Red, ObjShape::Cube, Material::Rubber, Size::Large, 0),
                o(Color::Red, ObjShape::Cube, Material::Metal, Size::Small, 1),
                o(Color::Red, ObjShape::Cube, Material::Metal, Size::Small, 2),
            ],
        };
        // Only the large object has a unique description avoiding material,
        // and `size` alone is among them.
        let refs = unique_referents(&scene, &scene.objects[0], AttrKind::Material);
        assert!(refs.contains(&Referent {
            size: Some(Size::Large),
            ..Referent::default()
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vocab = Vocab::standard();
        for _ in 0..20 {
            let q = gen_question(&scene, TaskKind::Wh, AttrKind::Material, &mut rng, &vocab).unwrap();
            assert_eq!(q.answer.name(), "rubber");
            assert!(q.text.starts_with("what is the material of the large"));
        }
        assert!(unique_referents(&scene, &scene.objects[0], AttrKind::Material)
            .iter()
            .any(|r| r.phrase() == "the large thing"));
        assert_eq!(
            wh_text(
                &Referent {
                    size: Some(Size::Large),
                    ..Referent::default()
                },
                AttrKind::Material
            ),
            "what is the material of the large thing ?"
        );
    }

    #[test]
    fn two_cubes_have_the_same_shape() {
        let scene = SceneGraph {
            scene_id: 1,
            grid_size: 6,
            objects: vec![
                o(Color::Red, ObjShape::Cube, Material::Rubber, Size::Large, 0),
                o(Color::Blue, ObjShape::Cube, Material::Metal, Size::Small, 4),
                o(Color::Blue, ObjShape::Cube, Material::Rubber, Size::Small, 5),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = Vocab::standard();
        let mut seen = 0;
        for _ in 0..50 {
            match gen_question(&scene, TaskKind::Yn, AttrKind::Shape, &mut rng, &vocab) {
                Ok(q) => {
                    assert_eq!(q.answer, Label::YES);
                    seen += 1;
                }
                Err(Error::Retry) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn yes_rate_is_balanced_over_ten_thousand_questions() {
        let cfg = SceneConfig::default();
        let vocab = Vocab::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut yes, mut total, mut id) = (0usize, 0usize, 0u64);
        while total < 10_000 {
            let scene = gen_scene(&mut rng, &cfg, id).unwrap();
            id += 1;
            let attr = AttrKind::ALL[total % 4];
            if let Ok(q) = gen_question(&scene, TaskKind::Yn, attr, &mut rng, &vocab) {
                total += 1;
                yes += usize::from(q.answer == Label::YES);
            }
        }
        let rate = yes as f64 / total as f64;
        assert!((0.48..=0.52).contains(&rate), "yes-rate {rate}");
    }
}
