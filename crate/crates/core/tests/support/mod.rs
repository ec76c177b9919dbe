//! Reference implementations shared by the integration tests. They work on
//! the serialized JSON form, so they share no code with the crate.
#![allow(dead_code)]

use serde_json::Value;

pub const COLORS: [&str; 8] = ["gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow"];
pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const MATERIALS: [&str; 2] = ["rubber", "metal"];
pub const SIZES: [&str; 2] = ["small", "large"];

#[derive(Debug)]
enum State {
    Set(Vec<usize>),
    One(usize),
}

fn attr<'a>(scene: &'a Value, i: usize, name: &str) -> &'a str {
    scene["objects"][i][name].as_str().expect("attribute string")
}

fn is_left(scene: &Value, i: usize) -> bool {
    let g = scene["grid_size"].as_u64().unwrap();
    let col = scene["objects"][i]["col"].as_u64().unwrap();
    2 * col < g
}

fn run_to_object(steps: &[Value], scene: &Value) -> Result<usize, String> {
    let n = scene["objects"].as_array().unwrap().len();
    let mut state = State::Set((0..n).collect());
    for step in steps {
        let op = step["op"].as_str().unwrap();
        state = match (op, state) {
            ("unique", State::Set(s)) if s.len() == 1 => State::One(s[0]),
            ("unique", State::Set(s)) => return Err(format!("unique over {} objects", s.len())),
            ("filter_side", State::Set(s)) => {
                let want_left = step["arg"] == "left";
                State::Set(s.into_iter().filter(|&i| is_left(scene, i) == want_left).collect())
            }
            (f, State::Set(s)) if f.starts_with("filter_") => {
                let field = &f["filter_".len()..];
                let want = step["arg"].as_str().unwrap();
                State::Set(s.into_iter().filter(|&i| attr(scene, i, field) == want).collect())
            }
            (op, st) => return Err(format!("{op} cannot follow {st:?}")),
        };
    }
    match state {
        State::One(i) => Ok(i),
        State::Set(_) => Err("program never selected an object".into()),
    }
}

/// Runs a program given as its JSON step list and returns the answer name.
pub fn answer(program: &Value, scene: &Value) -> Result<String, String> {
    let steps = program.as_array().ok_or("program is not a list")?;
    let (last, body) = steps.split_last().ok_or("empty program")?;
    let target = run_to_object(body, scene)?;
    match last["op"].as_str().unwrap() {
        "query_attr" => Ok(attr(scene, target, last["arg"].as_str().unwrap()).to_string()),
        "equal_attr" => {
            let field = last["arg"]["attr"].as_str().unwrap();
            let other = run_to_object(last["arg"]["other"].as_array().unwrap(), scene)?;
            let same = attr(scene, target, field) == attr(scene, other, field);
            Ok(if same { "yes" } else { "no" }.to_string())
        }
        op => Err(format!("{op} is not a terminal step")),
    }
}

/// Builds the G×G×16 grid from the scene JSON.
pub fn features(scene: &Value) -> Vec<f64> {
    let g = scene["grid_size"].as_u64().unwrap() as usize;
    let mut out = vec![0.0; g * g * 16];
    for o in scene["objects"].as_array().unwrap() {
        let cell = o["row"].as_u64().unwrap() as usize * g + o["col"].as_u64().unwrap() as usize;
        let v = &mut out[cell * 16..(cell + 1) * 16];
        v[0] = 1.0;
        let pos = |list: &[&str], key: &str| list.iter().position(|&c| c == o[key]).unwrap();
        v[1 + pos(&COLORS, "color")] = 1.0;
        v[9 + pos(&SHAPES, "shape")] = 1.0;
        v[12 + pos(&MATERIALS, "material")] = 1.0;
        v[14 + pos(&SIZES, "size")] = 1.0;
    }
    out
}
