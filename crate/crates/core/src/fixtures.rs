//! The shipped fixture suite. The JSON files under `fixtures/` are generated
//! from these definitions and a test keeps them in sync.

use crate::model::{FunctionSpec, Grids, ModelFile, SCHEMA_VERSION};

fn base(name: &str) -> ModelFile {
    ModelFile {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        labels: None,
        kernel: None,
        generator: None,
        weight_v: None,
        weight_v2: None,
        phi: None,
        psi: None,
        xi: None,
        harris_r: None,
        coupling: None,
        grids: Grids::default(),
        tol: 1e-9,
    }
}

pub fn two_state() -> ModelFile {
    ModelFile { kernel: Some(vec![vec![0.7, 0.3], vec![0.4, 0.6]]), grids: Grids { n_max: 100, ..Grids::default() }, ..base("two_state") }
}

pub fn three_state_harris() -> ModelFile {
    ModelFile {
        kernel: Some(vec![vec![0.8, 0.2, 0.0], vec![0.6, 0.2, 0.2], vec![0.0, 0.6, 0.4]]),
        weight_v: Some(vec![1.0, 2.0, 4.0]),
        harris_r: Some(6.0),
        ..base("three_state_harris")
    }
}

/// Lazy walk on `{0..n−1}`: down 0.3, up 0.2, blocked moves stay put.
pub fn walk_kernel(n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] += 0.5;
        row[if i > 0 { i - 1 } else { i }] += 0.3;
        row[if i + 1 < n { i + 1 } else { i }] += 0.2;
    }
    rows
}

pub fn reflected_walk() -> ModelFile {
    let n = 100;
    ModelFile {
        kernel: Some(walk_kernel(n)),
        weight_v: Some((0..n).map(|i| ((1 + i) as f64).powi(2)).collect()),
        phi: Some(FunctionSpec::Power { exponent: 0.5 }),
        psi: Some(FunctionSpec::PsiBuilder { r: 16.0, eps: 0.5 }),
        grids: Grids { n_max: 500, ..Grids::default() },
        ..base("reflected_walk")
    }
}

/// Birth rate `birth`, death rate `death` on `{0..n−1}`.
pub fn birth_death_generator(n: usize, birth: f64, death: f64) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        if i + 1 < n {
            rows[i][i + 1] = birth;
        }
        if i > 0 {
            rows[i][i - 1] = death;
        }
        rows[i][i] = -rows[i].iter().sum::<f64>();
    }
    rows
}

pub fn birth_death() -> ModelFile {
    let n = 40;
    ModelFile {
        generator: Some(birth_death_generator(n, 0.4, 0.6)),
        weight_v: Some((0..n).map(|i| ((1 + i) as f64).powi(2)).collect()),
        phi: Some(FunctionSpec::Power { exponent: 0.5 }),
        psi: Some(FunctionSpec::PsiBuilder { r: 16.0, eps: 0.5 }),
        grids: Grids { t_max: 50.0, t_points: 50, ..Grids::default() },
        ..base("birth_death")
    }
}

pub fn period_two() -> ModelFile {
    ModelFile { kernel: Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), ..base("period_two") }
}

pub fn block_diagonal() -> ModelFile {
    ModelFile {
        kernel: Some(vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.0, 0.0, 0.6, 0.4],
        ]),
        ..base("block_diagonal")
    }
}

/// All shipped fixtures in a fixed order.
pub fn suite() -> Vec<ModelFile> {
    vec![two_state(), three_state_harris(), reflected_walk(), birth_death(), period_two(), block_diagonal()]
}

pub fn to_json(m: &ModelFile) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("fixture serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, validate_model};

    fn dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    #[test]
    fn fixtures_validate() {
        for m in suite() {
            validate_model(m.clone()).unwrap_or_else(|e| panic!("{}: {e}", m.name));
        }
    }

    #[test]
    fn fixture_files_match_definitions() {
        for m in suite() {
            let path = dir().join(format!("{}.json", m.name));
            let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(text, to_json(&m), "{} is stale; run the ignored `write_fixture_files` test", path.display());
            assert_eq!(parse_model(&text).unwrap().file, m);
        }
    }

    #[test]
    #[ignore = "regenerates fixtures/*.json; run explicitly"]
    fn write_fixture_files() {
        std::fs::create_dir_all(dir()).unwrap();
        for m in suite() {
            std::fs::write(dir().join(format!("{}.json", m.name)), to_json(&m)).unwrap();
        }
    }
}
