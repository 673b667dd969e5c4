use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TIMESTAMP_PREFIX: &str = "# generated unix=";

fn homog(sub: &str, config: &Path, out: &Path, jobs: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homog"));
    cmd.arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out);
    if let Some(j) = jobs {
        cmd.arg("--jobs").arg(j.to_string());
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Data lines (header and rows) of a CSV artifact.
fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn without_timestamp(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .collect::<Vec<_>>()
        .join("\n")
}

fn column(lines: &[String], name: &str) -> Vec<f64> {
    let header: Vec<&str> = lines[0].split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines[1..]
        .iter()
        .map(|l| {
            // Quoted fields only occur in the leading text columns.
            let cells = split_csv(l);
            cells[idx].parse().unwrap()
        })
        .collect()
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[test]
fn effective_on_constant_field_returns_the_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
field.family = "constant"
field.params.a0 = [[1.5, 0.2], [0.2, 1.0]]
field.params.mobility.mean = 2.0
effective.directions = ["k=[1,0]", "k=[1,2]"]
grid.s = 16
grid.m = 16
"#,
    );
    let out = homog("effective", &cfg, &dir.path().join("out"), None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = data_lines(&dir.path().join("out/effective.csv"));
    assert_eq!(lines.len(), 3);
    for (name, want) in [
        ("m_bar", 2.0),
        ("a_bar_11", 1.5),
        ("a_bar_12", 0.2),
        ("a_bar_22", 1.0),
    ] {
        for v in column(&lines, name) {
            assert!((v - want).abs() < 1e-12, "{name}: {v}");
        }
    }
}

#[test]
fn csv_carries_provenance_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "field.params.a0 = [[1.0, 0.0], [0.0, 1.0]]\neffective.directions = [\"k=[0,1]\"]\n",
    );
    let out = homog("effective", &cfg, dir.path(), None);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("effective.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# homog effective "));
    // Defaults are recorded too.
    assert!(lines[0].contains("grid.m=32") && lines[0].contains("field.family=\"constant\""));
    assert!(lines[1].starts_with(TIMESTAMP_PREFIX));
    assert!(lines[2].starts_with("direction,e_1,e_2,m_bar"));
}

#[test]
fn front_without_alpha_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "field.params.a0 = [[1.0, 0.0], [0.0, 1.0]]\nfront.direction = \"k=[0,1]\"\n",
    );
    let out = homog("front", &cfg, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("front.alpha"), "{err}");
}

#[test]
fn bad_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "field.params.a0 = [[1.0, 0.0], [0.0, 1.0]]\neffective.directions = [\"k=[0,1]\"]\ngrid.m = 24\n",
    );
    let out = homog("effective", &cfg, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.m"));
}

#[test]
fn numerical_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // A rational direction has small divisors in the Fourier corrector.
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
field.family = "isotropic-trig"
field.params.scalar.mean = 1.0
field.params.mobility.mean = 1.0
field.params.mobility.modes = [[0.5, 0.0, 1, 0]]
fourier.direction = "k=[1,0]"
"#,
    );
    let out = homog("fourier", &cfg, &dir.path().join("out"), None);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn output_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
field.family = "isotropic-trig"
field.params.scalar.mean = 2.0
field.params.scalar.modes = [[1.0, 0.0, 1, 0]]
field.params.mobility.mean = 1.0
field.params.mobility.modes = [[0.3, 0.0, 1, 1]]
effective.directions = ["k=[1,0]", "k=[1,1]", "k=[1,2]", "k=[2,1]"]
invariant.direction = "k=[1,2]"
invariant.steps = 40000
invariant.chains = 4
run.seed = 11
grid.m = 16
grid.s = 16
"#,
    );
    for sub in ["effective", "invariant"] {
        let a = dir.path().join(format!("{sub}_a"));
        let b = dir.path().join(format!("{sub}_b"));
        let c = dir.path().join(format!("{sub}_c"));
        assert!(homog(sub, &cfg, &a, Some(1)).status.success());
        assert!(homog(sub, &cfg, &b, Some(4)).status.success());
        assert!(homog(sub, &cfg, &c, Some(4)).status.success());
        let mut names: Vec<_> = std::fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for n in names {
            let x = without_timestamp(&a.join(&n));
            assert_eq!(
                x,
                without_timestamp(&b.join(&n)),
                "{n:?} differs between 1 and 4 workers"
            );
            assert_eq!(
                x,
                without_timestamp(&c.join(&n)),
                "{n:?} differs between identical runs"
            );
        }
    }
}

#[test]
fn sweep_on_laminar_field_witnesses_the_discontinuity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/sweep.toml");
    let out = homog("sweep", &cfg, dir.path(), None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = data_lines(&dir.path().join("sweep_limits.csv"));
    let a11 = column(&lines, "a_limit_11");
    // Harmonic mean of 1 + cos(2πt)/2 along η₀, plain average across it.
    let harmonic = 0.75f64.sqrt();
    assert!((a11[0] - harmonic).abs() < 1e-2, "{a11:?}");
    assert!((a11[1] - 1.0).abs() < 1e-2, "{a11:?}");
    let tilde = column(&lines, "a_tilde_11");
    assert!((tilde[0] - harmonic).abs() < 1e-8 && (tilde[1] - 1.0).abs() < 1e-8);
    let per_n = data_lines(&dir.path().join("sweep.csv"));
    assert_eq!(per_n.len() - 1, 2 * 3);
}

#[test]
fn quick_bundled_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for sub in ["effective", "limits", "fourier", "obstacle"] {
        let out = homog(
            sub,
            &configs.join(format!("{sub}.toml")),
            &dir.path().join(sub),
            None,
        );
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let lines = data_lines(&dir.path().join("obstacle/obstacle.csv"));
    for d in column(&lines, "difference") {
        assert!(d.abs() < 0.025, "{d}");
    }
    assert!(dir
        .path()
        .join("obstacle/obstacle_mask_0_r8_sub.pbm")
        .exists());
    let lines = data_lines(&dir.path().join("fourier/fourier.csv"));
    assert!(column(&lines, "residual_inf")[0] < 1e-10);
}
