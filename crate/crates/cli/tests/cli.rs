use std::path::Path;
use std::process::{Command, Output};

use rmk_core::tensor::rmkt;
use rmk_core::Tensor64;

fn rmk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmk")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .to_string()
}

#[test]
fn param_count_prints_exact_ratios() {
    let o = rmk(&["param-count"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ratios: 2/5 2/7 2/9 2/11"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c1.toml", "[params]\nchannels = 1\n");
    let text = stdout(&rmk(&["param-count", "--config", &cfg]));
    let row = text.lines().find(|l| l.trim_start().starts_with("7 ")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols, ["7", "14", "49", "2/7"]);
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[network]\nstrips = 5\n");
    let o = rmk(&["param-count", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strips"));

    for text in ["[network]\nomega = 3.0\n", "[network]\nstrip = 6\n", "[eval]\nmode = \"psychic\"\n"] {
        let cfg = write_config(dir.path(), "range.toml", text);
        assert_eq!(rmk(&["eval", "--config", &cfg]).status.code(), Some(2), "{text}");
    }
    assert_eq!(rmk(&["param-count", "--config", "/nonexistent/rmk.toml"]).status.code(), Some(2));
    assert_eq!(rmk(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn forward_dumps_documented_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.toml", "[data]\nheight = 256\nwidth = 256\n");
    let out = dir.path().join("zero");
    let o = rmk(&["forward", "--config", &cfg, "--zero-weights", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for line in ["M1 1x40x64x64", "M4 1x40x8x8", "CP2 1x40x32x32", "N5 1x40x8x8", "F5 1x144x8x8", "logits3 1x2x32x32", "boxes5 1x6x8x8"] {
        assert!(text.lines().any(|l| l == line), "missing {line}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 22);
    for entry in std::fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "rmkt") {
            let t: Tensor64 = rmkt::load(&p).unwrap();
            assert!(t.data().iter().all(|&v| v == 0.0), "{}", p.display());
        }
    }
}

#[test]
fn forward_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = rmk(&["forward", "--seed", "3", "--dtype", "f32", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 23);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn forward_rejects_bad_extents_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), "g.toml", "[data]\nheight = 200\nwidth = 200\n");
    let o = rmk(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not divisible by 64"));

    let img = dir.path().join("img.rmkt");
    rmkt::save(&Tensor64::zeros(&[1, 1, 64, 96]).unwrap(), &img).unwrap();
    let o = rmk(&["forward", "--image", img.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(rmk(&["forward"]).status.code(), Some(2), "no output directory");
}

#[test]
fn forward_reads_pgm_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = write_config(dir.path(), "d.toml", "[data]\nimages = 1\nheight = 64\nwidth = 128\nmin_size = 8\nmax_size = 20\n");
    assert_eq!(rmk(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]).status.code(), Some(0));
    let img = data.join("scene_0000.pgm");
    let out = dir.path().join("o");
    let o = rmk(&["forward", "--image", img.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "logits3 1x2x8x16"));
}

#[test]
fn gradcheck_passes_in_both_precisions() {
    for dtype in ["f64", "f32"] {
        let o = rmk(&["gradcheck", "--dtype", dtype]);
        assert_eq!(o.status.code(), Some(0), "{dtype}:\n{}", stdout(&o));
        let text = stdout(&o);
        assert!(!text.contains("FAIL"));
        assert!(text.contains("tiny assembly 64x64"));
        assert!(text.contains("linear composite"));
    }
}

#[test]
fn angle_codec_commands() {
    let o = rmk(&["angle-codec", "decode", "0", "-1"]);
    assert_eq!(o.status.code(), Some(0));
    let theta: f64 = stdout(&o).trim().parse().unwrap();
    assert!((theta - 1.5 * std::f64::consts::PI).abs() < 1e-15);

    let o = rmk(&["angle-codec", "--omega", "2", "decode", "0", "-3"]);
    let theta: f64 = stdout(&o).trim().parse().unwrap();
    assert!((theta - 0.75 * std::f64::consts::PI).abs() < 1e-15);

    let o = rmk(&["angle-codec", "encode", "0"]);
    assert_eq!(stdout(&o).trim(), "0 1 0");

    assert_eq!(rmk(&["angle-codec", "decode", "0", "0"]).status.code(), Some(2));
    assert_eq!(rmk(&["angle-codec", "encode", "7"]).status.code(), Some(2));

    for omega in ["0.5", "1", "2"] {
        let o = rmk(&["angle-codec", "--omega", omega, "stats", "--samples", "20000"]);
        let worst: f64 = value(&stdout(&o), "max_error").parse().unwrap();
        assert!(worst <= 1e-9, "omega {omega}: {worst}");
    }
}

#[test]
fn angle_codec_round_trips_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let angles = Tensor64::new(vec![2, 3], vec![0.0, 0.5, 1.0, 3.0, 5.0, 6.28]).unwrap();
    let (a, c, back) = (dir.path().join("a.rmkt"), dir.path().join("c.rmkt"), dir.path().join("b.rmkt"));
    rmkt::save(&angles, &a).unwrap();
    let o = rmk(&["angle-codec", "encode-file", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(rmkt::load::<f64>(&c).unwrap().dims(), &[2, 3, 2]);
    let o = rmk(&["angle-codec", "decode-file", c.to_str().unwrap(), back.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got: Tensor64 = rmkt::load(&back).unwrap();
    assert_eq!(got.dims(), angles.dims());
    assert!(got.max_abs_diff(&angles).unwrap() <= 1e-12);
}

#[test]
fn boundary_experiment_report_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = rmk(&["boundary-exp", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(value(&text, "eaem_lower_error"), "true");
    assert_eq!(std::fs::read_to_string(out.join("report.txt")).unwrap(), text);
    let csv = std::fs::read_to_string(out.join("traces.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,eaem_chord,direct_smoothl1"));
    assert_eq!(csv.lines().count(), 502);
    assert_eq!(stdout(&rmk(&["boundary-exp"])), text, "not reproducible");
}

#[test]
fn eval_oracle_and_empty_modes() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = write_config(dir.path(), "o.toml", "[eval]\nmode = \"oracle\"\n");
    let text = stdout(&rmk(&["eval", "--config", &oracle]));
    assert_eq!(value(&text, "map"), "1.000000");
    assert_eq!(value(&text, "map_50_95"), "1.000000");
    let empty = write_config(dir.path(), "e.toml", "[eval]\nmode = \"empty\"\n");
    let text = stdout(&rmk(&["eval", "--config", &empty]));
    assert_eq!(value(&text, "map"), "0.000000");
}

/// Pinned output of the seeded default evaluation; any change to weights
/// initialization, the forward pass, decoding, NMS or matching moves it.
#[test]
fn eval_regression_anchor() {
    let a = rmk(&["eval"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let text = stdout(&a);
    assert_eq!(value(&text, "truth_boxes"), "14");
    assert_eq!(value(&text, "detections"), "400");
    assert_eq!(value(&text, "map"), "0.006781");
    assert_eq!(value(&text, "map_50_95"), "0.001399");
    assert_eq!(stdout(&rmk(&["eval"])), text);
}

#[test]
fn eval_rejects_impossible_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "crowded.toml",
        "[data]\nheight = 64\nwidth = 64\nmin_objects = 40\nmax_objects = 40\nmin_size = 30\nmax_size = 40\n",
    );
    let o = rmk(&["eval", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene"));
}

#[test]
fn gen_data_writes_readable_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scenes");
    let o = rmk(&["gen-data", "--seed", "42", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 4);
    let boxes: Vec<rmk_core::OrientedBox64> =
        rmk_core::geometry::annotations::read_annotations(&out.join("scene_0000.txt")).unwrap();
    assert!(!boxes.is_empty());
    let img: Tensor64 = rmk_core::geometry::pgm::read_pgm(&out.join("scene_0000.pgm")).unwrap();
    assert_eq!(img.dims(), &[1, 1, 128, 128]);
    let again = dir.path().join("again");
    rmk(&["gen-data", "--seed", "42", "--out", again.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(out.join("scene_0003.pgm")).unwrap(),
        std::fs::read(again.join("scene_0003.pgm")).unwrap()
    );
}
