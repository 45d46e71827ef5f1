use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glstyle_cli::ingest::{load_image, save_png};
use glstyle_cli::LOSS_CSV_HEADER;
use glstyle_core::{BackboneWeights, FeatureMap};

struct Fixture {
    dir: tempfile::TempDir,
    weights: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let weights = dir.path().join("vgg.safetensors");
        BackboneWeights::random_vgg19(3).save(&weights).unwrap();
        Self { dir, weights }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn photo(&self, name: &str, h: usize, w: usize, phase: f64) -> PathBuf {
        let img = FeatureMap::from_fn(h, w, 3, |y, x, k| 127.5 + 100.0 * ((y as f64 * 0.7 + x as f64 * 0.3 + k as f64 + phase).sin()));
        let p = self.path(name);
        save_png(&img, &p).unwrap();
        p
    }

    fn glstyle(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_glstyle"))
            .args(args)
            .env_remove("GLSTYLE_WEIGHTS")
            .env("RUST_LOG", "warn")
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn loss_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LOSS_CSV_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn run_writes_outputs_and_snapshots() {
    let fx = Fixture::new();
    let (c, st) = (fx.photo("c.png", 28, 22, 0.0), fx.photo("s.png", 24, 24, 1.0));
    let out = fx.path("out.png");
    let o = fx.glstyle(&[
        "--content", s(&c), "--style", s(&st), "--output", s(&out), "--weights-archive", s(&fx.weights),
        "--iters", "5", "--snapshot-every", "2",
    ]);
    assert_ok(&o);
    // 28×22 is enlarged to 32×24.
    assert_eq!(load_image(&out).unwrap().shape(), (32, 24, 3));
    let rows = loss_rows(&fx.path("out.loss.csv"));
    let iterations = rows.len() - 1;
    assert!((1..=5).contains(&iterations));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 7);
        assert_eq!(r[0], i.to_string());
        assert!(r[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    let snaps: Vec<_> = std::fs::read_dir(fx.dir.path())
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("out.iter"))
        .collect();
    assert_eq!(snaps.len(), iterations / 2, "{snaps:?}");
    let echo = std::fs::read_to_string(fx.path("out.config.json")).unwrap();
    for key in ["\"alpha\": 10.0", "\"sigma\": 1.0", "\"scheme\": \"g\"", "\"init\": \"content\"", "\"max_iters\": 5"] {
        assert!(echo.contains(key), "{key} missing from {echo}");
    }
}

#[test]
fn rerun_from_echo_is_bitwise_identical() {
    let fx = Fixture::new();
    let (c, st) = (fx.photo("c.png", 24, 24, 0.0), fx.photo("s.png", 24, 32, 2.0));
    let first = fx.path("first.png");
    assert_ok(&fx.glstyle(&[
        "--content", s(&c), "--style", s(&st), "--output", s(&first), "--weights-archive", s(&fx.weights),
        "--iters", "4", "--init", "noise", "--seed", "9", "--scheme", "3+4",
    ]));
    let second = fx.path("second.png");
    assert_ok(&fx.glstyle(&["--config", s(&fx.path("first.config.json")), "--output", s(&second)]));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let strip = |rows: Vec<Vec<String>>| rows.into_iter().map(|mut r| { r.pop(); r }).collect::<Vec<_>>();
    assert_eq!(strip(loss_rows(&fx.path("first.loss.csv"))), strip(loss_rows(&fx.path("second.loss.csv"))));
}

#[test]
fn identical_pair_without_style_stays_at_content() {
    let fx = Fixture::new();
    let c = fx.photo("c.png", 24, 24, 0.5);
    let out = fx.path("same.png");
    assert_ok(&fx.glstyle(&[
        "--content", s(&c), "--style", s(&c), "--output", s(&out), "--weights-archive", s(&fx.weights),
        "--beta", "0", "--gamma", "0", "--sigma", "0", "--iters", "10",
    ]));
    let (a, b) = (load_image(&out).unwrap(), load_image(&c).unwrap());
    assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= 1.0));
}

#[test]
fn semantic_maps_are_accepted() {
    let fx = Fixture::new();
    let (c, st) = (fx.photo("c.png", 24, 24, 0.0), fx.photo("s.png", 24, 24, 1.0));
    let halves = |flip: bool| FeatureMap::from_fn(24, 24, 3, |y, _, k| if (y < 12) ^ flip { [255.0, 0.0, 0.0][k] } else { 0.0 });
    let (cs, ss) = (fx.path("cs.png"), fx.path("ss.png"));
    save_png(&halves(false), &cs).unwrap();
    save_png(&halves(true), &ss).unwrap();
    let out = fx.path("sem.png");
    assert_ok(&fx.glstyle(&[
        "--content", s(&c), "--style", s(&st), "--content-sem", s(&cs), "--style-sem", s(&ss), "--output", s(&out),
        "--weights-archive", s(&fx.weights), "--iters", "2", "--sem-attach", "once", "--match-every", "2",
    ]));
    assert!(out.exists());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let fx = Fixture::new();
    let c = fx.photo("c.png", 16, 16, 0.0);
    let out = fx.path("o.png");

    let o = fx.glstyle(&["--content", s(&c), "--style", s(&c), "--output", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("GLSTYLE_WEIGHTS"));

    let o = fx.glstyle(&["--content", s(&c), "--style", s(&c), "--output", s(&out), "--content-sem", s(&c)]);
    assert!(!o.status.success());

    let o = fx.glstyle(&[
        "--content", s(&c), "--style", s(&c), "--output", s(&out), "--weights-archive", s(&fx.weights), "--scheme", "q",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("q"));

    let broken = fx.path("broken.safetensors");
    std::fs::write(&broken, b"not an archive").unwrap();
    let o = fx.glstyle(&["--content", s(&c), "--style", s(&c), "--output", s(&out), "--weights-archive", s(&broken)]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn benchmark_reports_csv() {
    let fx = Fixture::new();
    let o = fx.glstyle(&[
        "--benchmark", "--weights-archive", s(&fx.weights), "--bench-height", "32", "--bench-width", "24", "--bench-iters", "1",
        "--bench-scheme", "g", "--bench-scheme", "h",
    ]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "scheme,height,width,channels,pixels,mean_iter_seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("g,4,3,980,11760,"), "{}", lines[1]);
    assert!(lines[2].starts_with("h,8+4,6+3,261+517,"), "{}", lines[2]);

    let o = fx.glstyle(&["--benchmark", "--bench-height", "30", "--bench-width", "24", "--bench-iters", "1", "--bench-scheme", "c"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unpadded"));
}
