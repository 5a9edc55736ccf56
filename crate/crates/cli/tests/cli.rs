use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cardan::dataset::synthesize;
use cardan::image::ImageShape;
use cardan::pipeline::write_stego;

fn cardan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardan")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// An oracle model and a matching 32x32 cover.
fn fixture() -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let model = path(dir.path(), "model.bin");
    let out = cardan(&[
        "train", "--family", "oracle", "--size", "32", "--latent-dim", "6", "--synthetic", "4", "-o", &model,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cover = PathBuf::from(path(dir.path(), "cover.png"));
    write_stego(&cover, synthesize(1, ImageShape::new(32, 32, 3), 2).unwrap().image(0)).unwrap();
    (dir, model, cover.to_str().unwrap().to_string())
}

fn hide(model: &str, cover: &str, extra: &[&str]) -> Output {
    let mut args = vec!["hide", "--model", model, "--cover", cover, "--budget", "5"];
    args.extend_from_slice(extra);
    cardan(&args)
}

#[test]
fn hide_then_extract_roundtrip() {
    let (dir, model, cover) = fixture();
    let stego = path(dir.path(), "stego.png");
    let grille = path(dir.path(), "grille.txt");
    let trace = path(dir.path(), "trace.csv");
    let out = hide(
        &model,
        &cover,
        &[
            "--key", "00ff10", "--grille-size", "12", "--si", "6", "--mode", "hard", "--message-hex", "c0ffee",
            "-o", &stego, "--grille-out", &grille, "--trace", &trace,
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&format!("{stego}.json")).exists());

    let got = cardan(&["extract", "--stego", &stego, "--grille", &grille]);
    assert_eq!(code(&got), 0, "{}", String::from_utf8_lossy(&got.stderr));
    assert_eq!(String::from_utf8_lossy(&got.stdout).trim(), "c0ffee");

    let bits = cardan(&[
        "extract", "--stego", &stego, "--key", "00ff10", "--grille-size", "12", "--si", "6", "--length", "24",
        "--format", "bits",
    ]);
    assert_eq!(String::from_utf8_lossy(&bits.stdout).trim(), "110000001111111111101110");

    let svg = path(dir.path(), "trace.svg");
    assert_eq!(code(&cardan(&["plot", "--csv", &trace, "-o", &svg])), 0);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn capacity_overflow_exits_3() {
    let (dir, model, cover) = fixture();
    // a 2x2 grille at si 7 holds at most 12 bits
    let out = hide(
        &model,
        &cover,
        &["--key", "01", "--grille-size", "2", "--density", "1", "--si", "7", "--zeros", "13", "-o", &path(dir.path(), "s.png")],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn lossy_output_and_bad_grille_exit_4() {
    let (dir, model, cover) = fixture();
    let out = hide(&model, &cover, &["--key", "01", "--zeros", "8", "-o", &path(dir.path(), "s.jpg")]);
    assert_eq!(code(&out), 4);

    let bad = path(dir.path(), "bad.txt");
    std::fs::write(&bad, "NOT-A-GRILLE\n").unwrap();
    let out = cardan(&["extract", "--stego", &cover, "--grille", &bad, "--length", "8"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn shape_and_window_mismatch_exit_5() {
    let (dir, model, _) = fixture();
    let big = PathBuf::from(path(dir.path(), "big.png"));
    write_stego(&big, synthesize(1, ImageShape::new(40, 40, 3), 2).unwrap().image(0)).unwrap();
    let out = hide(&model, big.to_str().unwrap(), &["--key", "01", "--zeros", "8", "-o", &path(dir.path(), "s.png")]);
    assert_eq!(code(&out), 5);

    let out = cardan(&[
        "extract", "--stego", big.to_str().unwrap(), "--key", "01", "--grille-size", "8", "--offset", "36,0",
        "--length", "8",
    ]);
    assert_eq!(code(&out), 5);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&cardan(&["hide"])), 2);
    assert_eq!(code(&cardan(&["no-such-command"])), 2);
}

#[test]
fn experiment_commands_write_csvs() {
    let (dir, model, cover) = fixture();
    let ber = path(dir.path(), "ber.csv");
    let out = cardan(&[
        "eval-ber", "--model", &model, "--synthetic", "2", "--si", "6,7", "--budgets", "2,4", "--trials", "2",
        "--grille-size", "8", "-o", &ber,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&ber).unwrap();
    assert!(text.starts_with("mode,si,budget,trials,mean_ber,min_ber,max_ber,seed,model\n"));
    assert_eq!(text.lines().count(), 5);

    let sweep_dir = path(dir.path(), "sweep");
    let out = cardan(&[
        "sweep-grille", "--model", &model, "--cover", &cover, "--sizes", "8,24", "--budget", "3", "--out-dir", &sweep_dir,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["sweep.csv", "stego_8.png", "stego_24.png", "sweep.svg"] {
        assert!(Path::new(&sweep_dir).join(f).exists(), "{f}");
    }

    let zero_dir = path(dir.path(), "zero");
    let out = cardan(&[
        "zero-message", "--model", &model, "--cover", &cover, "--key", "ab", "--grille-size", "8", "--budget", "5",
        "--out-dir", &zero_dir,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["stego.png", "stego.png.json", "trace.csv", "iter_00005.png"] {
        assert!(Path::new(&zero_dir).join(f).exists(), "{f}");
    }
}
