//! CLI behavior: determinism, exit codes, accounting, and format handling,
//! driving the installed binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn drc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drc"))
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("drc-cli-test-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("vocab.txt"),
            "sky\nwater\nrock\ngrass\nsand\ntree\ncloud\nsnow\n",
        )
        .unwrap();
        std::fs::write(dir.join("tags.txt"), "water\nrock 0 0 2 2\n").unwrap();
        let mut pgm = b"P5\n8 8\n255\n".to_vec();
        for y in 0..8u32 {
            for x in 0..8u32 {
                pgm.push((100 + 10 * x + 8 * y) as u8);
            }
        }
        std::fs::write(dir.join("input.pgm"), pgm).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn encode_args(ws: &Workspace, out: &Path) -> Vec<String> {
    [
        "encode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--tags",
        ws.path("tags.txt").to_str().unwrap(),
        "--seed",
        "9",
        "--te",
        "10",
        ws.path("input.pgm").to_str().unwrap(),
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn encode_decode_is_deterministic() {
    let ws = Workspace::new("determinism");
    let a = ws.path("a.drc");
    let b = ws.path("b.drc");
    run_ok(drc().args(encode_args(&ws, &a)));
    run_ok(drc().args(encode_args(&ws, &b)));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // Decode twice: byte-identical reconstructions.
    let r1 = ws.path("r1.f64");
    let r2 = ws.path("r2.f64");
    run_ok(drc().args([
        "decode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        a.to_str().unwrap(),
        r1.to_str().unwrap(),
    ]));
    run_ok(drc().args([
        "decode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        a.to_str().unwrap(),
        r2.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

#[test]
fn missing_vocabulary_exits_3_naming_path() {
    let ws = Workspace::new("novocab");
    let out = drc()
        .args([
            "encode",
            "--vocab",
            ws.path("absent.txt").to_str().unwrap(),
            ws.path("input.pgm").to_str().unwrap(),
            ws.path("x.drc").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.txt"), "diagnostic must name the path: {stderr}");
}

#[test]
fn corrupted_magic_exits_4() {
    let ws = Workspace::new("badmagic");
    let stream = ws.path("s.drc");
    run_ok(drc().args(encode_args(&ws, &stream)));
    let mut bytes = std::fs::read(&stream).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(ws.path("bad.drc"), bytes).unwrap();
    let out = drc().args(["inspect", ws.path("bad.drc").to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn inspect_accounts_for_every_bit() {
    let ws = Workspace::new("inspect");
    let stream = ws.path("s.drc");
    run_ok(drc().args(encode_args(&ws, &stream)));
    let out = run_ok(drc().args([
        "inspect",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        stream.to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    let field = |key: &str| -> u64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("missing {key} in output:\n{text}"))
    };
    let file_bits = field("file_bits=");
    let sum_bits = field("sum_bits=");
    assert_eq!(file_bits, sum_bits);
    assert_eq!(file_bits, std::fs::read(&stream).unwrap().len() as u64 * 8);
    assert!(text.contains("prompt.0: k=2 tags=water,rock"), "{text}");
}

#[test]
fn explicit_only_stream_has_empty_rcc_section() {
    let ws = Workspace::new("teo");
    let stream = ws.path("s.drc");
    run_ok(drc().args([
        "encode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--te",
        "0",
        ws.path("input.pgm").to_str().unwrap(),
        stream.to_str().unwrap(),
    ]));
    let out = run_ok(drc().args(["inspect", stream.to_str().unwrap()]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("section.Rcc: payload_bits=0"),
        "T_E=0 stream should carry an empty rcc section:\n{text}"
    );
    run_ok(drc().args([
        "decode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        stream.to_str().unwrap(),
        ws.path("r.pgm").to_str().unwrap(),
    ]));
}

#[test]
fn bench_suites_are_seed_deterministic() {
    let ws = Workspace::new("bench");
    let run = || {
        run_ok(drc().args([
            "bench",
            "pfr-bound",
            "--vocab",
            ws.path("vocab.txt").to_str().unwrap(),
            "--trials",
            "50",
            "--seed",
            "5",
        ]))
    };
    let a = run();
    let b = run();
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.starts_with("kl_bits\t"), "table header expected: {text}");
    assert_eq!(text.lines().count(), 6, "5 KL rows plus header");

    let out = drc()
        .args(["bench", "nope", "--vocab", ws.path("vocab.txt").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "unknown suite is a config error");
}

#[test]
fn raw_grid_round_trip_through_cli() {
    let ws = Workspace::new("rawgrid");
    // 6x10 raw f64 grid.
    let mut raw = Vec::new();
    raw.extend_from_slice(&6u64.to_le_bytes());
    raw.extend_from_slice(&10u64.to_le_bytes());
    for i in 0..60 {
        raw.extend_from_slice(&((i as f64 * 0.1).sin()).to_le_bytes());
    }
    std::fs::write(ws.path("in.f64"), raw).unwrap();
    let stream = ws.path("s.drc");
    run_ok(drc().args([
        "encode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--te",
        "6",
        ws.path("in.f64").to_str().unwrap(),
        stream.to_str().unwrap(),
    ]));
    run_ok(drc().args([
        "decode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        stream.to_str().unwrap(),
        ws.path("out.f64").to_str().unwrap(),
    ]));
    let out = std::fs::read(ws.path("out.f64")).unwrap();
    assert_eq!(u64::from_le_bytes(out[0..8].try_into().unwrap()), 6);
    assert_eq!(u64::from_le_bytes(out[8..16].try_into().unwrap()), 10);
    assert_eq!(out.len(), 16 + 60 * 8);
}

#[test]
fn external_decoder_matrix_loads() {
    let ws = Workspace::new("matrix");
    // 8x4 matrix with orthogonal columns: two unit entries per column.
    let mut m = vec![0.0f64; 32];
    for col in 0..4 {
        m[(2 * col) * 4 + col] = 1.0;
        m[(2 * col + 1) * 4 + col] = 0.7;
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&8u64.to_le_bytes());
    bytes.extend_from_slice(&4u64.to_le_bytes());
    for v in &m {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(ws.path("dec.mat"), bytes).unwrap();
    std::fs::write(
        ws.path("model.cfg"),
        format!(
            "decoder_matrix={}\nmodel.latent_rows=2\nmodel.latent_cols=2\nmodel.pixel_rows=2\nmodel.pixel_cols=4\ntile=4\noverlap=0\n",
            ws.path("dec.mat").display()
        ),
    )
    .unwrap();
    // 2x4 raw input.
    let mut raw = Vec::new();
    raw.extend_from_slice(&2u64.to_le_bytes());
    raw.extend_from_slice(&4u64.to_le_bytes());
    for i in 0..8 {
        raw.extend_from_slice(&(i as f64 * 0.2 - 0.8).to_le_bytes());
    }
    std::fs::write(ws.path("in.f64"), raw).unwrap();
    run_ok(drc().args([
        "encode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--config",
        ws.path("model.cfg").to_str().unwrap(),
        "--te",
        "4",
        ws.path("in.f64").to_str().unwrap(),
        ws.path("s.drc").to_str().unwrap(),
    ]));
    run_ok(drc().args([
        "decode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--config",
        ws.path("model.cfg").to_str().unwrap(),
        ws.path("s.drc").to_str().unwrap(),
        ws.path("out.f64").to_str().unwrap(),
    ]));
    let out = std::fs::read(ws.path("out.f64")).unwrap();
    assert_eq!(u64::from_le_bytes(out[0..8].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(out[8..16].try_into().unwrap()), 4);
}

#[test]
fn config_file_resolves_and_flags_override() {
    let ws = Workspace::new("config");
    std::fs::write(ws.path("run.cfg"), "te=4\ntau=0.5\nseed=100\n").unwrap();
    let stream = ws.path("s.drc");
    let out = run_ok(drc().args([
        "encode",
        "--vocab",
        ws.path("vocab.txt").to_str().unwrap(),
        "--config",
        ws.path("run.cfg").to_str().unwrap(),
        "--te",
        "7", // flag wins over the file
        ws.path("input.pgm").to_str().unwrap(),
        stream.to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("te=7\n"), "flag should override config: {text}");
    assert!(text.contains("tau=0.5\n"), "config value should survive: {text}");
    assert!(text.contains("seed=100\n"));
}
