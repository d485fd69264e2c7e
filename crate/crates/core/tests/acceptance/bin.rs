use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const NAME: &str = if cfg!(windows) { "normball.exe" } else { "normball" };

fn build(profile_dir: &Path) -> Result<(), String> {
    let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
    let mut cmd = Command::new(cargo);
    cmd.args(["build", "--quiet", "-p", "normball-cli"]);
    if profile_dir.file_name().is_some_and(|n| n == "release") {
        cmd.arg("--release");
    }
    let status = cmd.status().map_err(|e| format!("cargo build: {e}"))?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("cargo build -p normball-cli exited with {status}"))
    }
}

fn locate() -> Result<PathBuf, String> {
    if let Some(p) = std::env::var_os("NORMBALL_BIN") {
        return Ok(PathBuf::from(p));
    }
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    // target/<profile>/deps/acceptance-<hash>
    let profile_dir = exe
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| format!("unexpected test binary location {}", exe.display()))?
        .to_path_buf();
    let candidate = profile_dir.join(NAME);
    if !candidate.exists() {
        build(&profile_dir)?;
    }
    if candidate.exists() {
        Ok(candidate)
    } else {
        Err(format!("{} not found after building", candidate.display()))
    }
}

/// Path of the `normball` binary, building it once if needed.
pub fn path() -> Result<&'static Path, String> {
    static BIN: OnceLock<Result<PathBuf, String>> = OnceLock::new();
    BIN.get_or_init(locate).as_deref().map_err(Clone::clone)
}

pub fn run(args: &[&str]) -> Result<Output, String> {
    let bin = path()?;
    Command::new(bin)
        .args(args)
        .env_remove("NORMBALL_OUT")
        .output()
        .map_err(|e| format!("{}: {e}", bin.display()))
}

pub fn code(args: &[&str]) -> Result<i32, String> {
    Ok(run(args)?.status.code().unwrap_or(-1))
}

/// Runs and requires success; returns stdout.
pub fn ok(args: &[&str]) -> Result<String, String> {
    let out = run(args)?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()))
    }
}

pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.sort();
    v
}

pub fn name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// The single file in `dir` named `prefix*ext`.
pub fn only(dir: &Path, prefix: &str, ext: &str) -> Result<PathBuf, String> {
    let hits: Vec<PathBuf> = files(dir)
        .into_iter()
        .filter(|p| {
            let n = name(p);
            n.starts_with(prefix) && n.ends_with(ext)
        })
        .collect();
    match hits.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(format!("expected one {prefix}*{ext} in {}, found {}", dir.display(), hits.len())),
    }
}

/// Every CSV directly under `dir` (or one level below), by relative name.
pub fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for p in files(dir) {
        if p.is_dir() {
            for q in files(&p) {
                if q.extension().is_some_and(|e| e == "csv") {
                    out.push((format!("{}/{}", name(&p), name(&q)), fs::read(&q).unwrap_or_default()));
                }
            }
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push((name(&p), fs::read(&p).unwrap_or_default()));
        }
    }
    out.sort();
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Tiny training settings for command-line runs.
pub const TINY_TRAIN: &str = "\
model.hidden_dim = 16
model.num_layers = 2
loss.batch_size = 16
loss.epochs = 2
loss.batches_per_epoch = 4
loss.validation_size = 32
";

pub const TINY_RL: [&str; 18] = [
    "--set", "risk_members=1",
    "--set", "risk.model.hidden_dim=16",
    "--set", "risk.model.num_layers=2",
    "--set", "risk.loss.epochs=1",
    "--set", "risk.loss.batches_per_epoch=3",
    "--set", "risk.loss.batch_size=16",
    "--set", "c51.epochs=2",
    "--set", "c51.batches_per_epoch=4",
    "--set", "c51.hidden_dim=16",
];
