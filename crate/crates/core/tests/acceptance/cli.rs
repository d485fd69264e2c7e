use std::fs;
use std::path::{Path, PathBuf};

use crate::bin::{self, csv_files, only, s, TINY_RL, TINY_TRAIN};
use crate::support::Checks;

/// Runs `args` into `<root>/<name>/a`, re-runs the written snapshot into
/// `<root>/<name>/b` and compares every CSV byte for byte.
fn round_trip(c: &mut Checks, root: &Path, name: &str, args: &[&str], rerun_flags: &[&str]) -> Option<PathBuf> {
    let (a, b) = (root.join(name).join("a"), root.join(name).join("b"));
    let mut first: Vec<&str> = args.to_vec();
    first.extend(["--out", s(&a)]);
    c.ok(bin::ok(&first), &format!("{name} run"))?;
    let snapshot = c.ok(only(&a, &format!("{name}_"), ".cfg"), &format!("{name} snapshot"))?;
    let mut again: Vec<&str> = rerun_flags.to_vec();
    again.extend([name, "--config", s(&snapshot), "--out", s(&b)]);
    c.ok(bin::ok(&again), &format!("{name} rerun"))?;
    let (left, right) = (csv_files(&a), csv_files(&b));
    c.check(!left.is_empty(), || format!("{name}: no CSV output"));
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if c.eq(names(&left), names(&right), &format!("{name} CSV set")) {
        for ((n, x), (_, y)) in left.iter().zip(&right) {
            c.check(x == y, || format!("{name}: {n} differs on rerun"));
        }
    }
    let label = root.file_name().filter(|_| name == "rl").map(|r| format!("rl {}", r.to_string_lossy())).unwrap_or_else(|| name.into());
    c.note(format!("{label} {} CSVs", left.len()));
    Some(a)
}

pub fn run(master: u64) -> Checks {
    let mut c = Checks::new();
    let Some(work) = c.ok(tempfile::tempdir(), "temporary directory") else { return c };
    let root = work.path();
    let seed = (master % 1000).to_string();
    let tiny = root.join("tiny.cfg");
    if c.ok(fs::write(&tiny, TINY_TRAIN), "tiny settings").is_none() {
        return c;
    }

    let Some(gen) = round_trip(&mut c, root, "generate", &["generate", "--patients", "300", "--seed", &seed], &[]) else {
        return c;
    };
    let Some(cohort) = c.ok(only(&gen, "cohort_", ".csv"), "generated cohort") else { return c };

    let train_args = ["train", "--cohort", s(&cohort), "--config", s(&tiny), "--seed", &seed];
    let Some(trained) = round_trip(&mut c, root, "train", &train_args, &[]) else { return c };
    let (Some(ckpt), Some(held)) = (
        c.ok(only(&trained, "model_", ".ckpt"), "checkpoint"),
        c.ok(only(&trained, "heldout_", ".csv"), "held-out cohort"),
    ) else {
        return c;
    };
    if let (Ok(x), Ok(y)) = (fs::read(&ckpt), only(&root.join("train/b"), "model_", ".ckpt").and_then(|p| fs::read(p).map_err(|e| e.to_string()))) {
        c.check(x == y, || "train: checkpoint differs on rerun".into());
    }

    let eval_args = [
        "eval", "--checkpoint", s(&ckpt), "--cohort", s(&held), "--all", "--set", "probe.n_splits=4", "--seed", &seed,
    ];
    round_trip(&mut c, root, "eval", &eval_args, &[]);

    let ablate_args = [
        "ablate", "--cohort", s(&cohort), "--config", s(&tiny), "--grid", "beta=0,1", "--set", "probe.n_splits=3", "--seed", &seed,
    ];
    round_trip(&mut c, root, "ablate", &ablate_args, &["--jobs", "1"]);

    for reward in ["terminal", "r1", "r2"] {
        let dir = root.join(reward);
        let mut rl_args = vec!["rl", "--cohort", s(&cohort), "--reward", reward, "--ensemble", "2", "--seed", &seed];
        rl_args.extend(TINY_RL);
        round_trip(&mut c, &dir, "rl", &rl_args, &["--jobs", "1"]);
    }
    c
}
