//! Golden-file cases for the command-line tool. `HETCOMM_BLESS=1` rewrites the files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub struct Case {
    pub name: &'static str,
    pub args: &'static [&'static str],
}

pub const CASES: &[Case] = &[
    Case {
        name: "predict_default_paths",
        args: &["predict", "--sizes", "1,1K,64K,1M,1G"],
    },
    Case {
        name: "predict_all_paths_table",
        args: &[
            "predict",
            "--paths",
            "gpudirect,3step,extra-msg,dup-devptr",
            "--sizes",
            "1K:1M:x32",
            "--messages",
            "10",
            "--ppn",
            "4",
            "--format",
            "table",
        ],
    },
    Case {
        name: "fit_postal",
        args: &["fit", "--input", "tests/data/postal.csv"],
    },
    Case {
        name: "fit_protocol_table",
        args: &[
            "fit",
            "--kind",
            "protocol",
            "--input",
            "tests/data/protocol.csv",
            "--format",
            "table",
        ],
    },
    Case {
        name: "fit_injection",
        args: &[
            "fit",
            "--kind",
            "injection",
            "--input",
            "tests/data/injection.csv",
            "--alpha",
            "6.56e-6",
            "--beta",
            "8.51e-11",
        ],
    },
    Case {
        name: "crossover_default",
        args: &["crossover"],
    },
    Case {
        name: "collective_alltoall",
        args: &[
            "collective",
            "--op",
            "alltoall",
            "--gpus",
            "12",
            "--sizes",
            "8,64K,1M",
        ],
    },
    Case {
        name: "collective_allreduce_table",
        args: &[
            "collective",
            "--op",
            "allreduce",
            "--gpus",
            "12",
            "--sizes",
            "1K,1M",
            "--format",
            "table",
        ],
    },
    Case {
        name: "machine_summit",
        args: &["machine"],
    },
];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcomm"))
        .args(args)
        .current_dir(crate_dir())
        .output()
        .unwrap()
}

fn golden_path(name: &str) -> PathBuf {
    crate_dir().join("tests/golden").join(format!("{name}.out"))
}

/// Runs `case` and compares standard output with its golden file.
pub fn check(case: &Case) -> Result<(), String> {
    let out = run(case.args);
    if !out.status.success() {
        return Err(format!(
            "{}: exit {:?}: {}",
            case.name,
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let path = golden_path(case.name);
    if std::env::var_os("HETCOMM_BLESS").is_some() {
        std::fs::write(&path, &out.stdout).map_err(|e| e.to_string())?;
    }
    let want = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if want != out.stdout {
        return Err(format!(
            "{} differs from {}:\n{}",
            case.name,
            Path::new("tests/golden")
                .join(golden_path(case.name).file_name().unwrap())
                .display(),
            String::from_utf8_lossy(&out.stdout)
        ));
    }
    Ok(())
}

/// Exit-code expectations: arguments, code, and a fragment of standard error.
pub const FAILURES: &[(&[&str], i32, &str)] = &[
    (&["fit", "--input", "tests/data/malformed.csv"], 3, "line 5"),
    (
        &["fit", "--input", "tests/data/header_only.csv"],
        2,
        "no samples",
    ),
    (
        &["fit", "--input", "tests/data/missing.csv"],
        2,
        "missing.csv",
    ),
    (&["predict", "--machine", "nope"], 2, "unknown machine"),
    (&["predict", "--sizes", "0"], 2, "sizes must be positive"),
    (&["predict", "--sizes", "12Q"], 2, ""),
    (&["predict", "--dedup", "2"], 2, "dedup"),
    (&["collective", "--op", "broadcast", "--gpus", "4"], 2, ""),
    (&["bogus"], 2, ""),
];

pub fn check_failure(args: &[&str], code: i32, fragment: &str) -> Result<(), String> {
    let out = run(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    if out.status.code() != Some(code) || !stderr.contains(fragment) {
        return Err(format!(
            "{args:?}: exit {:?}, stderr {stderr:?}",
            out.status.code()
        ));
    }
    Ok(())
}
