//! Compiles and runs a small C program against the generated header and static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "foodsec.h"

int main(void) {
    double x[4] = {1, 2, 3, 4}, y[4] = {1, 3, 2, 4}, r = 0;
    if (foodsec_pearson(x, y, 4, &r) != FOODSEC_STATUS_OK || fabs(r - 0.8) > 1e-12) return 1;
    unsigned char days[9] = {7, 7, 7, 7, 7, 7, 7, 7, 7};
    double s = 0;
    if (foodsec_fcs(days, foodsec_fcs_group_count(), &s) != FOODSEC_STATUS_OK || s != 112.0) return 2;
    if (foodsec_pearson(NULL, y, 4, &r) != FOODSEC_STATUS_NULL_POINTER) return 3;
    if (foodsec_last_error() == NULL) return 4;
    FoodsecModel *m = NULL;
    double xs[10] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, ys[10];
    for (int i = 0; i < 10; i++) ys[i] = 3 * xs[i] + 1;
    if (foodsec_model_fit(xs, ys, 10, 1, 1, &m) != FOODSEC_STATUS_OK) return 5;
    double p = 0;
    foodsec_model_predict(m, xs + 2, 1, &p);
    foodsec_model_free(m);
    if (fabs(p - 7.0) > 1e-9) return 6;
    printf("ok %s\n", foodsec_version());
    return 0;
}
"#;

fn target_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    Some(exe.parent()?.parent()?.to_path_buf())
}

fn have_cc() -> bool {
    Command::new("cc")
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

#[test]
fn header_is_valid_c() {
    if !have_cc() {
        eprintln!("cc not found; skipping");
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    for std in ["c99", "c11"] {
        let status = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", &format!("-std={std}"), "-x", "c"])
            .arg(include.join("foodsec.h"))
            .status()
            .unwrap();
        assert!(status.success(), "header fails under {std}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(dir) = target_dir() else { return };
    let lib = dir.join("libfoodsec_ffi.a");
    if !have_cc() || !lib.is_file() {
        eprintln!("cc or {} missing; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = tmp.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
