#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::Path;
use std::process::Command;

/// Small, fast engine settings shared by the command-line tests.
pub const FAST: [&str; 8] = [
    "--image-encoder",
    "stub:dim=32,input=16",
    "--text-encoder",
    "stub:dim=32",
    "--scales",
    "64,32",
    "--short-side",
    "native",
];

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn ovseg<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_ovseg"))
        .args(args)
        .env_remove("OVSEG_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Left half red, right half blue, with a green square in the middle.
pub fn write_test_image(path: &Path, w: u32, h: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let (cx, cy) = (x as i64 - w as i64 / 2, y as i64 - h as i64 / 2);
        if cx.abs() < w as i64 / 6 && cy.abs() < h as i64 / 6 {
            image::Rgb([0, 255, 0])
        } else if x < w / 2 {
            image::Rgb([255, 0, 0])
        } else {
            image::Rgb([0, 0, 255])
        }
    });
    img.save(path).unwrap();
}

pub fn read_dir_sorted(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}
