use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

const BLOCKS_FILE: &str = "data/Blocks-13.0.0.txt";

fn main() {
    println!("cargo:rerun-if-changed={BLOCKS_FILE}");
    let text = fs::read_to_string(BLOCKS_FILE).expect("read Blocks.txt");

    let mut out = String::new();
    out.push_str("pub(crate) static BLOCKS: &[(u32, u32, &str)] = &[\n");
    let mut last_end: Option<u32> = None;
    for line in text.lines() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (range, name) = line.split_once(';').expect("malformed block line");
        let (start, end) = range
            .trim()
            .split_once("..")
            .expect("malformed block range");
        let start = u32::from_str_radix(start, 16).unwrap();
        let end = u32::from_str_radix(end, 16).unwrap();
        if let Some(prev) = last_end {
            assert!(start > prev, "blocks must be sorted and disjoint");
        }
        last_end = Some(end);
        writeln!(out, "    (0x{start:04X}, 0x{end:04X}, {:?}),", name.trim()).unwrap();
    }
    out.push_str("];\n");

    let dest = PathBuf::from(env::var("OUT_DIR").unwrap()).join("blocks.rs");
    fs::write(dest, out).unwrap();
}
