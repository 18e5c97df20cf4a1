mod common;

use std::path::Path;
use std::process::Command;

use common::fixtures::{self, run};
use gds_scan::binobj::{detect_binary, load_elf, BinaryKind};

const LIBRARY: &str = r#"
double exported_scale(double v) { return v * 3.0; }
static float hidden(float v) { return v + 1.0f; }
float exported_call(float v) { return hidden(v); }
"#;

fn readelf(args: &[&str], path: &Path) -> String {
    run(Command::new("readelf").args(args).arg(path))
}

fn load(path: &Path) -> (Vec<u8>, BinaryKind) {
    let content = std::fs::read(path).unwrap();
    let name = path.to_string_lossy();
    let kind = detect_binary(&name, 0o755, &content).expect("fixture is a binary");
    (content, kind)
}

/// (name, address, size) of every allocated executable PROGBITS section.
fn exec_sections(path: &Path) -> Vec<(String, u64, u64)> {
    let listing = readelf(&["-SW"], path);
    let mut out = Vec::new();
    for line in listing.lines() {
        let Some(rest) = line.trim_start().strip_prefix('[') else { continue };
        let Some((_, rest)) = rest.split_once(']') else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() < 7 || fields[1] != "PROGBITS" {
            continue;
        }
        let flags = fields[6];
        if !flags.contains('X') {
            continue;
        }
        let addr = u64::from_str_radix(fields[2], 16).unwrap();
        let size = u64::from_str_radix(fields[4], 16).unwrap();
        if size > 0 {
            out.push((fields[0].to_string(), addr, size));
        }
    }
    out.sort_by_key(|s| s.1);
    out
}

/// (value, size, name) of defined FUNC symbols in the given table.
fn func_symbols(path: &Path, dynamic: bool) -> Vec<(u64, u64, String)> {
    let listing = readelf(&[if dynamic { "--dyn-syms" } else { "-sW" }, "-W"], path);
    let mut out = Vec::new();
    for line in listing.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 8 || f[3] != "FUNC" || f[6] == "UND" {
            continue;
        }
        let value = u64::from_str_radix(f[1], 16).unwrap();
        let size = f[2].parse().unwrap_or(0);
        out.push((value, size, f[7].split('@').next().unwrap().to_string()));
    }
    out
}

#[test]
fn sections_and_symbols_match_readelf() {
    if !fixtures::have("readelf") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let Some(bin) = fixtures::cc(tmp.path(), "copy", fixtures::STRING_COPY, &["-O1"]) else {
        return;
    };
    let (content, kind) = load(&bin);
    let image = load_elf(&content, kind).unwrap();
    let ours: Vec<_> = image
        .exec_ranges
        .iter()
        .map(|r| (r.section_name.clone(), r.address, r.bytes.len() as u64))
        .collect();
    assert_eq!(ours, exec_sections(&bin));

    let symbols = func_symbols(&bin, false);
    assert!(symbols.iter().any(|s| s.2 == "copy_big"));
    for (value, size, name) in symbols.iter().filter(|s| s.1 > 0) {
        let span = image
            .function_at(*value)
            .unwrap_or_else(|| panic!("{name} at {value:#x} not covered"));
        assert_eq!(span.start, *value, "{name}");
        assert!(span.size >= *size, "{name}");
    }
}

#[test]
fn executable_kinds_match_readelf() {
    if !fixtures::have("readelf") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let Some(pie) = fixtures::cc(tmp.path(), "pie", fixtures::FLOAT_SNIPPET, &["-pie", "-fPIE"]) else {
        return;
    };
    let exec = fixtures::cc(tmp.path(), "nopie", fixtures::FLOAT_SNIPPET, &["-no-pie"]).unwrap();
    let lib = fixtures::cc(tmp.path(), "libfix.so", LIBRARY, &["-shared", "-fPIC"]).unwrap();

    assert!(readelf(&["-h"], &pie).contains("DYN"));
    assert!(readelf(&["-h"], &exec).contains("EXEC"));
    assert_eq!(load(&pie).1, BinaryKind::PieExecutable);
    assert_eq!(load(&exec).1, BinaryKind::Executable);
    assert_eq!(load(&lib).1, BinaryKind::SharedLibrary);

    // A shared object named without .so and carrying the exec bit is not an
    // executable.
    let renamed = tmp.path().join("plugin");
    std::fs::copy(&lib, &renamed).unwrap();
    let content = std::fs::read(&renamed).unwrap();
    assert_eq!(detect_binary("plugin", 0o755, &content), None);
}

#[test]
fn build_id_matches_readelf() {
    if !fixtures::have("readelf") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let Some(bin) = fixtures::cc(tmp.path(), "b", fixtures::FLOAT_SNIPPET, &["-Wl,--build-id=sha1"]) else {
        return;
    };
    let notes = readelf(&["-n"], &bin);
    let expected = notes
        .lines()
        .find_map(|l| l.trim().strip_prefix("Build ID: "))
        .unwrap()
        .to_string();
    let (content, kind) = load(&bin);
    assert_eq!(load_elf(&content, kind).unwrap().build_id_hex(), Some(expected));
}

#[test]
fn stripped_library_falls_back_to_dynamic_symbols() {
    if !fixtures::have("strip") || !fixtures::have("readelf") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let Some(lib) = fixtures::cc(tmp.path(), "libfix.so", LIBRARY, &["-shared", "-fPIC", "-O1"]) else {
        return;
    };
    run(Command::new("strip").arg(&lib));
    assert!(!readelf(&["-SW"], &lib).contains(".symtab"));
    let (content, kind) = load(&lib);
    let image = load_elf(&content, kind).unwrap();
    let names: Vec<_> = image.functions.iter().map(|f| f.name.as_str()).collect();
    assert!(names.contains(&"exported_scale"), "{names:?}");
    assert!(!names.contains(&"hidden"));
    for (value, _, name) in func_symbols(&lib, true) {
        assert_eq!(image.function_at(value).map(|f| f.start), Some(value), "{name}");
    }
}

#[test]
fn debug_link_is_read() {
    if !fixtures::have("objcopy") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let Some(bin) = fixtures::cc(tmp.path(), "linked", fixtures::FLOAT_SNIPPET, &["-g"]) else {
        return;
    };
    let debug = tmp.path().join("linked.debug");
    run(Command::new("objcopy").arg("--only-keep-debug").arg(&bin).arg(&debug));
    run(Command::new("objcopy")
        .arg("--strip-debug")
        .arg(format!("--add-gnu-debuglink={}", debug.display()))
        .arg(&bin));
    let (content, kind) = load(&bin);
    let image = load_elf(&content, kind).unwrap();
    assert_eq!(image.debug_link.as_deref(), Some("linked.debug"));
    assert!(!image.has_debug_line);
}

#[test]
fn foreign_machine_is_rejected() {
    let mut content = std::fs::read("/bin/sh").unwrap_or_default();
    if content.len() < 64 {
        return;
    }
    content[18] = 183;
    content[19] = 0;
    assert!(matches!(
        load_elf(&content, BinaryKind::Executable),
        Err(gds_scan::Error::NonX86 { machine: 183 })
    ));
}
