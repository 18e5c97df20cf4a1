use std::path::{Path, PathBuf};
use std::process::Command;

pub const FLOAT_SNIPPET: &str = "int main(void) {\n    float pi = 3.14;\n    float x = pi * 2.0;\n    return (int)x;\n}\n";

pub const STRING_COPY: &str = r#"
#include <string.h>
struct big { char bytes[4096]; };
void copy_big(struct big *dst, const struct big *src) { *dst = *src; }
double scale(double v) { return v * 1.5; }
int add(int a, int b) { return a + b; }
int main(void) { struct big a = {{0}}, b; copy_big(&b, &a); return (int)scale(b.bytes[0]) + add(1, 2); }
"#;

/// Freestanding program with no vector instructions at all.
pub const INTEGER_ONLY_ASM: &str = "
    .globl _start
    .text
_start:
    mov $60, %eax
    xor %edi, %edi
    add $1, %rdi
    syscall
";

pub fn have(tool: &str) -> bool {
    Command::new(tool)
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

pub fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap_or_else(|e| panic!("{cmd:?}: {e}"));
    assert!(
        out.status.success(),
        "{cmd:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Compiles C `source` into `dir/name` with extra flags. Returns `None`
/// when no C compiler is installed.
pub fn cc(dir: &Path, name: &str, source: &str, flags: &[&str]) -> Option<PathBuf> {
    if !have("gcc") {
        return None;
    }
    let src = dir.join(format!("{name}.c"));
    std::fs::write(&src, source).unwrap();
    let out = dir.join(name);
    run(Command::new("gcc").args(flags).arg("-o").arg(&out).arg(&src));
    Some(out)
}

/// Assembles and links a freestanding AT&T-syntax program.
pub fn asm(dir: &Path, name: &str, source: &str) -> Option<PathBuf> {
    if !have("gcc") {
        return None;
    }
    let src = dir.join(format!("{name}.s"));
    std::fs::write(&src, source).unwrap();
    let out = dir.join(name);
    run(Command::new("gcc")
        .args(["-nostdlib", "-static", "-no-pie"])
        .arg("-o")
        .arg(&out)
        .arg(&src));
    Some(out)
}
