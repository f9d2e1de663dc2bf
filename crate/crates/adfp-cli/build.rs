use std::process::Command;

// Bakes a git-describe style version into the binary so every emitted
// artifact can be traced back to the exact tree that produced it.
fn main() {
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let version = match describe {
        Some(d) => format!("{}+{d}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    };
    println!("cargo:rustc-env=ADFP_BUILD_VERSION={version}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
