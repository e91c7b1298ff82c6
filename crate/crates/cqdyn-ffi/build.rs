fn main() {
    let _ = cbindgen::Config::default();
    println!("cargo:rerun-if-changed=src/lib.rs");
}
