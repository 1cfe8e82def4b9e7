fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/tagsync.h"));
        }
        Err(e) => {
            // Header generation failure should not break `cargo build` for
            // Rust-only consumers; the committed header stays in place.
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
}
