use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR is set by cargo");
    let header = PathBuf::from(&crate_dir).join("include").join("tmmse.h");
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("TMMSE_H".to_string()),
        cpp_compat: true,
        documentation: true,
        enumeration: cbindgen::EnumConfig {
            prefix_with_name: true,
            ..Default::default()
        },
        ..Default::default()
    };
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(header);
        }
        // The committed header stays authoritative when generation is not
        // possible (e.g. building from a vendored snapshot).
        Err(e) => println!("cargo:warning=skipping C header regeneration: {e}"),
    }
}
