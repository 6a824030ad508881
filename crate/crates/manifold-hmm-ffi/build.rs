use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR not set");
    let output = PathBuf::from(&crate_dir)
        .join("include")
        .join("manifold_hmm.h");

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config =
        cbindgen::Config::from_file(PathBuf::from(&crate_dir).join("cbindgen.toml"))
            .expect("cbindgen.toml parses");
    cbindgen::generate_with_config(&crate_dir, config)
        .expect("header generation")
        .write_to_file(&output);
}
