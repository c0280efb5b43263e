//! Generates a shadowed, attenuated phantom and writes the B-scan and its
//! label map as PNGs.
//!
//! `cargo run --release --example phantom_generation -- [out_dir] [seed]`

use std::path::PathBuf;

use onh_stain::dataset::io::{write_bscan, write_label_map};
use onh_stain::dataset::{generate_phantom, PhantomSpec};
use onh_stain::raster::TissueClass;

fn main() -> onh_stain::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples/phantom".into()));
    let seed = args.next().map_or(Ok(7), |s| s.parse()).expect("seed must be an integer");

    let phantom = generate_phantom(&PhantomSpec {
        width: 192,
        height: 128,
        seed,
        shadows: true,
        attenuation: true,
    })?;
    write_bscan(&out.join("phantom.png"), &phantom.image)?;
    write_label_map(&out.join("phantom_labels.png"), &phantom.labels)?;

    let total = phantom.labels.classes().len() as f64;
    for (class, n) in TissueClass::ALL.iter().zip(phantom.labels.class_counts()) {
        println!("{} {:<22} {:5.1}%", class.label(), class.name(), 100.0 * n as f64 / total);
    }
    println!("wrote {}", out.display());
    Ok(())
}
