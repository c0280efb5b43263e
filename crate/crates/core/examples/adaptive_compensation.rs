//! Compensates a phantom and compares one A-scan before and after.
//!
//! `cargo run --release --example adaptive_compensation -- [out_dir]`

use std::path::PathBuf;

use onh_stain::compensation::{compensation_profile, CompensationParams};
use onh_stain::dataset::io::write_bscan;
use onh_stain::dataset::{generate_phantom, PhantomSpec};

fn main() -> onh_stain::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/compensation".into()));
    let phantom = generate_phantom(&PhantomSpec {
        width: 192,
        height: 128,
        seed: 3,
        shadows: true,
        attenuation: true,
    })?;
    let params = CompensationParams::default();
    let column = 96;
    let profile = compensation_profile(&phantom.image, column, &params)?;

    println!("column {column}: mean intensity per 16-row band");
    println!("{:>7} {:>8} {:>12}", "rows", "raw", "compensated");
    for band in 0..profile.raw.len() / 16 {
        let rows = band * 16..(band + 1) * 16;
        let mean = |v: &[f64]| v[rows.clone()].iter().sum::<f64>() / 16.0;
        println!(
            "{:>3}-{:<3} {:>8.3} {:>12.3}",
            rows.start,
            rows.end - 1,
            mean(&profile.raw),
            mean(&profile.compensated)
        );
    }
    write_bscan(&out.join("raw.png"), &phantom.image)?;
    write_bscan(
        &out.join("compensated.png"),
        &onh_stain::compensation::compensate_bscan(&phantom.image, &params)?,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
