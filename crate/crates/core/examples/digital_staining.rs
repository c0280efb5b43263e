//! Stains a phantom B-scan and writes the class map, color overlay and
//! per-class probability maps. Uses the checkpoint given on the command line
//! or trains a small one first.
//!
//! `cargo run --release --example digital_staining -- [checkpoint] [out_dir]`

use std::path::PathBuf;

use onh_stain::compensation::{compensate_bscan, CompensationParams};
use onh_stain::dataset::io::{write_label_map, write_rgb};
use onh_stain::dataset::{generate_phantom, LabeledImage, PhantomSpec};
use onh_stain::network::{train_model, Architecture, Checkpoint, TrainConfig};
use onh_stain::staining::{prepare_input, render_stain, stain_image, write_probability_maps};

fn phantom(seed: u64) -> onh_stain::Result<LabeledImage> {
    let p = generate_phantom(&PhantomSpec { width: 192, height: 128, seed, shadows: true, attenuation: true })?;
    Ok(LabeledImage { id: seed.to_string(), cohort: None, image: p.image, labels: p.labels })
}

fn quick_checkpoint() -> onh_stain::Result<Checkpoint> {
    let compensation = CompensationParams::default();
    let images = (0..4)
        .map(|s| {
            let img = phantom(s)?;
            Ok(LabeledImage { image: compensate_bscan(&img.image, &compensation)?, ..img })
        })
        .collect::<onh_stain::Result<Vec<_>>>()?;
    let config = TrainConfig {
        architecture: Architecture { channels: 16, hidden: 50, ..Architecture::STANDARD },
        epochs: 6,
        patches_per_image: 500,
        validation_patches_per_image: 0,
        compensation: Some(compensation),
        ..TrainConfig::default()
    };
    Ok(train_model(&images, &[], &config, |r| println!("epoch {} loss {:.4}", r.epoch, r.train_loss))?.checkpoint)
}

fn main() -> onh_stain::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = match args.next() {
        Some(path) => Checkpoint::load(path.as_ref())?,
        None => quick_checkpoint()?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples/staining".into()));

    let raw = phantom(99)?;
    let input = prepare_input(&checkpoint, &raw.image, true)?;
    let stained = stain_image(&checkpoint.params, &input, 2)?;
    write_label_map(&out.join("classmap.png"), &stained.class_map)?;
    write_rgb(&out.join("overlay.png"), &render_stain(&stained.class_map, &input, 0.6)?)?;
    write_probability_maps(&out.join("probabilities"), &stained)?;

    let agree = stained.class_map.classes().iter().zip(raw.labels.classes()).filter(|(a, b)| a == b).count();
    println!(
        "pixel agreement with phantom labels {:.3}; wrote {}",
        agree as f64 / raw.labels.classes().len() as f64,
        out.display()
    );
    Ok(())
}
