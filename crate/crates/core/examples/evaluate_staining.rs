//! Trains on compensated phantoms, stains held-out ones and prints
//! Dice, sensitivity and specificity per tissue class.
//!
//! `cargo run --release --example evaluate_staining -- [epochs]`

use onh_stain::compensation::{compensate_bscan, CompensationParams};
use onh_stain::dataset::{generate_phantom, LabeledImage, PhantomSpec};
use onh_stain::metrics::{evaluate_images, write_summary_csv};
use onh_stain::network::{train_model, TrainConfig};

fn main() -> onh_stain::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(4), |s| s.parse()).expect("epochs must be an integer");
    let raw: Vec<LabeledImage> = (0..12)
        .map(|seed| {
            let p = generate_phantom(&PhantomSpec { width: 192, height: 128, seed, shadows: true, attenuation: true })?;
            Ok(LabeledImage { id: format!("phantom_{seed:03}"), cohort: None, image: p.image, labels: p.labels })
        })
        .collect::<onh_stain::Result<_>>()?;
    let compensation = CompensationParams::default();
    let prepared = raw[..8]
        .iter()
        .map(|img| Ok(LabeledImage { image: compensate_bscan(&img.image, &compensation)?, ..img.clone() }))
        .collect::<onh_stain::Result<Vec<_>>>()?;
    let config = TrainConfig {
        epochs,
        patches_per_image: 500,
        validation_patches_per_image: 300,
        compensation: Some(compensation),
        ..TrainConfig::default()
    };
    let outcome = train_model(&prepared[..6], &prepared[6..], &config, |r| {
        println!("epoch {:>2} train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss.unwrap_or(f64::NAN))
    })?;

    // held-out images are passed raw; the checkpoint compensates them
    let report = evaluate_images(&outcome.checkpoint, &raw[8..], 2, true)?;
    for image in &report.images {
        let dice: Vec<String> = image.classes.iter().map(|s| format!("{:.3}", s.dice.unwrap_or(f64::NAN))).collect();
        println!("{} Dice by class 1-4: {}", image.image, dice.join(" "));
    }
    write_summary_csv(std::io::stdout(), &report.summary)?;
    Ok(())
}
