//! Trains a reduced network on compensated phantoms and saves the checkpoint
//! with its training log.
//!
//! `cargo run --release --example train_phantoms -- [out_dir] [epochs]`

use std::fs::File;
use std::path::PathBuf;

use onh_stain::compensation::{compensate_bscan, CompensationParams};
use onh_stain::dataset::{generate_phantom, LabeledImage, PhantomSpec};
use onh_stain::network::{train_model, write_training_log, Architecture, TrainConfig};

fn phantoms(seeds: std::ops::Range<u64>, compensation: Option<&CompensationParams>) -> Vec<LabeledImage> {
    seeds
        .map(|seed| {
            let p = generate_phantom(&PhantomSpec {
                width: 192,
                height: 128,
                seed,
                shadows: true,
                attenuation: true,
            })
            .expect("valid phantom size");
            let image = match compensation {
                Some(params) => compensate_bscan(&p.image, params).expect("valid compensation"),
                None => p.image,
            };
            LabeledImage { id: format!("phantom_{seed:03}"), cohort: None, image, labels: p.labels }
        })
        .collect()
}

fn main() -> onh_stain::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples/training".into()));
    let epochs = args.next().map_or(Ok(5), |s| s.parse()).expect("epochs must be an integer");

    let compensation = CompensationParams::default();
    let config = TrainConfig {
        architecture: Architecture { channels: 16, hidden: 50, ..Architecture::STANDARD },
        epochs,
        patches_per_image: 300,
        validation_patches_per_image: 200,
        compensation: Some(compensation),
        ..TrainConfig::default()
    };
    let images = phantoms(0..6, Some(&compensation));
    let outcome = train_model(&images[..5], &images[5..], &config, |r| {
        println!(
            "epoch {:>2} train {:.4} val {:.4} acc {:.3}",
            r.epoch,
            r.train_loss,
            r.val_loss.unwrap_or(f64::NAN),
            r.val_accuracy.unwrap_or(f64::NAN)
        )
    })?;
    outcome.checkpoint.save(&out.join("model.onhs"))?;
    write_training_log(File::create(out.join("model_log.csv"))?, &outcome.history)?;
    println!("best epoch {}; wrote {}", outcome.checkpoint.best_epoch, out.display());
    Ok(())
}
