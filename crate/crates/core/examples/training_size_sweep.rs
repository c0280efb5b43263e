//! Repeats training for several training-set sizes and prints the
//! long-format results table.
//!
//! `cargo run --release --example training_size_sweep -- [work_dir]`

use std::path::PathBuf;

use onh_stain::dataset::io::{write_bscan, write_label_map};
use onh_stain::dataset::{generate_phantom, Cohort, Manifest, ManifestEntry, PhantomSpec};
use onh_stain::metrics::{experiment_sweep, write_experiment_csv, ExperimentConfig, SweepEvent};
use onh_stain::network::{Architecture, TrainConfig};

fn main() -> onh_stain::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/sweep".into()));
    let mut entries = Vec::new();
    for i in 0..10u64 {
        let p = generate_phantom(&PhantomSpec { width: 96, height: 80, seed: i, shadows: true, attenuation: true })?;
        let (image_path, label_path) = (format!("phantom_{i:03}.png"), format!("phantom_{i:03}_labels.png"));
        write_bscan(&dir.join(&image_path), &p.image)?;
        write_label_map(&dir.join(&label_path), &p.labels)?;
        entries.push(ManifestEntry {
            id: format!("phantom_{i:03}"),
            image_path: image_path.into(),
            label_path: label_path.into(),
            cohort: Some(if i % 2 == 0 { Cohort::Healthy } else { Cohort::Glaucoma }),
        });
    }
    let manifest = Manifest { entries, base_dir: dir.clone() };
    manifest.save(&dir.join("manifest.json"))?;

    let config = ExperimentConfig {
        sizes: vec![4, 6],
        repetitions: 2,
        stride: 4,
        train: TrainConfig {
            architecture: Architecture { channels: 8, hidden: 20, ..Architecture::STANDARD },
            epochs: 2,
            patches_per_image: 200,
            validation_patches_per_image: 50,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let rows = experiment_sweep(&manifest, &config, |event| {
        if let SweepEvent::RunFinished { size, rep, report } = event {
            let dice = report.summary_for("all").and_then(|r| r.dice).map_or(f64::NAN, |d| d.mean);
            eprintln!("size {size} rep {rep}: mean Dice {dice:.3}");
        }
    })?;
    write_experiment_csv(std::io::stdout(), &rows)?;
    Ok(())
}
