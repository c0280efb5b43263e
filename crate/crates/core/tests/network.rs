use onh_stain::compensation::{compensate_bscan, CompensationParams};
use onh_stain::dataset::{compute_class_weights, extract_patch, generate_phantom, ClassWeights, Patch, PhantomSpec};
use onh_stain::network::{
    argmax, forward, loss_and_gradients, predict, train_step, AdamState, Architecture, NetworkParams, TrainConfig,
};
use onh_stain::raster::NUM_CLASSES;
use onh_stain::tensor::{softmax_forward, weighted_cross_entropy, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` labeled patches at random centers of compensated phantoms.
fn phantom_patches(seed: u64, count: usize) -> Vec<Patch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<_> = (0..4)
        .map(|i| {
            let p = generate_phantom(&PhantomSpec {
                width: 128,
                height: 128,
                seed: 100 * seed + i,
                shadows: true,
                attenuation: true,
            })
            .unwrap();
            (compensate_bscan(&p.image, &CompensationParams::default()).unwrap(), p.labels)
        })
        .collect();
    (0..count)
        .map(|_| {
            let (image, labels) = &images[rng.random_range(0..images.len())];
            let (r, c) = (rng.random_range(0..128), rng.random_range(0..128));
            extract_patch(image, Some(labels), r, c).unwrap()
        })
        .collect()
}

fn weights_for(patches: &[Patch]) -> ClassWeights {
    let mut counts = [0u64; NUM_CLASSES];
    for p in patches {
        counts[p.center_class.unwrap().index()] += 1;
    }
    // a class missing from a small sample gets a nominal single count
    compute_class_weights(&counts.map(|c| c.max(1))).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn twenty_steps_cut_the_loss_by_thirty_percent() {
    let ratios: Vec<f64> = (1..=5)
        .map(|seed| {
            let patches = phantom_patches(seed, 200);
            let weights = weights_for(&patches);
            // optimizer progress only: dropout and augmentation noise would
            // dominate a single-batch step-1 versus step-20 comparison
            let config = TrainConfig {
                seed,
                augment: false,
                dropout: 0.0,
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = NetworkParams::he_init(Architecture::STANDARD, &mut rng).unwrap();
            let mut adam = AdamState::new(Architecture::STANDARD).unwrap();
            let losses: Vec<f64> = (0..20)
                .map(|step| {
                    let batch = &patches[(step % 4) * 50..(step % 4 + 1) * 50];
                    train_step(&mut params, &mut adam, batch, &weights, &config, &mut rng).unwrap()
                })
                .collect();
            losses[19] / losses[0]
        })
        .collect();
    let m = median(ratios.clone());
    assert!(m <= 0.7, "median loss ratio {m:.3} (per seed {ratios:?})");
}

#[test]
fn overfits_one_hundred_patches() {
    let patches = phantom_patches(9, 100);
    let weights = weights_for(&patches);
    let config = TrainConfig {
        augment: false,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = NetworkParams::he_init(Architecture::STANDARD, &mut rng).unwrap();
    let mut adam = AdamState::new(Architecture::STANDARD).unwrap();
    let accuracy = |params: &NetworkParams<f32>| {
        let hits = patches
            .iter()
            .filter(|p| argmax(predict(params, &p.to_tensor()).unwrap().data()) == p.center_class.unwrap().index())
            .count();
        hits as f64 / patches.len() as f64
    };
    let mut best = 0.0;
    for step in 0..200 {
        let batch = &patches[(step % 2) * 50..(step % 2 + 1) * 50];
        train_step(&mut params, &mut adam, batch, &weights, &config, &mut rng).unwrap();
        if step % 10 == 9 {
            best = accuracy(&params);
            if best >= 0.99 {
                break;
            }
        }
    }
    assert!(best >= 0.99, "training accuracy {best}");
}

#[test]
fn gradients_scale_linearly_with_class_weights() {
    let arch = Architecture::DOWNSIZED;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = NetworkParams::<f64>::he_init(arch, &mut rng).unwrap();
    let input = Tensor::from_fn(&[1, 14, 14], |_| rng.random_range(0.0..1.0));
    let w = [0.7, 1.4, 0.9, 1.1, 1.3, 0.6];
    for k in [0.25, 3.0, 17.5] {
        let scaled = w.map(|x| x * k);
        let run = |weights: &[f64]| {
            let mut r = ChaCha8Rng::seed_from_u64(8);
            loss_and_gradients(&params, &input, 4, weights, 0.35, &mut r).unwrap()
        };
        let ((loss, g), (loss_k, g_k)) = (run(&w), run(&scaled));
        assert!((loss_k - k * loss).abs() <= 1e-10 * loss_k.abs().max(1.0));
        for (a, b) in g.tensors().iter().zip(g_k.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - k * x).abs() <= 1e-10, "k={k}: {y} vs {}", k * x);
            }
        }
    }
}

#[test]
fn zero_patch_with_zero_biases_gives_zero_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = NetworkParams::<f32>::he_init(Architecture::STANDARD, &mut rng).unwrap();
    let zero = Tensor::zeros(&[1, 50, 50]);
    for mode in [Mode::Infer, Mode::Train] {
        let logits = forward(&params, &zero, mode, 0.35, &mut rng).unwrap().logits;
        assert_eq!(logits.shape(), &[6]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }
    let probs = predict(&params, &zero).unwrap();
    assert!(probs.data().iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-6));
}

#[test]
fn loss_matches_softmax_cross_entropy_of_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = NetworkParams::<f64>::he_init(Architecture::DOWNSIZED, &mut rng).unwrap();
    let input = Tensor::from_fn(&[1, 14, 14], |_| rng.random_range(0.0..1.0));
    let w = [1.0, 2.0, 0.5, 1.0, 1.5, 0.25];
    let (loss, _) = loss_and_gradients(&params, &input, 1, &w, 0.0, &mut rng).unwrap();
    let logits = forward(&params, &input, Mode::Infer, 0.0, &mut rng).unwrap().logits;
    let expected = weighted_cross_entropy(&softmax_forward(&logits).unwrap(), 1, &w).unwrap();
    assert!((loss - expected).abs() < 1e-12);
}
