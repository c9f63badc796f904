//! Desk-scale Gaussian experiment on synthetic scenes.
//!
//! Trains on 20 noisy 64x64 scenes (sigma 25) with labels from a 9x9
//! Gaussian filter and 20 unrelated clean scenes, then reports held-out
//! PSNR every 10% of training.
//!
//! `cargo run --release --example desk -- [n2b|n2b_v|supervised] [iterations] [base_width]`

use n2b::filters::{FilterKind, FilterSpec};
use n2b::image::Image;
use n2b::metrics::psnr;
use n2b::n2b::{denoise, TrainData, TrainSettings, Trainer, UNetConfig, Variant};
use n2b::noise::{add_gaussian, item_rng};
use n2b::synth;
use std::time::Instant;

fn degrade(images: &[Image], seed: u64) -> Vec<Image> {
    images
        .iter()
        .enumerate()
        .map(|(i, y)| add_gaussian(y, 25.0, &mut item_rng(seed, i as u64)).noisy)
        .collect()
}

fn mean_psnr(test: &[Image], reference: &[Image]) -> f64 {
    test.iter().zip(reference).map(|(t, r)| psnr(t, r).unwrap().db()).sum::<f64>() / test.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map(|s| s.parse()).transpose()?.unwrap_or(Variant::N2b);
    let iterations: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let width: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(16);

    let sources = synth::corpus(20, 64, 64, 100);
    let clean = synth::corpus(20, 64, 64, 200);
    let test = synth::corpus(8, 64, 64, 300);
    let test_noisy = degrade(&test, 2);
    let filter = FilterSpec::new(FilterKind::Gaussian, 9);
    let labels: Vec<Image> = test_noisy.iter().map(|x| filter.apply(x).map(|l| l.clamp_01())).collect::<Result<_, _>>()?;
    println!(
        "held-out noisy {:.2} dB, blurred labels {:.2} dB",
        mean_psnr(&test_noisy, &test),
        mean_psnr(&labels, &test)
    );

    let data = TrainData::prepare(degrade(&sources, 1), clean, Some(sources), &filter, false)?;
    let settings = TrainSettings {
        iterations,
        seed: 5,
        variant,
        unet: UNetConfig::new(1, 3, width),
        ..TrainSettings::default()
    };
    let mut trainer = Trainer::<f32>::new(settings, data)?;
    let every = (iterations / 10).max(1);
    let t0 = Instant::now();
    trainer.run(|tr, r, _| {
        if (r.iteration + 1) % every == 0 {
            let out: Vec<Image> = test_noisy.iter().map(|x| denoise(&tr.dn, x, false).unwrap()).collect();
            let l_n2c = r.l_n2c.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            println!(
                "{:>6} {:<11} l_n2b {:.4} l_n2c {l_n2c} held-out {:.2} dB ({:.0}s)",
                r.iteration + 1,
                r.stage.as_str(),
                r.l_n2b,
                mean_psnr(&out, &test),
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    Ok(())
}
