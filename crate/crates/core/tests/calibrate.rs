//! Scratch calibration runs; not part of the suite. Run explicitly with
//! `cargo test -p spic-core --test calibrate -- --ignored --nocapture`.

use std::time::Instant;

use spic_core::diffusion::sampler::{sample, SamplerConfig};
use spic_core::diffusion::schedule::ScheduleParams;
use spic_core::diffusion::train::{trailing_mean, TrainConfig, TrainItem, Trainer};
use spic_core::diffusion::unet::{Denoiser, DenoiserConfig};
use spic_core::encoder::{
    decode_bitstream, encode_image, segment, upscale_coarse, EncodeOptions,
    GroundTruthSegmenter,
};
use spic_core::harness::{synthetic_pair, synthetic_segmenter, SyntheticConfig, SYNTHETIC_CLASSES};
use spic_core::metrics::{miou, psnr, ConfusionAccumulator};
use spic_core::types::{Image, SegmentationMap};
use spic_core::DOWNSCALE_FACTOR;

fn to_item(pair: &(Image, SegmentationMap), quality: u8) -> TrainItem {
    let (img, ssm) = pair;
    let seg = GroundTruthSegmenter::new(ssm.clone());
    let opts = EncodeOptions {
        coarse_quality: quality,
        ..EncodeOptions::default()
    };
    let (bytes, _) = encode_image(img, &seg, &opts).unwrap();
    let dec = decode_bitstream(&bytes).unwrap();
    TrainItem {
        image: img.clone(),
        coarse: dec.coarse,
        ssm: dec.ssm,
    }
}

#[test]
#[ignore]
fn c08_calibration() {
    let start = Instant::now();
    let quality = 30u8;
    let cfg = SyntheticConfig {
        count: 80,
        height: 32,
        width: 64,
        seed: 7,
    };
    let pairs: Vec<(Image, SegmentationMap)> =
        (0..cfg.count).map(|i| synthetic_pair(&cfg, i).unwrap()).collect();
    let (train_pairs, eval_pairs) = pairs.split_at(64);
    let items: Vec<TrainItem> = train_pairs.iter().map(|p| to_item(p, quality)).collect();
    let eval_items: Vec<(TrainItem, &SegmentationMap)> =
        eval_pairs.iter().map(|p| (to_item(p, quality), &p.1)).collect();
    println!("[cal] corpus + items ready at {:.0}s", start.elapsed().as_secs_f64());

    let rules = synthetic_segmenter();

    // Baseline arm once: bilinear upscale of the decoded coarse.
    let mut acc_base = ConfusionAccumulator::new(SYNTHETIC_CLASSES);
    for (item, gt) in &eval_items {
        let baseline = upscale_coarse(&item.coarse, DOWNSCALE_FACTOR).unwrap();
        acc_base
            .accumulate(&segment(&baseline, &rules).unwrap(), gt)
            .unwrap();
    }
    println!("[cal] baseline miou {:.4}", acc_base.miou().unwrap());

    let model = Denoiser::new(
        DenoiserConfig {
            base_channels: 8,
            channel_mult: vec![1, 2, 4],
            res_blocks: 1,
            attend_lowest: true,
            n_classes: SYNTHETIC_CLASSES,
            spade_hidden: 8,
        },
        0,
    )
    .unwrap();
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            steps: 1000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            schedule: ScheduleParams::default(),
        },
    )
    .unwrap();

    for segment_idx in 1..=4 {
        trainer.train(&items, |_, _| {}).unwrap();
        let steps_done = 1000 * segment_idx;
        let smoothed = trailing_mean(&trainer.loss_history, 50);
        println!(
            "[cal] after {} steps ({:.0}s): smoothed loss step50 {:.4} now {:.4}",
            steps_done,
            start.elapsed().as_secs_f64(),
            smoothed[49],
            smoothed.last().unwrap()
        );

        let mut acc_model = ConfusionAccumulator::new(SYNTHETIC_CLASSES);
        for (i, (item, gt)) in eval_items.iter().enumerate() {
            let recon = sample(
                &trainer.model,
                trainer.schedule(),
                &item.coarse,
                &item.ssm,
                &SamplerConfig {
                    steps: 20,
                    seed: 4000 + i as u64,
                },
            )
            .unwrap();
            let pred = segment(&recon, &rules).unwrap();
            if i < 4 {
                println!(
                    "[cal]   img {i}: miou {:.4} psnr {:.1}",
                    miou(gt, &pred).unwrap(),
                    psnr(&item.image, &recon).unwrap().db()
                );
            }
            acc_model.accumulate(&pred, gt).unwrap();
        }
        println!(
            "[cal] after {} steps: model miou {:.4} vs baseline {:.4} ({:.0}s)",
            steps_done,
            acc_model.miou().unwrap(),
            acc_base.miou().unwrap(),
            start.elapsed().as_secs_f64()
        );
    }
}
