//! Prompt sampling statistics and the test-time access guarantee.

#![allow(dead_code)]

use tempee::data::{gen_synthetic, Regime};
use tempee::model::Prompts;
use tempee::sampling::{
    apply_prompts, sample_mask, CountingSource, PromptMask, RssSchedule, SampleMode,
};

pub fn keep_rate_matches_probability() {
    let sched = RssSchedule::new(0.5, 0.5, 10, 42).unwrap();
    let k = 21;
    let draws = 10_000;
    let mut kept = 0usize;
    for id in 0..draws {
        let mask = sample_mask(&sched, 3, k, SampleMode::Train, id).unwrap();
        kept += mask.keep()[..k - 1].iter().filter(|&&b| b).count();
    }
    let rate = kept as f64 / (draws as usize * (k - 1)) as f64;
    assert!((rate - 0.5).abs() <= 0.02, "keep rate {rate}");
}

pub fn keep_rate_follows_the_decay() {
    let sched = RssSchedule::new(1.0, 0.0, 10, 1).unwrap();
    for (epoch, want) in [(0, 1.0), (5, 0.5), (10, 0.0), (30, 0.0)] {
        let kept: usize = (0..4000)
            .map(|id| {
                sample_mask(&sched, epoch, 11, SampleMode::Train, id)
                    .unwrap()
                    .keep()[..10]
                    .iter()
                    .filter(|&&b| b)
                    .count()
            })
            .sum();
        let rate = kept as f64 / 40_000.0;
        assert!((rate - want).abs() <= 0.02, "epoch {epoch}: {rate}");
    }
}

pub fn test_mode_reads_no_target_content() {
    let targets = gen_synthetic(Regime::DenseNonstationary, 1, 20, 48, 48, 4)
        .unwrap()
        .slice(1, 21)
        .unwrap();
    let sched = RssSchedule::new(1.0, 1.0, 1, 0).unwrap();
    let mask = sample_mask(&sched, 0, 20, SampleMode::Test, 0).unwrap();
    assert_eq!(mask, PromptMask::all_hidden(20));

    let counter = CountingSource::new(&targets);
    let prompts = apply_prompts(&counter, &mask).unwrap();
    assert_eq!(counter.reads(), 0);
    assert!(prompts.values().iter().all(|&v| v == 0.0));

    let counter = CountingSource::new(&targets);
    Prompts::from_source(&counter, mask).unwrap();
    assert_eq!(counter.reads(), 0);

    // the instrument does count reads when prompts are shown
    let counter = CountingSource::new(&targets);
    apply_prompts(&counter, &PromptMask::all_kept(20)).unwrap();
    assert_eq!(counter.reads(), 20);
}
