use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{CliError, EvalArgs, GenerateArgs, Result, RunConfig, TrainArgs};
use crate::data::{
    gen_synthetic, read_est, read_manifest, write_est, write_manifest, DatasetSplit, EchoSequence,
    ValueSpace,
};
use crate::metrics::{batch_report, FeatureExtractor, RandomConvPyramid, ReportOptions};
use crate::model::{read_checkpoint, Prompts, TempEE};
use crate::training::{train_loop, TrainData};

pub const MANIFEST_NAME: &str = "manifest.txt";

/// File holding the sequence generated from `seed`.
pub fn sequence_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seq-{seed:016x}.est"))
}

fn writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".tempee-write-probe");
    File::create(&probe)
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| CliError::Io(format!("{} is not writable: {e}", dir.display())))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    writable_dir(&args.out)?;
    let test_count = args.test_count.unwrap_or(args.count / 10);
    let split = DatasetSplit::from_base_seed(args.seed, args.count, test_count)?;
    let seeds: Vec<u64> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .copied()
        .collect();
    seeds.par_iter().try_for_each(|&seed| -> Result<()> {
        let seq = gen_synthetic(
            args.regime,
            args.n_in,
            args.k_out,
            args.size,
            args.size,
            seed,
        )?;
        write_est(&sequence_path(&args.out, seed), &seq)?;
        Ok(())
    })?;
    write_manifest(&args.out.join(MANIFEST_NAME), &split)?;
    println!(
        "wrote {} train, {} val and {} test sequences to {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        args.out.display()
    );
    Ok(())
}

fn load_partition(dir: &Path, seeds: &[u64]) -> Result<Vec<EchoSequence>> {
    seeds
        .par_iter()
        .map(|&s| {
            let path = sequence_path(dir, s);
            read_est(&path).map_err(|e| match CliError::from(e) {
                CliError::Corrupt(m) => CliError::Corrupt(format!("{}: {m}", path.display())),
                other => other,
            })
        })
        .collect()
}

fn load_manifest(dir: &Path) -> Result<DatasetSplit> {
    let path = dir.join(MANIFEST_NAME);
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "{} has no {MANIFEST_NAME}; run `tempee generate` first",
            dir.display()
        )));
    }
    Ok(read_manifest(&path)?)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let split = load_manifest(&cfg.paths.data_dir)?;
    for p in [&cfg.paths.checkpoint, &cfg.paths.log] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            writable_dir(parent)?;
        }
    }
    let mut log = BufWriter::new(
        File::create(&cfg.paths.log)
            .map_err(|e| CliError::Io(format!("{}: {e}", cfg.paths.log.display())))?,
    );

    let model = TempEE::new(cfg.model.clone(), cfg.train.seed)?;
    let train = load_partition(&cfg.paths.data_dir, &split.train)?;
    let val = load_partition(&cfg.paths.data_dir, &split.val)?;
    let data = TrainData::new(train, val, &model)?;

    let outcome = train_loop(
        model,
        &data,
        &cfg.train,
        Some(&cfg.paths.checkpoint),
        &mut log,
    )?;
    log.flush()?;
    println!(
        "trained {} epoch(s), {} step(s); best validation MSE {:.4} at epoch {}{}",
        outcome.summary.epochs,
        outcome.steps,
        outcome.best_val,
        outcome
            .summary
            .best_epoch
            .map_or_else(|| "-".into(), |e| e.to_string()),
        if outcome.summary.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    println!("checkpoint: {}", cfg.paths.checkpoint.display());
    Ok(())
}

fn eval_sequences(args: &EvalArgs) -> Result<Vec<EchoSequence>> {
    if args.data.is_dir() {
        let split = load_manifest(&args.data)?;
        let seeds = match args.split.as_str() {
            "train" => &split.train,
            "val" => &split.val,
            _ => &split.test,
        };
        if seeds.is_empty() {
            return Err(CliError::Config(format!(
                "the {} partition is empty",
                args.split
            )));
        }
        load_partition(&args.data, seeds)
    } else if args.data.is_file() {
        Ok(vec![read_est(&args.data)?])
    } else {
        Err(CliError::Config(format!(
            "{} does not exist",
            args.data.display()
        )))
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model: TempEE<f32> = read_checkpoint(&args.checkpoint)?;
    writable_dir(&args.report)?;
    let sequences = eval_sequences(args)?;
    let cfg = model.config();
    let pairs = sequences
        .par_iter()
        .map(|seq| -> Result<(EchoSequence, EchoSequence)> {
            let seq = match seq.value_space {
                ValueSpace::Pixel => seq.clone(),
                ValueSpace::Dbz => seq.to_pixel()?,
            };
            if seq.len() != cfg.n_in + cfg.k_out {
                return Err(CliError::Config(format!(
                    "sequence has {} frames, model needs {}",
                    seq.len(),
                    cfg.n_in + cfg.k_out
                )));
            }
            let (obs, truth) = seq.split_at(cfg.n_in)?;
            let prompts = Prompts::hidden(cfg.k_out, seq.height(), seq.width())?;
            let pred = model.extrapolate(&obs, &prompts)?;
            Ok((pred, truth))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut opts = ReportOptions::default();
    if let Some(taus) = &args.taus {
        opts.taus = taus.clone();
    }
    let pyramid = args.perceptual_seed.map(RandomConvPyramid::new);
    let extractor = pyramid
        .as_ref()
        .map(|p| p as &(dyn FeatureExtractor + Sync));
    let report = batch_report(&pairs, &opts, extractor)?;
    std::fs::write(args.report.join("report.csv"), report.to_csv())?;
    std::fs::write(args.report.join("curves.csv"), report.curves_csv())?;
    print!("{}", report.text_table());
    Ok(())
}
