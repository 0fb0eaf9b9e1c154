use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, Result};

/// Train/validation proportions.
pub const DEFAULT_RATIOS: [f64; 2] = [0.9, 0.1];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    /// Seeds for `count` train/val sequences and `test_count` test
    /// sequences. Train/val seeds are `base..base+count` and test seeds start
    /// half a block later, so the two ranges never meet.
    pub fn from_base_seed(base: u64, count: usize, test_count: usize) -> Result<Self> {
        const BLOCK: u64 = 1 << 32;
        if count as u64 >= BLOCK / 2 || test_count as u64 >= BLOCK / 2 {
            return Err(DataError::Config(format!(
                "at most {} sequences per partition",
                BLOCK / 2 - 1
            )));
        }
        let start = base.wrapping_mul(BLOCK);
        let seeds: Vec<u64> = (0..count as u64).map(|i| start.wrapping_add(i)).collect();
        let test = (0..test_count as u64)
            .map(|i| start.wrapping_add(BLOCK / 2 + i))
            .collect();
        split_dataset(&seeds, DEFAULT_RATIOS, test)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, part) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &s in part {
                if !seen.insert(s) {
                    return Err(DataError::Contract(format!(
                        "seed {s} appears more than once (again in {name})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits `seeds` in order into train and validation parts by `ratios`
/// (train count rounded to nearest) and attaches the separately drawn test
/// seeds.
pub fn split_dataset(seeds: &[u64], ratios: [f64; 2], test: Vec<u64>) -> Result<DatasetSplit> {
    let [train_r, val_r] = ratios;
    if !(train_r >= 0.0 && val_r >= 0.0) || (train_r + val_r - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!(
            "split ratios must be non-negative and sum to 1, got {train_r} and {val_r}"
        )));
    }
    let n_train = (seeds.len() as f64 * train_r).round() as usize;
    let split = DatasetSplit {
        train: seeds[..n_train].to_vec(),
        val: seeds[n_train..].to_vec(),
        test,
    };
    split.check_disjoint()?;
    Ok(split)
}

/// One seed per line under `[train]`, `[val]` and `[test]` headers.
pub fn write_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut text = String::new();
    for (name, part) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        writeln!(text, "[{name}]").expect("write to string");
        for s in part {
            writeln!(text, "{s}").expect("write to string");
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetSplit> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub(crate) fn parse_manifest(text: &str) -> Result<DatasetSplit> {
    let mut parts: [Vec<u64>; 3] = Default::default();
    let mut section: Option<usize> = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| DataError::Format {
            offset: here,
            detail,
        };
        match line {
            "[train]" => section = Some(0),
            "[val]" => section = Some(1),
            "[test]" => section = Some(2),
            _ => {
                let seed = line
                    .parse::<u64>()
                    .map_err(|_| bad(format!("expected a seed or section header, got {line:?}")))?;
                let i = section.ok_or_else(|| bad(format!("seed {seed} outside any section")))?;
                parts[i].push(seed);
            }
        }
    }
    let [train, val, test] = parts;
    let split = DatasetSplit { train, val, test };
    split.check_disjoint()?;
    Ok(split)
}
