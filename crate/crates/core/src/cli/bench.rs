use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BenchArgs, CliError, Result};
use crate::attention::{
    complexity_mhsa, complexity_msta, mhsa_forward, msta_forward, AttentionConfig, MhsaWeights,
    MstaWeights,
};
use crate::tensor::Tensor;

pub const BENCH_CSV_HEADER: &str =
    "c,h,w,g_prime,flops_mhsa,flops_msta,ratio,mhsa_ms,msta_ms,wall_ratio,wall_clock";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WallClock {
    Measured {
        mhsa_ms: f64,
        msta_ms: f64,
    },
    /// The full attention matrix would exceed the memory limit.
    SkippedMemory,
    /// The map does not tile into the MSTA windows.
    SkippedShape,
    Disabled,
}

impl WallClock {
    fn flag(&self) -> &'static str {
        match self {
            WallClock::Measured { .. } => "measured",
            WallClock::SkippedMemory => "analytic-only:memory",
            WallClock::SkippedShape => "analytic-only:shape",
            WallClock::Disabled => "analytic-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub g_prime: u64,
    pub flops_mhsa: u64,
    /// `None` when `g_prime` does not divide the map.
    pub flops_msta: Option<u64>,
    pub wall: WallClock,
}

impl BenchRow {
    pub fn ratio(&self) -> Option<f64> {
        self.flops_msta.map(|m| m as f64 / self.flops_mhsa as f64)
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let (mhsa, msta, wall) = match self.wall {
            WallClock::Measured { mhsa_ms, msta_ms } => (
                format!("{mhsa_ms:.3}"),
                format!("{msta_ms:.3}"),
                format!("{:.4}", msta_ms / mhsa_ms),
            ),
            _ => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{mhsa},{msta},{wall},{}",
            self.c,
            self.h,
            self.w,
            self.g_prime,
            self.flops_mhsa,
            opt(self.flops_msta.map(|v| v.to_string())),
            opt(self.ratio().map(|r| format!("{r:.6}"))),
            self.wall.flag()
        )
    }
}

/// Fastest of a few runs, stopping once 200 ms have been spent.
fn time_ms(mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = Duration::MAX;
    let start = Instant::now();
    for _ in 0..5 {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed());
        if start.elapsed() > Duration::from_millis(200) {
            break;
        }
    }
    Ok(best.as_secs_f64() * 1e3)
}

fn wall_clock(c: u64, h: u64, w: u64, g_prime: u64, args: &BenchArgs) -> Result<WallClock> {
    if args.analytic_only {
        return Ok(WallClock::Disabled);
    }
    let cfg = AttentionConfig {
        heads: 1,
        g: args.g as usize,
        g_prime: g_prime as usize,
        ..AttentionConfig::default()
    };
    let (c, h, w) = (c as usize, h as usize, w as usize);
    if cfg.check_map(h, w).is_err() {
        return Ok(WallClock::SkippedShape);
    }
    // scores, probabilities and their product each hold (hw)² values
    let tokens = (h * w) as u128;
    let bytes = 3 * tokens * tokens * std::mem::size_of::<f32>() as u128;
    if bytes > (args.mem_limit_mb as u128) << 20 {
        return Ok(WallClock::SkippedMemory);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x = Tensor::<f32>::randn(&[c, h, w], 1.0, &mut rng);
    let mhsa = MhsaWeights::random(c, &mut rng);
    let msta = MstaWeights::random(c, &mut rng);
    let mhsa_ms = time_ms(|| Ok(mhsa_forward(&x, &mhsa, &cfg).map(drop)?))?;
    let msta_ms = time_ms(|| Ok(msta_forward(&x, &msta, &cfg).map(drop)?))?;
    Ok(WallClock::Measured { mhsa_ms, msta_ms })
}

fn bench_row(c: u64, h: u64, w: u64, g_prime: u64, args: &BenchArgs) -> Result<BenchRow> {
    let flops_mhsa = complexity_mhsa(c, h, w).map_err(|e| CliError::Usage(e.to_string()))?;
    let flops_msta = if g_prime > 0 && h % g_prime == 0 && w % g_prime == 0 {
        Some(complexity_msta(c, h, w, g_prime).map_err(|e| CliError::Usage(e.to_string()))?)
    } else if g_prime == 0 {
        return Err(CliError::Usage("g_prime must be a positive integer".into()));
    } else {
        None
    };
    let wall = wall_clock(c, h, w, g_prime, args)?;
    Ok(BenchRow {
        c,
        h,
        w,
        g_prime,
        flops_mhsa,
        flops_msta,
        wall,
    })
}

/// One row per geometry: the given values, or with `sweep` every
/// combination of the lists.
pub fn bench_rows(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let lists = [&args.c, &args.h, &args.w, &args.gprime];
    if !args.sweep && lists.iter().any(|l| l.len() != 1) {
        return Err(CliError::Usage(
            "pass one value per dimension, or --sweep to combine lists".into(),
        ));
    }
    let mut rows = Vec::new();
    for &c in &args.c {
        for &h in &args.h {
            for &w in &args.w {
                for &gp in &args.gprime {
                    rows.push(bench_row(c, h, w, gp, args)?);
                }
            }
        }
    }
    Ok(rows)
}

pub(super) fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let rows = bench_rows(args)?;
    println!("{BENCH_CSV_HEADER}");
    for r in rows {
        println!("{}", r.csv_row());
    }
    Ok(())
}
