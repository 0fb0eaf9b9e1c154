//! Closed-form FLOP counts for full-image MHSA and two-level MSTA.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ComplexityError {
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("shape error: {0}")]
    Shape(String),
}

fn positive(name: &str, v: u64) -> Result<u128, ComplexityError> {
    if v == 0 {
        return Err(ComplexityError::Arithmetic(format!(
            "{name} must be a positive integer"
        )));
    }
    Ok(v as u128)
}

fn narrow(v: Option<u128>) -> Result<u64, ComplexityError> {
    v.and_then(|v| u64::try_from(v).ok())
        .ok_or_else(|| ComplexityError::Arithmetic("flop count overflows u64".into()))
}

/// `2·c·h²·w² + 3·h·w·c²`
pub fn complexity_mhsa(c: u64, h: u64, w: u64) -> Result<u64, ComplexityError> {
    let (c, h, w) = (positive("c", c)?, positive("h", h)?, positive("w", w)?);
    let hw = h.checked_mul(w);
    let v = hw.and_then(|hw| {
        let quad = hw.checked_mul(hw)?.checked_mul(c)?.checked_mul(2)?;
        let lin = hw.checked_mul(c)?.checked_mul(c)?.checked_mul(3)?;
        quad.checked_add(lin)
    });
    narrow(v)
}

/// `c·h·w·(2g′² + 4c) + (2·c·h·w / g′²)·(c + h·w)`
pub fn complexity_msta(c: u64, h: u64, w: u64, g_prime: u64) -> Result<u64, ComplexityError> {
    let (c, h, w, gp) = (
        positive("c", c)?,
        positive("h", h)?,
        positive("w", w)?,
        positive("g_prime", g_prime)?,
    );
    if h % gp != 0 || w % gp != 0 {
        return Err(ComplexityError::Shape(format!(
            "g_prime {gp} must divide both h {h} and w {w}"
        )));
    }
    let v = (|| {
        let chw = c.checked_mul(h)?.checked_mul(w)?;
        let local = chw.checked_mul(
            gp.checked_mul(gp)?
                .checked_mul(2)?
                .checked_add(c.checked_mul(4)?)?,
        )?;
        let coarse_tokens = chw.checked_mul(2)? / (gp * gp);
        let global = coarse_tokens.checked_mul(c.checked_add(h.checked_mul(w)?)?)?;
        local.checked_add(global)
    })();
    narrow(v)
}

/// Both counts for one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub g_prime: u64,
    pub flops_mhsa: u64,
    pub flops_msta: u64,
    /// `flops_msta / flops_mhsa`
    pub ratio: f64,
}

impl ComplexityReport {
    pub const CSV_HEADER: &'static str = "c,h,w,g_prime,flops_mhsa,flops_msta,ratio";

    pub fn new(c: u64, h: u64, w: u64, g_prime: u64) -> Result<Self, ComplexityError> {
        let flops_mhsa = complexity_mhsa(c, h, w)?;
        let flops_msta = complexity_msta(c, h, w, g_prime)?;
        Ok(Self {
            c,
            h,
            w,
            g_prime,
            flops_mhsa,
            flops_msta,
            ratio: flops_msta as f64 / flops_mhsa as f64,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.c, self.h, self.w, self.g_prime, self.flops_mhsa, self.flops_msta, self.ratio
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        assert_eq!(complexity_mhsa(3, 360, 360).unwrap(), 100_780_459_200);
        assert_eq!(complexity_msta(3, 360, 360, 2).unwrap(), 25_202_599_200);
        let r = ComplexityReport::new(3, 360, 360, 2).unwrap();
        assert!((0.2500..0.2502).contains(&r.ratio), "{}", r.ratio);
    }

    #[test]
    fn small_hand_values() {
        assert_eq!(complexity_mhsa(1, 1, 1).unwrap(), 5);
        assert_eq!(complexity_mhsa(2, 4, 4).unwrap(), 1216);
        assert_eq!(complexity_msta(1, 2, 2, 2).unwrap(), 58);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            complexity_msta(1, 6, 6, 4),
            Err(ComplexityError::Shape(_))
        ));
        assert!(matches!(
            complexity_mhsa(u64::MAX, 1 << 20, 1 << 20),
            Err(ComplexityError::Arithmetic(_))
        ));
        assert!(complexity_mhsa(0, 1, 1).is_err());
    }

    #[test]
    fn msta_cheaper_on_sweep() {
        for c in 1..=16u64 {
            for edge in (8..=128).step_by(8) {
                if edge * edge <= 4 * c {
                    continue;
                }
                for gp in [2u64, 4] {
                    if edge % gp != 0 {
                        continue;
                    }
                    assert!(
                        complexity_msta(c, edge, edge, gp).unwrap()
                            < complexity_mhsa(c, edge, edge).unwrap(),
                        "c={c} edge={edge} g'={gp}"
                    );
                }
            }
        }
    }

    #[test]
    fn single_coarse_cell_is_not_cheaper() {
        // g' equal to the map edge leaves one level-2 token and the local term dominates
        assert!(complexity_msta(1, 8, 8, 8).unwrap() > complexity_mhsa(1, 8, 8).unwrap());
    }
}
