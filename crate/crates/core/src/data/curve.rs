use rand::Rng;

use crate::error::{Error, Result};

/// Parametric camera response: maps scene irradiance in `[0, 1]` to a
/// pixel value in `[0, 1]`, with both endpoints fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CameraCurve {
    /// `x^exponent`.
    Gamma { exponent: f64 },
    /// Logistic curve rescaled so that `0 -> 0` and `1 -> 1`.
    Sigmoid { slope: f64, midpoint: f64 },
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl CameraCurve {
    pub fn gamma(exponent: f64) -> Result<Self> {
        let c = CameraCurve::Gamma { exponent };
        c.validate()?;
        Ok(c)
    }

    pub fn sigmoid(slope: f64, midpoint: f64) -> Result<Self> {
        let c = CameraCurve::Sigmoid { slope, midpoint };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CameraCurve::Gamma { exponent } => exponent > 0.0 && exponent.is_finite(),
            CameraCurve::Sigmoid { slope, midpoint } => {
                slope > 0.0 && slope.is_finite() && (0.0..=1.0).contains(&midpoint)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid camera curve {self:?}")))
        }
    }

    /// Gamma exponents 1/1.8, 1/2.0, 1/2.2, 1/2.4 and sigmoids of slope
    /// 4, 6, 8 centred at 0.5.
    pub fn standard_set() -> Vec<CameraCurve> {
        let gammas = [1.8, 2.0, 2.2, 2.4].map(|g| CameraCurve::Gamma { exponent: 1.0 / g });
        let sigmoids = [4.0, 6.0, 8.0].map(|s| CameraCurve::Sigmoid {
            slope: s,
            midpoint: 0.5,
        });
        gammas.into_iter().chain(sigmoids).collect()
    }

    pub fn apply(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match *self {
            CameraCurve::Gamma { exponent } => x.powf(exponent),
            CameraCurve::Sigmoid { slope, midpoint } => {
                let lo = logistic(-slope * midpoint);
                let hi = logistic(slope * (1.0 - midpoint));
                ((logistic(slope * (x - midpoint)) - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        match *self {
            CameraCurve::Gamma { exponent } => y.powf(1.0 / exponent),
            CameraCurve::Sigmoid { slope, midpoint } => {
                let lo = logistic(-slope * midpoint);
                let hi = logistic(slope * (1.0 - midpoint));
                let s = lo + y * (hi - lo);
                (midpoint - (1.0 / s - 1.0).ln() / slope).clamp(0.0, 1.0)
            }
        }
    }

    /// Compact text form: `gamma:<exponent>` or `sigmoid:<slope>:<midpoint>`.
    pub fn descriptor(&self) -> String {
        match *self {
            CameraCurve::Gamma { exponent } => format!("gamma:{exponent}"),
            CameraCurve::Sigmoid { slope, midpoint } => format!("sigmoid:{slope}:{midpoint}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::contract(format!("bad number {p:?} in curve {s:?}")))
        };
        match parts.as_slice() {
            ["gamma", e] => {
                // "1/2.2" is accepted as a convenience.
                let exponent = match e.split_once('/') {
                    Some((a, b)) => num(a)? / num(b)?,
                    None => num(e)?,
                };
                Self::gamma(exponent)
            }
            ["sigmoid", slope, mid] => Self::sigmoid(num(slope)?, num(mid)?),
            _ => Err(Error::contract(format!(
                "unknown curve {s:?}; expected gamma:<e> or sigmoid:<slope>:<midpoint>"
            ))),
        }
    }
}

/// How one LDR exposure is derived from a normalized HDR image.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub exposure_ev: f64,
    pub curve: CameraCurve,
    pub quantize_bits: u32,
}

impl SynthSpec {
    pub fn new(exposure_ev: f64, curve: CameraCurve) -> Self {
        SynthSpec {
            exposure_ev,
            curve,
            quantize_bits: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.curve.validate()?;
        if !(1..=16).contains(&self.quantize_bits) {
            return Err(Error::contract(format!(
                "quantize_bits must be in 1..=16, got {}",
                self.quantize_bits
            )));
        }
        if !self.exposure_ev.is_finite() {
            return Err(Error::contract("exposure must be finite"));
        }
        Ok(())
    }

    /// EV uniform in `ev_range`, curve uniform over `curves`.
    pub fn sample(rng: &mut impl Rng, ev_range: (f64, f64), curves: &[CameraCurve]) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::contract("need at least one camera curve"));
        }
        let (lo, hi) = ev_range;
        if !(lo <= hi) {
            return Err(Error::contract(format!("empty EV range {lo}..{hi}")));
        }
        let ev = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let curve = curves[rng.gen_range(0..curves.len())];
        Ok(SynthSpec::new(ev, curve))
    }

    /// The full per-sample pipeline, returning the value in `[0, 1]` after
    /// quantization to `2^bits - 1` levels.
    pub fn map_value(&self, v: f64) -> f64 {
        let levels = (1u32 << self.quantize_bits) - 1;
        let exposed = (v * 2f64.powf(self.exposure_ev)).clamp(0.0, 1.0);
        crate::io::quantize_unit(self.curve.apply(exposed), levels) as f64 / levels as f64
    }
}
