//! Style-stack assembly: truncation, the static latent and per-band mixing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Band, LatentVector, StyleStack, StyleVector};

/// Row ranges `[start, end)` of the style stack driven by each camera band.
/// Rows listed in `static_rows` take the static style regardless of band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingRanges {
    pub coarse: [usize; 2],
    pub middle: [usize; 2],
    pub fine: [usize; 2],
    #[serde(default)]
    pub static_rows: Vec<usize>,
}

impl MixingRanges {
    /// Quarter / quarter / half split, `[0,4) [4,8) [8,16)` for 16 rows.
    pub fn for_num_ws(num_ws: usize) -> Self {
        let q = num_ws / 4;
        let h = num_ws / 2;
        Self {
            coarse: [0, q],
            middle: [q, h],
            fine: [h, num_ws],
            static_rows: Vec::new(),
        }
    }

    /// The stacked-camera configuration where camera features drive the
    /// coarse and middle rows and the fine rows come from the static latent.
    pub fn camera_structure_static_color(num_ws: usize) -> Self {
        let mut r = Self::for_num_ws(num_ws);
        r.static_rows = (r.fine[0]..r.fine[1]).collect();
        r
    }

    fn bands(&self) -> [(Band, [usize; 2]); 3] {
        [
            (Band::Coarse, self.coarse),
            (Band::Middle, self.middle),
            (Band::Fine, self.fine),
        ]
    }

    pub fn validate(&self, num_ws: usize) -> Result<()> {
        for (band, [start, end]) in self.bands() {
            if start > end || end > num_ws {
                return Err(Error::config(format!(
                    "{band} range [{start}, {end}) is not within [0, {num_ws})"
                )));
            }
        }
        let bands = self.bands();
        for (i, (a, ra)) in bands.iter().enumerate() {
            for (b, rb) in &bands[i + 1..] {
                if ra[0] < rb[1] && rb[0] < ra[1] {
                    return Err(Error::config(format!("ranges overlap: {a} and {b}")));
                }
            }
        }
        if let Some(r) = self.static_rows.iter().find(|&&r| r >= num_ws) {
            return Err(Error::config(format!("static row {r} outside [0, {num_ws})")));
        }
        if let Some(row) = (0..num_ws).find(|&r| self.band_of(r).is_none()) {
            return Err(Error::config(format!("row {row} is not covered by any band")));
        }
        Ok(())
    }

    /// The band that supplies `row`, with static rows taking precedence.
    pub fn band_of(&self, row: usize) -> Option<Band> {
        if self.static_rows.contains(&row) {
            return Some(Band::Static);
        }
        self.bands()
            .into_iter()
            .find(|(_, [s, e])| (*s..*e).contains(&row))
            .map(|(b, _)| b)
    }
}

/// `w_avg + psi * (w - w_avg)`.
pub fn truncate(w: &StyleVector, w_avg: &StyleVector, psi: f64) -> Result<StyleVector> {
    let values = truncate_values(w.values(), w_avg.values(), psi)?;
    StyleVector::new(values, w.band())
}

fn truncate_values(w: &[f64], w_avg: &[f64], psi: f64) -> Result<Vec<f64>> {
    if w.len() != w_avg.len() {
        return Err(Error::contract(format!(
            "truncation operands differ in dimension: {} vs {}",
            w.len(),
            w_avg.len()
        )));
    }
    // Endpoints must be bit-exact, which the affine form does not guarantee
    // in floating point (signed zeros, cancellation).
    if psi == 1.0 {
        return Ok(w.to_vec());
    }
    if psi == 0.0 {
        return Ok(w_avg.to_vec());
    }
    Ok(w.iter().zip(w_avg).map(|(&x, &m)| m + psi * (x - m)).collect())
}

/// Camera-derived style vectors for the three bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStyles {
    pub coarse: StyleVector,
    pub middle: StyleVector,
    pub fine: StyleVector,
}

pub fn build_style_stack(
    bands: &BandStyles,
    w_static: &StyleVector,
    ranges: &MixingRanges,
    num_ws: usize,
) -> Result<StyleStack> {
    let dim = w_static.dim();
    for w in [&bands.coarse, &bands.middle, &bands.fine] {
        if w.dim() != dim {
            return Err(Error::contract(format!(
                "style vectors differ in dimension: {} vs {dim}",
                w.dim()
            )));
        }
    }
    ranges.validate(num_ws)?;
    let mut rows = Vec::with_capacity(num_ws);
    let mut provenance = Vec::with_capacity(num_ws);
    for r in 0..num_ws {
        let band = ranges
            .band_of(r)
            .ok_or_else(|| Error::config(format!("row {r} is not covered by any band")))?;
        let src = match band {
            Band::Coarse => &bands.coarse,
            Band::Middle => &bands.middle,
            Band::Fine => &bands.fine,
            Band::Static => w_static,
        };
        rows.push(src.values().to_vec());
        provenance.push(band);
    }
    StyleStack::new(rows, provenance)
}

/// Truncation settings applied row by row after stack assembly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandPsi {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub middle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<f64>,
}

impl BandPsi {
    pub fn is_empty(&self) -> bool {
        self.coarse.is_none() && self.middle.is_none() && self.fine.is_none()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> {
        [self.coarse, self.middle, self.fine].into_iter().flatten()
    }
}

/// Applies truncation to every row: per-band overrides win over `psi`, and
/// static rows are left alone when `exempt_static` is set.
pub fn truncate_stack(
    stack: &StyleStack,
    w_avg: &StyleVector,
    psi: f64,
    overrides: &BandPsi,
    exempt_static: bool,
) -> Result<StyleStack> {
    let mut out = stack.clone();
    let provenance = stack.provenance().to_vec();
    for (row, band) in out.rows_mut().iter_mut().zip(provenance) {
        let row_psi = match band {
            Band::Static if exempt_static => continue,
            Band::Static => psi,
            Band::Coarse => overrides.coarse.unwrap_or(psi),
            Band::Middle => overrides.middle.unwrap_or(psi),
            Band::Fine => overrides.fine.unwrap_or(psi),
        };
        *row = truncate_values(row, w_avg.values(), row_psi)?;
    }
    Ok(out)
}

/// Seeded standard-normal vector; identical seeds give identical bits.
pub fn sample_standard_normal(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticLatentState {
    pub seed: u64,
    pub z_static: LatentVector,
    pub w_static: StyleVector,
}

/// Draws `z_static` from `seed` and maps it through `mapper`.
pub fn reseed_static<F>(seed: u64, z_dim: usize, mapper: F) -> Result<StaticLatentState>
where
    F: FnOnce(&LatentVector) -> Result<StyleVector>,
{
    let z_static = LatentVector::new(sample_standard_normal(seed, z_dim))?;
    let w_static = mapper(&z_static)?.with_band(Band::Static);
    Ok(StaticLatentState {
        seed,
        z_static,
        w_static,
    })
}
