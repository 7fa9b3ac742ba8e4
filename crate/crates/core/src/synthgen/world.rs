//! Latent environmental fields.
//!
//! Each base field is a normalised sum of low-frequency plane waves with
//! seeded integer wave numbers and phases, so it lies in `[-1, 1]`. The
//! physical fields are fixed functions of those bases:
//!
//! | field          | definition                                           |
//! |----------------|------------------------------------------------------|
//! | elevation      | `1000 + 900·z_e` m                                   |
//! | temperature    | `14 + 7·z_t − 0.0065·(elevation − 1000)` °C (lapse)   |
//! | precipitation  | `850 + 450·z_p` mm/yr                                |
//! | pet            | `350·exp(0.045·temperature)` mm/yr                   |
//! | soil moisture  | `0.04 + 0.40·P/(P+PET) + 0.03·z_s` m³/m³             |
//! | vegetation     | `logistic(2.5·(P−850)/450 + z_v)`                    |
//! | roughness      | `0.5 + 0.5·z_r`                                      |
//! | seasonality    | `0.5 + 0.5·z_q`                                      |
//!
//! Aridity is `P / PET` pointwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::RngStream;

pub const LAPSE_RATE: f64 = 0.0065;
pub const PET_SCALE: f64 = 350.0;
pub const PET_RATE: f64 = 0.045;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    /// Plane-wave components per base field.
    pub components: usize,
    /// Largest absolute wave number (cycles per world extent).
    pub max_wavenumber: i64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rows: 512,
            cols: 512,
            components: 6,
            max_wavenumber: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Elevation,
    Temperature,
    Precipitation,
    Pet,
    SoilMoisture,
    Vegetation,
    Roughness,
    Seasonality,
}

#[derive(Clone, Debug)]
pub struct LatentWorld {
    pub rows: usize,
    pub cols: usize,
    pub elevation: Vec<f64>,
    pub temperature: Vec<f64>,
    pub precipitation: Vec<f64>,
    pub pet: Vec<f64>,
    pub soil_moisture: Vec<f64>,
    pub vegetation: Vec<f64>,
    pub roughness: Vec<f64>,
    pub seasonality: Vec<f64>,
}

struct Wave {
    kr: f64,
    kc: f64,
    amp: f64,
    phase: f64,
}

fn base_field(rng: &mut RngStream, cfg: &WorldConfig) -> Vec<f64> {
    let span = 2 * cfg.max_wavenumber + 1;
    let waves: Vec<Wave> = (0..cfg.components)
        .map(|_| {
            let (kr, kc) = loop {
                let kr = rng.index(span as usize) as i64 - cfg.max_wavenumber;
                let kc = rng.index(span as usize) as i64 - cfg.max_wavenumber;
                if kr != 0 || kc != 0 {
                    break (kr, kc);
                }
            };
            let k = ((kr * kr + kc * kc) as f64).sqrt();
            Wave {
                kr: kr as f64,
                kc: kc as f64,
                amp: 1.0 / k,
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            }
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.amp).sum();
    let mut out = vec![0.0; cfg.rows * cfg.cols];
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let (y, x) = (r as f64 / cfg.rows as f64, c as f64 / cfg.cols as f64);
            let v: f64 = waves
                .iter()
                .map(|w| w.amp * (std::f64::consts::TAU * (w.kr * y + w.kc * x) + w.phase).sin())
                .sum();
            out[r * cfg.cols + c] = v / norm;
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn pet_of(temperature: f64) -> f64 {
    PET_SCALE * (PET_RATE * temperature).exp()
}

pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<LatentWorld> {
    if cfg.rows < 64 || cfg.cols < 64 {
        return Err(Error::invalid(format!(
            "world extents {}x{} are below the 64x64 minimum",
            cfg.rows, cfg.cols
        )));
    }
    if cfg.components == 0 || cfg.max_wavenumber < 1 {
        return Err(Error::invalid("world needs at least one wave component"));
    }
    let mut rng = RngStream::new(seed);
    let z_e = base_field(&mut rng, cfg);
    let z_t = base_field(&mut rng, cfg);
    let z_p = base_field(&mut rng, cfg);
    let z_s = base_field(&mut rng, cfg);
    let z_v = base_field(&mut rng, cfg);
    let z_r = base_field(&mut rng, cfg);
    let z_q = base_field(&mut rng, cfg);

    let n = cfg.rows * cfg.cols;
    let mut w = LatentWorld {
        rows: cfg.rows,
        cols: cfg.cols,
        elevation: vec![0.0; n],
        temperature: vec![0.0; n],
        precipitation: vec![0.0; n],
        pet: vec![0.0; n],
        soil_moisture: vec![0.0; n],
        vegetation: vec![0.0; n],
        roughness: vec![0.0; n],
        seasonality: vec![0.0; n],
    };
    for i in 0..n {
        let elev = 1000.0 + 900.0 * z_e[i];
        let temp = 14.0 + 7.0 * z_t[i] - LAPSE_RATE * (elev - 1000.0);
        let precip = 850.0 + 450.0 * z_p[i];
        let pet = pet_of(temp);
        w.elevation[i] = elev;
        w.temperature[i] = temp;
        w.precipitation[i] = precip;
        w.pet[i] = pet;
        w.soil_moisture[i] = 0.04 + 0.40 * precip / (precip + pet) + 0.03 * z_s[i];
        w.vegetation[i] = logistic(2.5 * (precip - 850.0) / 450.0 + z_v[i]);
        w.roughness[i] = (0.5 + 0.5 * z_r[i]).clamp(0.0, 1.0);
        w.seasonality[i] = (0.5 + 0.5 * z_q[i]).clamp(0.0, 1.0);
    }
    Ok(w)
}

impl LatentWorld {
    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::Elevation => &self.elevation,
            Field::Temperature => &self.temperature,
            Field::Precipitation => &self.precipitation,
            Field::Pet => &self.pet,
            Field::SoilMoisture => &self.soil_moisture,
            Field::Vegetation => &self.vegetation,
            Field::Roughness => &self.roughness,
            Field::Seasonality => &self.seasonality,
        }
    }

    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn get(&self, f: Field, r: usize, c: usize) -> f64 {
        self.field(f)[self.idx(r, c)]
    }

    pub fn aridity(&self, r: usize, c: usize) -> f64 {
        let i = self.idx(r, c);
        self.precipitation[i] / self.pet[i]
    }

    /// Central-difference elevation gradient (m per pixel), one-sided at edges.
    pub fn elevation_gradient(&self, r: usize, c: usize) -> (f64, f64) {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(self.rows - 1));
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(self.cols - 1));
        let dr = (self.get(Field::Elevation, r1, c) - self.get(Field::Elevation, r0, c))
            / (r1 - r0) as f64;
        let dc = (self.get(Field::Elevation, r, c1) - self.get(Field::Elevation, r, c0))
            / (c1 - c0) as f64;
        (dr, dc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            rows: 128,
            cols: 128,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_world(5, &small()).unwrap();
        let b = generate_world(5, &small()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.temperature), bits(&b.temperature));
        assert_eq!(bits(&a.soil_moisture), bits(&b.soil_moisture));
        let c = generate_world(6, &small()).unwrap();
        assert_ne!(bits(&a.elevation), bits(&c.elevation));
    }

    #[test]
    fn rejects_small_extents() {
        let cfg = WorldConfig {
            rows: 32,
            ..WorldConfig::default()
        };
        assert!(generate_world(1, &cfg).is_err());
    }

    #[test]
    fn field_ranges() {
        let w = generate_world(2, &small()).unwrap();
        assert!(w.pet.iter().all(|&p| p > 0.0));
        for f in [&w.vegetation, &w.roughness, &w.seasonality] {
            assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for f in [Field::Elevation, Field::Temperature, Field::SoilMoisture] {
            assert!(w.field(f).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn aridity_is_pointwise_ratio() {
        let w = generate_world(3, &small()).unwrap();
        for &(r, c) in &[(0, 0), (17, 99), (127, 127)] {
            let i = w.idx(r, c);
            assert_eq!(w.aridity(r, c), w.precipitation[i] / w.pet[i]);
        }
    }
}
