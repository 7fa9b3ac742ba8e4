//! Sensor forward models. Each renders a `C × S × S` image for one window.

use serde::{Deserialize, Serialize};

use super::modality::Modality;
use super::world::{Field, LatentWorld};
use crate::error::{Error, Result};
use crate::ndcore::{RngStream, Tensor};

/// Pixel size in metres, used for slope.
pub const PIXEL_METRES: f64 = 30.0;

/// Noise magnitudes for every forward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Additive reflectance noise std (optical).
    pub optical: f64,
    /// Speckle equivalent number of looks; `None` disables speckle.
    pub sar_looks: Option<f64>,
    /// Additive brightness-temperature noise std in °C.
    pub thermal: f64,
    /// Additive reflectance noise std (phenology composites).
    pub phenology: f64,
    /// Soil-property noise as a fraction of each property's scale.
    pub soil: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            optical: 0.01,
            sar_looks: Some(1.0),
            thermal: 0.05,
            phenology: 0.01,
            soil: 0.3,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            optical: 0.0,
            sar_looks: None,
            thermal: 0.0,
            phenology: 0.0,
            soil: 0.0,
        }
    }
}

/// Square window `[row0, row0+size) × [col0, col0+size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
}

impl Window {
    pub fn center(&self) -> (usize, usize) {
        (self.row0 + self.size / 2, self.col0 + self.size / 2)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row0..self.row0 + self.size)
            .flat_map(move |r| (self.col0..self.col0 + self.size).map(move |c| (r, c)))
    }
}

// Band responses: visible (3), red edge (3), NIR (2), SWIR (2).
const VEG_SIG: [f64; 10] = [0.03, 0.06, 0.04, 0.15, 0.30, 0.40, 0.45, 0.45, 0.20, 0.10];
const SOIL_SIG: [f64; 10] = [0.10, 0.13, 0.16, 0.18, 0.20, 0.22, 0.24, 0.25, 0.30, 0.28];
const MOIST_SIG: [f64; 10] = [0.02, 0.02, 0.03, 0.03, 0.04, 0.05, 0.06, 0.06, 0.20, 0.25];

/// Composites are normalised to a fixed dry soil background.
const COMPOSITE_SOIL: f64 = 0.5;

fn soil_brightness(elevation: f64) -> f64 {
    0.5 + 0.3 * (elevation - 1000.0) / 900.0
}

fn reflectance(band: usize, green: f64, moisture: f64, elevation: f64) -> f64 {
    surface(band, green, moisture, soil_brightness(elevation))
}

fn surface(band: usize, green: f64, moisture: f64, soil: f64) -> f64 {
    0.05 + green * VEG_SIG[band] + (1.0 - green) * soil * SOIL_SIG[band] - moisture * MOIST_SIG[band]
}

/// Noiseless SAR backscatter (VV, VH), linear power. Rendered images are in dB.
pub fn sar_backscatter(roughness: f64, moisture: f64, vegetation: f64) -> [f64; 2] {
    [
        0.05 + 0.15 * roughness + 0.40 * moisture + 0.05 * vegetation,
        0.01 + 0.05 * roughness + 0.10 * moisture + 0.10 * vegetation,
    ]
}

/// Noiseless day and night land-surface temperature.
pub fn thermal_channels(temperature: f64, elevation: f64, moisture: f64) -> [f64; 2] {
    [
        temperature + 6.0 - 15.0 * moisture - 0.003 * (elevation - 1000.0),
        temperature - 8.0 - 0.002 * (elevation - 1000.0),
    ]
}

fn check_window(world: &LatentWorld, w: &Window) -> Result<()> {
    if w.size == 0 || w.row0 + w.size > world.rows || w.col0 + w.size > world.cols {
        return Err(Error::invalid(format!(
            "window {w:?} lies outside the {}x{} world",
            world.rows, world.cols
        )));
    }
    Ok(())
}

/// Renders one modality over a window, drawing noise from `rng`.
pub fn render(
    world: &LatentWorld,
    modality: Modality,
    window: &Window,
    noise: &NoiseConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    check_window(world, window)?;
    let s = window.size;
    let ch = modality.channels();
    let mut img = vec![0.0; ch * s * s];
    let at = |c: usize, i: usize, j: usize| (c * s + i) * s + j;
    for i in 0..s {
        for j in 0..s {
            let (r, c) = (window.row0 + i, window.col0 + j);
            let elev = world.get(Field::Elevation, r, c);
            let temp = world.get(Field::Temperature, r, c);
            let sm = world.get(Field::SoilMoisture, r, c);
            let veg = world.get(Field::Vegetation, r, c);
            match modality {
                Modality::Optical => {
                    for b in 0..10 {
                        img[at(b, i, j)] = reflectance(b, veg, sm, elev) + noise.optical * rng.normal();
                    }
                }
                Modality::Sar => {
                    let rough = world.get(Field::Roughness, r, c);
                    let clean = sar_backscatter(rough, sm, veg);
                    for (b, &v) in clean.iter().enumerate() {
                        let speckle = match noise.sar_looks {
                            Some(looks) => rng.gamma(looks, 1.0 / looks),
                            None => 1.0,
                        };
                        img[at(b, i, j)] = 10.0 * (v * speckle).max(1e-12).log10();
                    }
                }
                Modality::Thermal => {
                    let clean = thermal_channels(temp, elev, sm);
                    for (b, &v) in clean.iter().enumerate() {
                        img[at(b, i, j)] = v + noise.thermal * rng.normal();
                    }
                }
                Modality::Phenology => {
                    let seas = world.get(Field::Seasonality, r, c);
                    let precip = world.get(Field::Precipitation, r, c);
                    let amp = 0.9 * seas * (precip / 1300.0);
                    for q in 0..4 {
                        let phase = std::f64::consts::TAU * (q as f64 - 2.0) / 4.0;
                        let green = (veg * (1.0 + amp * phase.cos())).clamp(0.0, 1.0);
                        for b in 0..10 {
                            img[at(q * 10 + b, i, j)] =
                                surface(b, green, 0.0, COMPOSITE_SOIL) + noise.phenology * rng.normal();
                        }
                    }
                }
                Modality::Toposoil => {
                    let (dr, dc) = world.elevation_gradient(r, c);
                    let slope = (dr * dr + dc * dc).sqrt() / PIXEL_METRES;
                    let aspect = dr.atan2(dc);
                    let dz = (elev - 1000.0) / 900.0;
                    let smn = (sm - 0.25) / 0.1;
                    img[at(0, i, j)] = elev;
                    img[at(1, i, j)] = slope;
                    img[at(2, i, j)] = aspect;
                    img[at(3, i, j)] = 20.0 + 5.0 * smn - 4.0 * dz + 5.0 * noise.soil * rng.normal();
                    img[at(4, i, j)] = 40.0 - 8.0 * smn + 6.0 * dz + 8.0 * noise.soil * rng.normal();
                    img[at(5, i, j)] = 2.0 + 0.5 * smn - 0.3 * dz + 0.5 * noise.soil * rng.normal();
                }
            }
        }
    }
    Tensor::new(vec![ch, s, s], img)
}

/// Land-cover class at a point (fixed thresholds, first match wins):
/// 0 wetland (soil moisture ≥ 0.29), 1 highland (elevation ≥ 1500 m),
/// 2 forest (vegetation ≥ 0.6), 3 grassland (vegetation ≥ 0.3), 4 barren.
pub fn land_cover_class(vegetation: f64, soil_moisture: f64, elevation: f64) -> u32 {
    if soil_moisture >= 0.29 {
        0
    } else if elevation >= 1500.0 {
        1
    } else if vegetation >= 0.6 {
        2
    } else if vegetation >= 0.3 {
        3
    } else {
        4
    }
}

pub const LAND_COVER_CLASSES: usize = 5;
pub const LAND_COVER_NAMES: [&str; LAND_COVER_CLASSES] = ["wetland", "highland", "forest", "grassland", "barren"];
pub const CLIMATE_CLASSES: usize = 4;
pub const CLIMATE_NAMES: [&str; CLIMATE_CLASSES] = ["cool-arid", "warm-arid", "cool-humid", "warm-humid"];

/// Climate class by quadrant: bit 0 set when warm (≥ 14 °C), bit 1 set when
/// humid (aridity index ≥ 1.0).
pub fn climate_class(temperature: f64, aridity: f64) -> u32 {
    u32::from(temperature >= 14.0) | (u32::from(aridity >= 1.0) << 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::world::{generate_world, WorldConfig};

    fn world() -> LatentWorld {
        generate_world(
            4,
            &WorldConfig {
                rows: 64,
                cols: 64,
                ..WorldConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn shapes_follow_channel_table() {
        let w = world();
        let win = Window { row0: 8, col0: 8, size: 16 };
        let mut rng = RngStream::new(1);
        for m in Modality::ALL {
            let t = render(&w, m, &win, &NoiseConfig::default(), &mut rng).unwrap();
            assert_eq!(t.shape(), &[m.channels(), 16, 16]);
            assert!(t.all_finite());
        }
    }

    #[test]
    fn zero_noise_toposoil_elevation_identity() {
        let w = world();
        let win = Window { row0: 3, col0: 40, size: 16 };
        let mut rng = RngStream::new(1);
        let t = render(&w, Modality::Toposoil, &win, &NoiseConfig::zero(), &mut rng).unwrap();
        for (k, (r, c)) in win.cells().enumerate() {
            assert_eq!(t.data()[k], w.get(Field::Elevation, r, c));
        }
    }

    #[test]
    fn window_outside_world_is_rejected() {
        let w = world();
        let win = Window { row0: 60, col0: 0, size: 16 };
        let mut rng = RngStream::new(1);
        assert!(render(&w, Modality::Sar, &win, &NoiseConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn class_rules() {
        assert_eq!(land_cover_class(0.9, 0.4, 500.0), 0);
        assert_eq!(land_cover_class(0.9, 0.2, 1600.0), 1);
        assert_eq!(land_cover_class(0.7, 0.2, 1450.0), 2);
        assert_eq!(land_cover_class(0.7, 0.2, 900.0), 2);
        assert_eq!(land_cover_class(0.4, 0.2, 900.0), 3);
        assert_eq!(land_cover_class(0.1, 0.2, 900.0), 4);
        assert_eq!(climate_class(20.0, 0.5), 1);
        assert_eq!(climate_class(5.0, 1.5), 2);
    }
}
