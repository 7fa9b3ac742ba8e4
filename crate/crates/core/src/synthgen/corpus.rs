use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::modality::{Modality, Source};
use super::render::{
    climate_class, land_cover_class, render, NoiseConfig, Window, CLIMATE_CLASSES,
    LAND_COVER_CLASSES,
};
use super::world::{Field, LatentWorld, WorldConfig};
use crate::error::{Error, Result};
use crate::ndcore::{io, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_patches: usize,
    pub patch_px: usize,
    pub noise: NoiseConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_patches: 512,
            patch_px: 16,
            noise: NoiseConfig::default(),
        }
    }
}

/// Patch-level environmental labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub soil_moisture: f64,
    pub precipitation: f64,
    pub temperature: f64,
    pub elevation: f64,
    pub aridity: f64,
    pub land_cover: u32,
    pub climate: u32,
}

/// The seven labelled variables, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    SoilMoisture,
    Precipitation,
    Temperature,
    Elevation,
    Aridity,
    LandCover,
    Climate,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::SoilMoisture,
        Variable::Precipitation,
        Variable::Temperature,
        Variable::Elevation,
        Variable::Aridity,
        Variable::LandCover,
        Variable::Climate,
    ];

    pub const CONTINUOUS: [Variable; 5] = [
        Variable::SoilMoisture,
        Variable::Precipitation,
        Variable::Temperature,
        Variable::Elevation,
        Variable::Aridity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::SoilMoisture => "soil_moisture",
            Variable::Precipitation => "precipitation",
            Variable::Temperature => "temperature",
            Variable::Elevation => "elevation",
            Variable::Aridity => "aridity",
            Variable::LandCover => "land_cover",
            Variable::Climate => "climate",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, Variable::LandCover | Variable::Climate)
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::SoilMoisture => "m3/m3",
            Variable::Precipitation => "mm/yr",
            Variable::Temperature => "degC",
            Variable::Elevation => "m",
            Variable::Aridity => "P/PET",
            Variable::LandCover | Variable::Climate => "class",
        }
    }
}

impl std::str::FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variable `{s}`")))
    }
}

impl LabelRecord {
    pub fn get(&self, v: Variable) -> f64 {
        match v {
            Variable::SoilMoisture => self.soil_moisture,
            Variable::Precipitation => self.precipitation,
            Variable::Temperature => self.temperature,
            Variable::Elevation => self.elevation,
            Variable::Aridity => self.aridity,
            Variable::LandCover => self.land_cover as f64,
            Variable::Climate => self.climate as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchInfo {
    pub id: usize,
    pub window: Window,
    /// Grid row/col of the patch center.
    pub location: (usize, usize),
}

/// Rendered patches: one packed `n × C × S × S` tensor per modality, sharing
/// patch centres across modalities.
#[derive(Clone, Debug)]
pub struct PatchCorpus {
    pub seed: u64,
    pub world: WorldConfig,
    pub config: CorpusConfig,
    pub patches: Vec<PatchInfo>,
    pub labels: Vec<LabelRecord>,
    images: BTreeMap<Modality, Tensor>,
}

fn modal_class(counts: &[usize]) -> u32 {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u32
}

/// Labels recomputed from the world for one window.
pub fn labels_for_window(world: &LatentWorld, window: &Window) -> LabelRecord {
    let n = (window.size * window.size) as f64;
    let mean = |f: Field| window.cells().map(|(r, c)| world.get(f, r, c)).sum::<f64>() / n;
    let mut lc = [0usize; LAND_COVER_CLASSES];
    let mut cl = [0usize; CLIMATE_CLASSES];
    for (r, c) in window.cells() {
        lc[land_cover_class(
            world.get(Field::Vegetation, r, c),
            world.get(Field::SoilMoisture, r, c),
            world.get(Field::Elevation, r, c),
        ) as usize] += 1;
        cl[climate_class(world.get(Field::Temperature, r, c), world.aridity(r, c)) as usize] += 1;
    }
    let (cr, cc) = window.center();
    LabelRecord {
        soil_moisture: mean(Field::SoilMoisture),
        precipitation: mean(Field::Precipitation),
        temperature: mean(Field::Temperature),
        elevation: mean(Field::Elevation),
        aridity: world.aridity(cr, cc),
        land_cover: modal_class(&lc),
        climate: modal_class(&cl),
    }
}

/// Samples `n` non-overlapping windows and renders all five modalities.
pub fn sample_patches(world: &LatentWorld, cfg: &CorpusConfig, seed: u64) -> Result<PatchCorpus> {
    let ps = cfg.patch_px;
    if cfg.n_patches == 0 {
        return Err(Error::invalid("corpus needs at least one patch"));
    }
    if ps == 0 || ps > world.rows || ps > world.cols {
        return Err(Error::invalid(format!("patch size {ps} does not fit the world")));
    }
    let (gr, gc) = (world.rows / ps, world.cols / ps);
    let candidates = gr * gc;
    if cfg.n_patches > candidates {
        return Err(Error::invalid(format!(
            "{} patches requested but only {candidates} non-overlapping windows exist",
            cfg.n_patches
        )));
    }
    let mut rng = RngStream::new(seed);
    let picks = rng.sample_without_replacement(candidates, cfg.n_patches);
    let patches: Vec<PatchInfo> = picks
        .iter()
        .enumerate()
        .map(|(id, &cand)| {
            let window = Window {
                row0: (cand / gc) * ps,
                col0: (cand % gc) * ps,
                size: ps,
            };
            PatchInfo {
                id,
                window,
                location: window.center(),
            }
        })
        .collect();
    let labels = patches.iter().map(|p| labels_for_window(world, &p.window)).collect();

    let mut images = BTreeMap::new();
    for m in Modality::ALL {
        let mut packed = Vec::with_capacity(cfg.n_patches * m.channels() * ps * ps);
        for p in &patches {
            let mut prng = RngStream::derived(seed, ((p.id as u64) << 3) | m.index() as u64);
            let img = render(world, m, &p.window, &cfg.noise, &mut prng)?;
            packed.extend_from_slice(img.data());
        }
        images.insert(m, Tensor::new(vec![cfg.n_patches, m.channels(), ps, ps], packed)?);
    }
    Ok(PatchCorpus {
        seed,
        world: WorldConfig {
            rows: world.rows,
            cols: world.cols,
            ..WorldConfig::default()
        },
        config: cfg.clone(),
        patches,
        labels,
        images,
    })
}

const FIELD_RELATIONS: [&str; 6] = [
    "elevation = 1000 + 900 z_e",
    "temperature = 14 + 7 z_t - 0.0065 (elevation - 1000)",
    "precipitation = 850 + 450 z_p",
    "pet = 350 exp(0.045 temperature)",
    "soil_moisture = 0.04 + 0.40 P / (P + pet) + 0.03 z_s",
    "vegetation = logistic(2.5 (P - 850) / 450 + z_v)",
];

const CLASS_RULES: [&str; 7] = [
    "land_cover 0 wetland: soil_moisture >= 0.29",
    "land_cover 1 highland: elevation >= 1500",
    "land_cover 2 forest: vegetation >= 0.6",
    "land_cover 3 grassland: vegetation >= 0.3",
    "land_cover 4 barren: otherwise",
    "climate bit 0 warm: temperature >= 14",
    "climate bit 1 humid: aridity >= 1.0",
];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub seed: u64,
    pub world: WorldConfig,
    pub config: CorpusConfig,
    pub channels: BTreeMap<String, usize>,
    pub label_schema: Vec<LabelColumn>,
    /// Water/cloud exclusion has no synthetic analogue: filtering is a no-op.
    pub filtering: String,
    pub field_relations: Vec<String>,
    pub class_rules: Vec<String>,
    pub patches: Vec<PatchInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelColumn {
    pub name: String,
    pub unit: String,
    pub kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    patch_id: usize,
    row: usize,
    col: usize,
    soil_moisture: f64,
    precipitation: f64,
    temperature: f64,
    elevation: f64,
    aridity: f64,
    land_cover: u32,
    climate: u32,
}

impl PatchCorpus {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_px(&self) -> usize {
        self.config.patch_px
    }

    /// Packed `n × C × S × S` images of one modality.
    pub fn images(&self, m: Modality) -> &Tensor {
        &self.images[&m]
    }

    /// Image `i` of a source as `C × S × S`; the generalist stacks all modalities' channels.
    pub fn image(&self, source: Source, i: usize) -> Tensor {
        let s = self.patch_px();
        match source {
            Source::Specialist(m) => {
                let t = &self.images[&m];
                let len = m.channels() * s * s;
                Tensor::new(vec![m.channels(), s, s], t.data()[i * len..(i + 1) * len].to_vec())
                    .expect("image slice")
            }
            Source::Generalist => {
                let mut data = Vec::with_capacity(Source::Generalist.channels() * s * s);
                for m in Modality::ALL {
                    let len = m.channels() * s * s;
                    data.extend_from_slice(&self.images[&m].data()[i * len..(i + 1) * len]);
                }
                Tensor::new(vec![Source::Generalist.channels(), s, s], data).expect("stacked image")
            }
        }
    }

    pub fn locations(&self) -> Vec<(usize, usize)> {
        self.patches.iter().map(|p| p.location).collect()
    }

    pub fn label_column(&self, v: Variable) -> Vec<f64> {
        self.labels.iter().map(|l| l.get(v)).collect()
    }

    /// Index of the patch whose centre is nearest to `(row, col)`; ties to the lower id.
    pub fn nearest_patch(&self, row: usize, col: usize) -> usize {
        let d = |p: &PatchInfo| {
            let dr = p.location.0 as f64 - row as f64;
            let dc = p.location.1 as f64 - col as f64;
            dr * dr + dc * dc
        };
        let mut best = 0;
        for (i, p) in self.patches.iter().enumerate() {
            if d(p) < d(&self.patches[best]) {
                best = i;
            }
        }
        best
    }

    /// Recomputes every label from the world and checks exact equality.
    pub fn verify_labels(&self, world: &LatentWorld) -> Result<()> {
        for (p, l) in self.patches.iter().zip(&self.labels) {
            if labels_for_window(world, &p.window) != *l {
                return Err(Error::invalid(format!("labels of patch {} do not match the world", p.id)));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> CorpusManifest {
        let label_schema = Variable::ALL
            .iter()
            .map(|v| LabelColumn {
                name: v.name().into(),
                unit: v.unit().into(),
                kind: if v.is_categorical() { "categorical" } else { "continuous" }.into(),
            })
            .collect();
        CorpusManifest {
            seed: self.seed,
            world: self.world.clone(),
            config: self.config.clone(),
            channels: Modality::ALL.iter().map(|m| (m.name().to_string(), m.channels())).collect(),
            label_schema,
            filtering: "none (no synthetic analogue of water/cloud exclusion)".into(),
            field_relations: FIELD_RELATIONS.iter().map(|r| r.to_string()).collect(),
            class_rules: CLASS_RULES.iter().map(|r| r.to_string()).collect(),
            patches: self.patches.clone(),
        }
    }

    /// Writes `manifest.json`, `labels.csv` and one packed tensor per modality.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = dir.join("manifest.json");
        fs::write(&manifest, serde_json::to_vec_pretty(&self.manifest())?)
            .map_err(|e| Error::io(&manifest, e))?;
        let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
        for (p, l) in self.patches.iter().zip(&self.labels) {
            w.serialize(LabelRow {
                patch_id: p.id,
                row: p.location.0,
                col: p.location.1,
                soil_moisture: l.soil_moisture,
                precipitation: l.precipitation,
                temperature: l.temperature,
                elevation: l.elevation,
                aridity: l.aridity,
                land_cover: l.land_cover,
                climate: l.climate,
            })?;
        }
        w.flush().map_err(|e| Error::io(dir.join("labels.csv"), e))?;
        for (m, t) in &self.images {
            io::write_tensor(&dir.join(m.name()), t)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: CorpusManifest = serde_json::from_slice(
            &fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
        )?;
        let mut rdr = csv::Reader::from_path(dir.join("labels.csv"))?;
        let mut labels = Vec::new();
        for row in rdr.deserialize() {
            let r: LabelRow = row?;
            labels.push(LabelRecord {
                soil_moisture: r.soil_moisture,
                precipitation: r.precipitation,
                temperature: r.temperature,
                elevation: r.elevation,
                aridity: r.aridity,
                land_cover: r.land_cover,
                climate: r.climate,
            });
        }
        if labels.len() != manifest.patches.len() {
            return Err(Error::Parse {
                what: "labels.csv",
                detail: format!("{} rows for {} patches", labels.len(), manifest.patches.len()),
            });
        }
        let mut images = BTreeMap::new();
        for m in Modality::ALL {
            let t = io::read_tensor(&dir.join(m.name()))?;
            let ps = manifest.config.patch_px;
            if t.shape() != [manifest.patches.len(), m.channels(), ps, ps] {
                return Err(Error::Shape {
                    context: "corpus modality tensor",
                    expected: vec![manifest.patches.len(), m.channels(), ps, ps],
                    actual: t.shape().to_vec(),
                });
            }
            images.insert(m, t);
        }
        Ok(Self {
            seed: manifest.seed,
            world: manifest.world,
            config: manifest.config,
            patches: manifest.patches,
            labels,
            images,
        })
    }

    /// Corpus restricted to the given patch indices (ids are renumbered).
    pub fn subset(&self, idx: &[usize]) -> PatchCorpus {
        let images = self
            .images
            .iter()
            .map(|(m, t)| (*m, t.select_rows(idx)))
            .collect();
        PatchCorpus {
            seed: self.seed,
            world: self.world.clone(),
            config: CorpusConfig {
                n_patches: idx.len(),
                ..self.config.clone()
            },
            patches: idx
                .iter()
                .enumerate()
                .map(|(new_id, &i)| PatchInfo {
                    id: new_id,
                    ..self.patches[i].clone()
                })
                .collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            images,
        }
    }
}
