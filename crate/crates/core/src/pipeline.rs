//! Declarative pipeline configuration and the on-disk dataset layout.
//!
//! ```text
//! <dataset>/manifest.json
//! <dataset>/noise_pdf.json
//! <dataset>/scenes/scene_00000/{clean,noisy,mask}.sft (+ .json sidecars)
//! <dataset>/scenes/scene_00000/scene.json
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{clean_target, sample_scene, simulate, Scene, SceneConfig, SimConfig, MAX_SOURCES};
use crate::error::{Error, Result};
use crate::field::{SilhouetteMask, SpectralImage};
use crate::metrics::SamplePair;
use crate::model::TrainConfig;
use crate::noise::{add_noise, realized_snr_db, EmpiricalPdf, NoiseLevels, PdfSource};
use crate::rng::Rng;
use crate::tensor::{read_tensor, write_tensor};

pub const DATASET_FORMAT: &str = "sonoseg-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-sample sound-region SNR is drawn from `U[lo, hi]`.
    pub snr_sound_db: [f64; 2],
    pub snr_sil_db: [f64; 2],
    pub pdf: PdfSource,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            snr_sound_db: [-20.0, 20.0],
            snr_sil_db: [-20.0, 20.0],
            pdf: PdfSource::Builtin,
        }
    }
}

impl NoiseConfig {
    pub fn sample_levels(&self, rng: &mut Rng) -> NoiseLevels {
        NoiseLevels {
            snr_sound_db: rng.uniform_in(self.snr_sound_db[0], self.snr_sound_db[1]),
            snr_sil_db: rng.uniform_in(self.snr_sil_db[0], self.snr_sil_db[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    /// Train / validation / test fractions.
    pub splits: [f64; 3],
    /// Store spectral images as f32.
    pub f32_storage: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_scenes: 50,
            splits: [0.8, 0.1, 0.1],
            f32_storage: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dataset_dir: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            seed,
            sim: SimConfig::default(),
            scene: SceneConfig::default(),
            noise: NoiseConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.dataset.splits;
        if s.iter().any(|f| !(*f >= 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("splits {s:?} must be >= 0 and sum to 1")));
        }
        let f = self.scene.freq_range_hz;
        if !(f[0] > 0.0 && f[0] <= f[1]) {
            return Err(Error::Config(format!("bad frequency range {f:?}")));
        }
        for r in [self.noise.snr_sound_db, self.noise.snr_sil_db] {
            if !(r[0] <= r[1]) {
                return Err(Error::Config(format!("bad SNR range {r:?}")));
            }
        }
        self.train.validate()
    }

    pub fn rng(&self) -> Rng {
        Rng::new(self.seed)
    }
}

/// Source count of scene `index`: strata cycle through 1..=5.
pub fn source_count(index: usize) -> usize {
    index % MAX_SOURCES + 1
}

/// Train / validation / test sizes; rounding remainders go to the test split.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub source_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub scenes: Vec<SceneEntry>,
    pub splits: Splits,
}

/// Provenance written next to every scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub index: usize,
    pub scene: Scene,
    pub noise: NoiseLevels,
    pub realized_snr_sound_db: Option<f64>,
    pub realized_snr_sil_db: Option<f64>,
    pub freq_hz: f64,
    pub bin_index: usize,
    pub frames: usize,
    pub silhouette_area_frac: f64,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Clean target, mask and noisy input for one scene.
pub struct GeneratedScene {
    pub record: SceneRecord,
    pub clean: SpectralImage,
    pub noisy: SpectralImage,
    pub mask: SilhouetteMask,
}

/// Simulates scene `index` of the configured dataset.
pub fn generate_scene(cfg: &PipelineConfig, pdf: &EmpiricalPdf, index: usize) -> Result<GeneratedScene> {
    let rng = cfg.rng().split_index("scene", index as u64);
    let scene = sample_scene(&rng, &cfg.scene, &cfg.sim, source_count(index))?;
    let video = simulate(&scene, &cfg.sim)?;
    let mask = scene.mask(&cfg.sim);
    let clean = clean_target(&video, &mask, scene.freq_hz)?;
    let levels = cfg.noise.sample_levels(&mut rng.split("snr"));
    let noisy = add_noise(&clean, &mask, levels, pdf, &rng.split("noise"))?;
    let record = SceneRecord {
        id: scene_id(index),
        index,
        noise: levels,
        realized_snr_sound_db: realized_snr_db(&clean, &noisy, &mask, false),
        realized_snr_sil_db: realized_snr_db(&clean, &noisy, &mask, true),
        freq_hz: clean.freq_hz,
        bin_index: clean.bin_index,
        frames: video.frames(),
        silhouette_area_frac: mask.area_fraction(),
        scene: Scene { mask: None, ..scene },
    };
    Ok(GeneratedScene {
        record,
        clean,
        noisy,
        mask,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_scene(dir: &Path, g: &GeneratedScene, f32_storage: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t, m) = g.clean.to_tensor(f32_storage);
    write_tensor(dir.join("clean.sft"), &t, &m)?;
    let (t, m) = g.noisy.to_tensor(f32_storage);
    write_tensor(dir.join("noisy.sft"), &t, &m)?;
    let (t, m) = g.mask.to_tensor();
    write_tensor(dir.join("mask.sft"), &t, &m)?;
    // written last: its presence marks the scene complete
    write_json(&dir.join("scene.json"), &g.record)
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Generates the dataset into `out`. Scenes already complete on disk are
/// kept, so an interrupted run can be resumed; the manifest is written last.
/// Output bytes do not depend on `workers`.
pub fn make_dataset(cfg: &PipelineConfig, out: &Path, workers: Option<usize>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let n = cfg.dataset.n_scenes;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let pdf = cfg.noise.pdf.load()?;
    let scenes_dir = out.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;
    write_json(&out.join("noise_pdf.json"), &pdf)?;

    thread_pool(workers)?.install(|| {
        (0..n).into_par_iter().try_for_each(|i| {
            let dir = scenes_dir.join(scene_id(i));
            if dir.join("scene.json").exists() {
                return Ok(());
            }
            let g = generate_scene(cfg, &pdf, i)?;
            write_scene(&dir, &g, cfg.dataset.f32_storage)
        })
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    cfg.rng().split("splits").shuffle(&mut order);
    let [a, b, _] = split_sizes(n, cfg.dataset.splits);
    let ids = |r: &[usize]| {
        let mut v: Vec<usize> = r.to_vec();
        v.sort_unstable();
        v.into_iter().map(scene_id).collect::<Vec<_>>()
    };
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        scenes: (0..n)
            .map(|i| SceneEntry {
                id: scene_id(i),
                source_count: source_count(i),
            })
            .collect(),
        splits: Splits {
            train: ids(&order[..a]),
            val: ids(&order[a..a + b]),
            test: ids(&order[a + b..]),
        },
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dataset: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dataset.join("manifest.json"))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Metadata(format!("unknown dataset format {:?}", m.format)));
    }
    Ok(m)
}

pub fn load_scene(dataset: &Path, id: &str) -> Result<SamplePair> {
    let dir = dataset.join("scenes").join(id);
    let (t, m) = read_tensor(dir.join("clean.sft"))?;
    let clean = SpectralImage::from_tensor(&t, &m)?;
    let (t, m) = read_tensor(dir.join("noisy.sft"))?;
    let noisy = SpectralImage::from_tensor(&t, &m)?;
    let (t, _) = read_tensor(dir.join("mask.sft"))?;
    let mask = SilhouetteMask::from_tensor(&t)?;
    Ok(SamplePair {
        noisy,
        clean,
        mask,
        id: id.to_string(),
    })
}

pub fn read_scene_record(dataset: &Path, id: &str) -> Result<SceneRecord> {
    read_json(&dataset.join("scenes").join(id).join("scene.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

pub fn split_ids(manifest: &DatasetManifest, split: Split) -> Vec<String> {
    match split {
        Split::Train => manifest.splits.train.clone(),
        Split::Val => manifest.splits.val.clone(),
        Split::Test => manifest.splits.test.clone(),
        Split::All => manifest.scenes.iter().map(|s| s.id.clone()).collect(),
    }
}

pub fn load_split(dataset: &Path, split: Split) -> Result<Vec<SamplePair>> {
    let manifest = read_manifest(dataset)?;
    split_ids(&manifest, split)
        .iter()
        .map(|id| load_scene(dataset, id))
        .collect()
}
