//! On-disk layout of phantom and scan datasets.
//!
//! A phantom directory holds `phantoms.tsv` (`name, grid, occupancy,
//! pitch_mm`) and one grid and occupancy tensor per phantom. A dataset
//! directory holds `dataset.tsv` (`name, scan, sinogram, truth`), `splits.tsv`
//! (`fold, test, train…`) and per phantom `NAME.scan.tzt` with a config
//! sidecar, `NAME.sino.tzt` and `NAME.truth.xs.tzt`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use thzct::dlct::Sidecar;
use thzct::phantom::{standard_materials, Phantom};
use thzct::radon::{CrossSection, Sinogram};
use thzct::sim::{ScanConfig, ScanVolume};
use thzct::tensor::{read_tensor, write_tensor, Tensor};

use crate::exit::{MissingInput, Usage};
use crate::pipeline::{CvSplit, Sample};

pub const PHANTOM_MANIFEST: &str = "phantoms.tsv";
pub const DATASET_MANIFEST: &str = "dataset.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn tsv_rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.split('\t').collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomEntry {
    pub name: String,
    pub grid: PathBuf,
    pub occupancy: PathBuf,
    pub pitch_mm: f64,
}

pub fn write_phantoms(dir: &Path, phantoms: &[(Phantom, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = String::new();
    let mut written = Vec::new();
    for (p, name) in phantoms {
        let grid = format!("{name}.grid.tzt");
        let occ = format!("{name}.occ.tzt");
        write_tensor(&p.grid_tensor(), dir.join(&grid))?;
        write_tensor(&p.occupancy_tensor(), dir.join(&occ))?;
        manifest.push_str(&format!("{name}\t{grid}\t{occ}\t{}\n", p.pitch_mm()));
        written.push(dir.join(grid));
        written.push(dir.join(occ));
    }
    write_text(&dir.join(PHANTOM_MANIFEST), &manifest)?;
    written.push(dir.join(PHANTOM_MANIFEST));
    Ok(written)
}

pub fn read_phantom_manifest(dir: &Path) -> Result<Vec<PhantomEntry>> {
    let path = dir.join(PHANTOM_MANIFEST);
    let text = read_text(&path)?;
    tsv_rows(&text)
        .enumerate()
        .map(|(i, f)| {
            if f.len() != 4 {
                bail!("{} line {}: expected 4 fields", path.display(), i + 1);
            }
            Ok(PhantomEntry {
                name: f[0].to_string(),
                grid: dir.join(f[1]),
                occupancy: dir.join(f[2]),
                pitch_mm: f[3]
                    .parse()
                    .with_context(|| format!("{} line {}: pitch", path.display(), i + 1))?,
            })
        })
        .collect()
}

pub fn load_phantom(entry: &PhantomEntry) -> Result<Phantom> {
    let grid = read_tensor(&entry.grid)?;
    Ok(Phantom::from_grid_tensor(&grid, entry.pitch_mm, standard_materials())?)
}

fn sidecar_path(path: &Path) -> PathBuf {
    Sidecar::path_for(path)
}

pub fn write_scan(path: &Path, scan: &ScanVolume) -> Result<()> {
    write_tensor(&scan.data, path)?;
    let text: String = scan
        .config
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    write_text(&sidecar_path(path), &text)
}

pub fn read_scan(path: &Path) -> Result<ScanVolume> {
    let side = Sidecar::parse(&read_text(&sidecar_path(path))?)?;
    let cfg = ScanConfig::from_pairs(side.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(ScanVolume::new(read_tensor(path)?, cfg)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub scan: PathBuf,
    pub sinogram: PathBuf,
    pub truth: PathBuf,
}

pub fn sample_files(dir: &Path, name: &str) -> DatasetEntry {
    DatasetEntry {
        name: name.to_string(),
        scan: dir.join(format!("{name}.scan.tzt")),
        sinogram: dir.join(format!("{name}.sino.tzt")),
        truth: dir.join(format!("{name}.truth.xs.tzt")),
    }
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<DatasetEntry> {
    let e = sample_files(dir, &sample.name);
    write_scan(&e.scan, &sample.scan)?;
    write_tensor(&sample.sinogram.tensor(), &e.sinogram)?;
    write_tensor(&sample.truth.tensor(), &e.truth)?;
    Ok(e)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn write_dataset_manifest(dir: &Path, entries: &[DatasetEntry], splits: &[CvSplit]) -> Result<()> {
    let manifest: String = entries
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\t{}\n",
                e.name,
                file_name(&e.scan),
                file_name(&e.sinogram),
                file_name(&e.truth)
            )
        })
        .collect();
    write_text(&dir.join(DATASET_MANIFEST), &manifest)?;
    let splits: String = splits
        .iter()
        .map(|s| format!("{}\t{}\t{}\n", s.fold, s.test.join(","), s.train.join(",")))
        .collect();
    write_text(&dir.join(SPLITS_FILE), &splits)
}

/// A dataset directory written by `simulate`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub entries: Vec<DatasetEntry>,
    pub splits: Vec<CvSplit>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = read_text(&path)?;
        let entries = tsv_rows(&text)
            .enumerate()
            .map(|(i, f)| {
                if f.len() != 4 {
                    bail!("{} line {}: expected 4 fields", path.display(), i + 1);
                }
                Ok(DatasetEntry {
                    name: f[0].to_string(),
                    scan: dir.join(f[1]),
                    sinogram: dir.join(f[2]),
                    truth: dir.join(f[3]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(SPLITS_FILE);
        let text = read_text(&path)?;
        let split_names = |s: &str| -> Vec<String> {
            s.split(',').filter(|n| !n.is_empty()).map(str::to_string).collect()
        };
        let splits = tsv_rows(&text)
            .enumerate()
            .map(|(i, f)| {
                if f.len() != 3 {
                    bail!("{} line {}: expected 3 fields", path.display(), i + 1);
                }
                Ok(CvSplit {
                    fold: f[0]
                        .parse()
                        .with_context(|| format!("{} line {}: fold", path.display(), i + 1))?,
                    test: split_names(f[1]),
                    train: split_names(f[2]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
            splits,
        })
    }

    pub fn entry(&self, name: &str) -> Result<&DatasetEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| anyhow::Error::new(MissingInput(format!("phantom {name:?} is not in {}", self.dir.display()))))
    }

    pub fn split(&self, fold: usize) -> Result<&CvSplit> {
        self.splits.iter().find(|s| s.fold == fold).ok_or_else(|| {
            anyhow::Error::new(Usage(format!("fold {fold} out of range (0..{})", self.splits.len())))
        })
    }

    pub fn scan(&self, name: &str) -> Result<ScanVolume> {
        read_scan(&self.entry(name)?.scan)
    }

    pub fn sample(&self, name: &str) -> Result<Sample> {
        let e = self.entry(name)?;
        let scan = read_scan(&e.scan)?;
        let sinogram = Sinogram::from_tensor(
            &read_tensor(&e.sinogram)?,
            scan.config.angles_deg(),
            scan.config.pitch_mm,
        )?;
        let truth = CrossSection::from_tensor(&read_tensor(&e.truth)?, scan.config.pitch_mm)?;
        Ok(Sample {
            name: name.to_string(),
            scan,
            sinogram,
            truth,
        })
    }
}

/// Reads a 2-D tensor of reconstruction values.
pub fn read_cross_section(path: &Path) -> Result<CrossSection> {
    let t: Tensor = read_tensor(path)?;
    Ok(CrossSection::from_tensor(&t, 1.0)?)
}
