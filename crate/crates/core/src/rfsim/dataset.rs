//! Paired low/high-band datasets and the RFPX container.
//!
//! Layout (little-endian): `b"RFPX"`, `u16` version (1), `u32` pair count,
//! `u32` line length, `f32` fs, `f32` fc, then per pair the low-band samples
//! followed by the high-band samples, all `f32`. A JSON manifest with the
//! same stem and a `.json` extension carries phantom metadata and splits.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom, CystRegion, PhantomGeometry, PhantomKind};
use super::pulse::Pulse;
use super::simulate::{simulate_pairs, Band, LineMeta, PulseEchoModel, RfLine, ScanConfig};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file, Reader};

pub const RFPX_MAGIC: &[u8; 4] = b"RFPX";
pub const RFPX_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub id: u32,
    pub kind: PhantomKind,
    pub seed: u64,
    pub n_scatterers: usize,
    pub split: Split,
    /// Index of this phantom's first pair in the dataset.
    pub first_pair: usize,
    pub n_lines: usize,
    pub cysts: Vec<CystRegion>,
    /// Point-target depths in metres (empty for speckle phantoms).
    pub target_depths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseReport {
    pub shape_param: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub fractional_bandwidth: f64,
}

impl From<&Pulse> for PulseReport {
    fn from(p: &Pulse) -> Self {
        Self {
            shape_param: p.shape_param,
            f_low: p.bandwidth.f_low,
            f_high: p.bandwidth.f_high,
            fractional_bandwidth: p.bandwidth.fractional,
        }
    }
}

/// Sidecar JSON for an RFPX file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub n_pairs: usize,
    pub line_len: usize,
    pub fs: f64,
    pub fc: f64,
    pub phantoms: Vec<PhantomRecord>,
    #[serde(default)]
    pub pulses: Option<PulseSummary>,
    /// The run configuration that produced the file.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSummary {
    pub probe: PulseReport,
    pub narrow: PulseReport,
    pub wide: PulseReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfPair {
    pub low: RfLine,
    pub high: RfLine,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub fs: f64,
    pub fc: f64,
    pub line_len: usize,
    pub pairs: Vec<RfPair>,
    pub phantoms: Vec<PhantomRecord>,
    pub pulses: Option<PulseSummary>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.pairs[i].split == split).collect()
    }

    pub fn phantom_pairs(&self, record: &PhantomRecord) -> &[RfPair] {
        &self.pairs[record.first_pair..record.first_pair + record.n_lines]
    }

    pub fn manifest(&self, config: Option<serde_json::Value>) -> Manifest {
        Manifest {
            format_version: RFPX_VERSION,
            n_pairs: self.pairs.len(),
            line_len: self.line_len,
            fs: self.fs,
            fc: self.fc,
            phantoms: self.phantoms.clone(),
            pulses: self.pulses.clone(),
            config,
        }
    }

    pub fn check_consistent(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.low.len() != self.line_len || p.high.len() != self.line_len {
                return Err(Error::Data(format!("pair {i} does not have {} samples", self.line_len)));
            }
            if p.low.fs != p.high.fs {
                return Err(Error::Data(format!("pair {i} mixes sampling rates")));
            }
        }
        for r in &self.phantoms {
            if r.first_pair + r.n_lines > self.pairs.len() {
                return Err(Error::Data(format!("phantom {} runs past the last pair", r.id)));
            }
        }
        Ok(())
    }
}

/// One batch of identically configured phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomGroup {
    pub kind: PhantomKind,
    pub count: usize,
    pub n_scatterers: usize,
    pub split: Split,
}

/// Simulates every group in order. Phantom seeds are drawn from a stream
/// seeded by `seed`, so the dataset is a pure function of its inputs.
pub fn generate_dataset(
    model: &PulseEchoModel,
    scan: &ScanConfig,
    geometry: &PhantomGeometry,
    groups: &[PhantomGroup],
    seed: u64,
) -> Result<PairedDataset> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut phantoms = Vec::new();
    let mut id = 0u32;
    for group in groups {
        for _ in 0..group.count {
            let phantom_seed: u64 = seeds.gen();
            let phantom = generate_phantom(group.kind, group.n_scatterers, phantom_seed, geometry)?;
            let first_pair = pairs.len();
            for (low, high) in simulate_pairs(&phantom, model, scan, id)? {
                pairs.push(RfPair {
                    low,
                    high,
                    split: group.split,
                });
            }
            phantoms.push(PhantomRecord {
                id,
                kind: group.kind,
                seed: phantom_seed,
                n_scatterers: group.n_scatterers,
                split: group.split,
                first_pair,
                n_lines: scan.n_lines,
                cysts: phantom.cyst_regions.clone(),
                target_depths: match group.kind {
                    PhantomKind::PointTargets => phantom.scatterers.iter().map(|s| s.depth).collect(),
                    PhantomKind::SpeckleCyst => Vec::new(),
                },
            });
            id += 1;
        }
    }
    Ok(PairedDataset {
        fs: model.probe.fs,
        fc: model.probe.fc,
        line_len: scan.line_len,
        pairs,
        phantoms,
        pulses: Some(PulseSummary {
            probe: (&model.probe_impulse).into(),
            narrow: (&model.narrow_pulse).into(),
            wide: (&model.wide_pulse).into(),
        }),
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_rfpx(ds: &PairedDataset) -> Result<Vec<u8>> {
    ds.check_consistent()?;
    let mut out = Vec::with_capacity(22 + ds.pairs.len() * ds.line_len * 8);
    out.extend_from_slice(RFPX_MAGIC);
    out.extend_from_slice(&RFPX_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.pairs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.line_len as u32).to_le_bytes());
    out.extend_from_slice(&(ds.fs as f32).to_le_bytes());
    out.extend_from_slice(&(ds.fc as f32).to_le_bytes());
    for p in &ds.pairs {
        for line in [&p.low, &p.high] {
            for &v in &line.samples {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_rfpx(bytes: &[u8], path: &Path) -> Result<PairedDataset> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != RFPX_MAGIC {
        return Err(Error::format(path, "missing RFPX magic"));
    }
    let version = r.u16()?;
    if version != RFPX_VERSION {
        return Err(Error::format(path, format!("unsupported RFPX version {version}")));
    }
    let n_pairs = r.u32()? as usize;
    let line_len = r.u32()? as usize;
    let fs = r.f32()? as f64;
    let fc = r.f32()? as f64;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut line = |band| -> Result<RfLine> {
            Ok(RfLine {
                samples: r.f32_vec(line_len)?.into_iter().map(f64::from).collect(),
                fs,
                meta: LineMeta {
                    phantom_id: 0,
                    line_index: i as u32,
                    band,
                },
            })
        };
        let low = line(Band::Low)?;
        let high = line(Band::High)?;
        pairs.push(RfPair {
            low,
            high,
            split: Split::Train,
        });
    }
    r.finish()?;
    Ok(PairedDataset {
        fs,
        fc,
        line_len,
        pairs,
        phantoms: Vec::new(),
        pulses: None,
    })
}

/// Writes the binary file and its manifest.
pub fn write_dataset(path: &Path, ds: &PairedDataset, config: Option<serde_json::Value>) -> Result<()> {
    atomic_write(path, &encode_rfpx(ds)?)?;
    let manifest = serde_json::to_vec_pretty(&ds.manifest(config))?;
    atomic_write(&manifest_path(path), &manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mpath = manifest_path(path);
    Ok(serde_json::from_slice(&read_file(&mpath)?)?)
}

/// Reads an RFPX file and, when present, applies its manifest.
pub fn read_dataset(path: &Path) -> Result<PairedDataset> {
    let mut ds = decode_rfpx(&read_file(path)?, path)?;
    if manifest_path(path).exists() {
        let manifest = read_manifest(path)?;
        if manifest.n_pairs != ds.pairs.len() || manifest.line_len != ds.line_len {
            return Err(Error::format(
                path,
                format!(
                    "manifest describes {} pairs of {} samples, binary holds {} of {}",
                    manifest.n_pairs,
                    manifest.line_len,
                    ds.pairs.len(),
                    ds.line_len
                ),
            ));
        }
        for rec in &manifest.phantoms {
            let end = rec.first_pair + rec.n_lines;
            if end > ds.pairs.len() {
                return Err(Error::format(path, format!("phantom {} exceeds pair count", rec.id)));
            }
            for (k, pair) in ds.pairs[rec.first_pair..end].iter_mut().enumerate() {
                pair.split = rec.split;
                for line in [&mut pair.low, &mut pair.high] {
                    line.meta.phantom_id = rec.id;
                    line.meta.line_index = k as u32;
                }
            }
        }
        ds.fs = manifest.fs;
        ds.fc = manifest.fc;
        for p in &mut ds.pairs {
            p.low.fs = manifest.fs;
            p.high.fs = manifest.fs;
        }
        ds.phantoms = manifest.phantoms;
        ds.pulses = manifest.pulses;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfsim::pulse::ProbeSpec;

    fn small() -> PairedDataset {
        let model = PulseEchoModel::standard(ProbeSpec::default()).unwrap();
        let scan = ScanConfig {
            n_lines: 3,
            line_len: 256,
            ..ScanConfig::default()
        };
        let geometry = PhantomGeometry::for_line(256, model.probe.fs, scan.sound_speed, scan.width());
        let groups = [
            PhantomGroup {
                kind: PhantomKind::SpeckleCyst,
                count: 2,
                n_scatterers: 50,
                split: Split::Train,
            },
            PhantomGroup {
                kind: PhantomKind::PointTargets,
                count: 1,
                n_scatterers: 2,
                split: Split::Test,
            },
        ];
        generate_dataset(&model, &scan, &geometry, &groups, 42).unwrap()
    }

    #[test]
    fn header_layout() {
        let ds = small();
        let bytes = encode_rfpx(&ds).unwrap();
        assert_eq!(&bytes[..4], b"RFPX");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 256);
        assert_eq!(f32::from_le_bytes(bytes[14..18].try_into().unwrap()), 20.832e6);
        assert_eq!(f32::from_le_bytes(bytes[18..22].try_into().unwrap()), 5.2e6);
        assert_eq!(bytes.len(), 22 + 9 * 2 * 256 * 4);
        // first low-band sample of the first pair
        let first = f32::from_le_bytes(bytes[22..26].try_into().unwrap());
        assert_eq!(first, ds.pairs[0].low.samples[0] as f32);
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.rfpx");
        let ds = small();
        write_dataset(&path, &ds, None).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.phantoms, ds.phantoms);
        assert_eq!(back.indices(Split::Test), vec![6, 7, 8]);
        assert_eq!(back.pairs[4].low.meta.phantom_id, 1);
        let again = dir.path().join("e.rfpx");
        write_dataset(&again, &back, None).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = encode_rfpx(&small()).unwrap();
        let b = encode_rfpx(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_files_rejected() {
        let path = Path::new("mem");
        let mut bytes = encode_rfpx(&small()).unwrap();
        assert!(decode_rfpx(&bytes[..100], path).is_err());
        bytes.push(0);
        assert!(decode_rfpx(&bytes, path).is_err());
        bytes[0] = b'X';
        assert!(decode_rfpx(&bytes, path).is_err());
    }

    #[test]
    fn manifest_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.rfpx");
        let ds = small();
        write_dataset(&path, &ds, None).unwrap();
        let mut m = read_manifest(&path).unwrap();
        m.n_pairs += 1;
        std::fs::write(manifest_path(&path), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
