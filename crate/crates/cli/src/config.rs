//! Run configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use rfsr::dsp::StftConfig;
use rfsr::evaluation::EvalConfig;
use rfsr::model::ModelConfig;
use rfsr::rfsim::{
    ExcitationSpec, PhantomGeometry, PhantomGroup, PhantomKind, ProbeSpec, PulseEchoModel, ScanConfig, Split,
};
use rfsr::trainer::TrainConfig;
use rfsr::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub probe: ProbeSpec,
    pub excitations: Excitations,
    pub phantom: PhantomSection,
    pub stft: StftConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
    /// Drives phantom generation and model initialization.
    pub seed: u64,
}

/// Target -6 dB fractional bandwidths of the two excitations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Excitations {
    pub narrow_frac_bw: f64,
    pub wide_frac_bw: f64,
}

impl Default for Excitations {
    fn default() -> Self {
        Self {
            narrow_frac_bw: 0.6,
            wide_frac_bw: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub scan: ScanConfig,
    /// Defaults to the depth window that fits the scan's line length.
    pub geometry: Option<PhantomGeometry>,
    pub groups: Vec<PhantomGroup>,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let speckle = |count, split| PhantomGroup {
            kind: PhantomKind::SpeckleCyst,
            count,
            n_scatterers: 2000,
            split,
        };
        Self {
            scan: ScanConfig::default(),
            geometry: None,
            groups: vec![
                speckle(200, Split::Train),
                speckle(4, Split::Val),
                speckle(2, Split::Test),
                PhantomGroup {
                    kind: PhantomKind::PointTargets,
                    count: 1,
                    n_scatterers: 8,
                    split: Split::Test,
                },
            ],
        }
    }
}

/// Output file names, relative to the `--out` directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub prediction: PathBuf,
    pub train_log: PathBuf,
    pub weight_log: PathBuf,
    pub train_report: PathBuf,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub images: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "dataset.rfpx".into(),
            checkpoint: "model.rfck".into(),
            prediction: "prediction.rfpx".into(),
            train_log: "train_log.csv".into(),
            weight_log: "weights.csv".into(),
            train_report: "train_report.json".into(),
            report_json: "report.json".into(),
            report_csv: "report.csv".into(),
            images: "images".into(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--seed` replaces both the simulation/initialization seed and the
    /// shuffling seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.phantom.scan.validate()?;
        self.geometry().validate()?;
        if self.phantom.groups.iter().any(|g| g.count == 0 || g.n_scatterers == 0) {
            return Err(Error::Config("phantom groups need a nonzero count and scatterer number".into()));
        }
        let e = &self.excitations;
        if !(e.narrow_frac_bw > 0.0 && e.wide_frac_bw > 0.0) {
            return Err(Error::Config(format!("excitation bandwidths must be positive, got {e:?}")));
        }
        self.stft.validate()?;
        let (frames, bins) = self.stft.shape(self.phantom.scan.line_len)?;
        if (frames, bins) != (self.model.frames, self.model.bins) {
            return Err(Error::Config(format!(
                "model grid {}x{} does not match the {frames}x{bins} spectrogram of {}-sample lines",
                self.model.frames, self.model.bins, self.phantom.scan.line_len
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn geometry(&self) -> PhantomGeometry {
        let scan = &self.phantom.scan;
        self.phantom
            .geometry
            .unwrap_or_else(|| PhantomGeometry::for_line(scan.line_len, self.probe.fs, scan.sound_speed, scan.width()))
    }

    pub fn pulse_echo(&self) -> Result<PulseEchoModel> {
        let (fc, fs) = (self.probe.fc, self.probe.fs);
        let narrow = ExcitationSpec::for_bandwidth(fc, fs, self.excitations.narrow_frac_bw)?;
        let wide = ExcitationSpec::for_bandwidth(fc, fs, self.excitations.wide_frac_bw)?;
        PulseEchoModel::new(self.probe, narrow, wide)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
