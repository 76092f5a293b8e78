//! Paired narrow-/wide-band RF simulation.
//!
//! A single broadband probe response is driven by two Gaussian excitations,
//! so each low/high pair shares its reflectivity and probe and differs only
//! in the excitation spectrum.

mod dataset;
mod phantom;
mod pulse;
mod simulate;

pub use dataset::{
    decode_rfpx, encode_rfpx, generate_dataset, manifest_path, read_dataset, read_manifest, write_dataset,
    Manifest, PairedDataset, PhantomGroup, PhantomRecord, PulseReport, PulseSummary, RfPair, Split, RFPX_MAGIC,
    RFPX_VERSION,
};
pub use phantom::{generate_phantom, rayleigh, CystRegion, PhantomGeometry, PhantomKind, PhantomSpec, Scatterer};
pub use pulse::{synth_excitation, synth_probe_impulse, ExcitationSpec, ProbeSpec, Pulse, BANDWIDTH_TOLERANCE};
pub use simulate::{
    reflectivity, render_line, simulate_pairs, simulate_rf, Band, LineMeta, PulseEchoModel, RfLine, ScanConfig,
    SOUND_SPEED,
};
