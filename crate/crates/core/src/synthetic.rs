//! Seeded synthetic fan-coil telemetry with injected fault regimes. The
//! generator knows which rows it shifted, so it doubles as ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::dataset::{Channel, ChannelKind, ChannelSchema, FaultFlag, FaultInterval, TimeSeriesFrame};
use crate::error::Result;
use crate::pipeline::{EpsChoice, EpsKeyword, KmeansConfig, OpticsConfig, RunConfig, ThresholdChoice, ThresholdKeyword};
use crate::preprocessing::{ModeConfig, OperatingMode};
use crate::time::{self, Timestamp};

const NAMES: [(&str, ChannelKind); 12] = [
    ("T", ChannelKind::Temperature),
    ("Q", ChannelKind::AirQuality),
    ("INSLAB-T", ChannelKind::Temperature),
    ("DA-T", ChannelKind::Temperature),
    ("CLG-O", ChannelKind::ValveCommand),
    ("HTG-O", ChannelKind::ValveCommand),
    ("ST", ChannelKind::Temperature),
    ("RT", ChannelKind::Temperature),
    ("VR", ChannelKind::Flow),
    ("EA-T", ChannelKind::Temperature),
    ("EA-F", ChannelKind::Flow),
    ("DA-F", ChannelKind::Flow),
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub channels: usize,
    /// Share of rows in the faulty regime.
    pub fault_fraction: f64,
    /// Number of contiguous fault episodes.
    pub fault_episodes: usize,
    /// How many channels the fault shifts.
    pub shifted_channels: usize,
    /// Shift in units of the normal-regime channel standard deviation.
    pub shift_sigmas: f64,
    pub cadence_s: u32,
    /// First timestamp (local seconds).
    pub start: Timestamp,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 2000,
            channels: 10,
            fault_fraction: 0.05,
            fault_episodes: 2,
            shifted_channels: 3,
            shift_sigmas: 12.0,
            cadence_s: 60,
            // 2018-06-04T06:00:00, a Monday
            start: 1_528_092_000,
            seed: 42,
        }
    }
}

pub struct SyntheticData {
    pub frame: TimeSeriesFrame,
    pub schema: Vec<ChannelSchema>,
    pub fault_intervals: Vec<FaultInterval>,
}

/// Normal operation: channels are noisy mixtures of three latent drivers
/// (load, outdoor temperature, supply temperature). Faulty rows add a
/// constant offset to the first `shifted_channels` channels.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let n = spec.channels.min(NAMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    // fixed mixing weights, one row per channel
    let mixing: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            let a = (j as f64 * 1.7).sin();
            let b = (j as f64 * 0.9 + 1.0).cos();
            let c = ((j * j) as f64 * 0.37).sin() * 0.5;
            [a, b, c]
        })
        .collect();
    let noise = 0.3;
    let std: Vec<f64> = mixing
        .iter()
        .map(|w| (w.iter().map(|x| x * x).sum::<f64>() + noise * noise).sqrt())
        .collect();

    let n_fault = (spec.rows as f64 * spec.fault_fraction).round() as usize;
    let episodes = spec.fault_episodes.max(1);
    let per_episode = n_fault / episodes;
    let mut is_fault = vec![false; spec.rows];
    for e in 0..episodes {
        let len = if e + 1 == episodes { n_fault - per_episode * e } else { per_episode };
        let start = (spec.rows * (2 * e + 1)) / (2 * episodes + 1);
        for f in is_fault.iter_mut().skip(start).take(len) {
            *f = true;
        }
    }

    let timestamps: Vec<Timestamp> = (0..spec.rows as i64)
        .map(|i| spec.start + i * i64::from(spec.cadence_s))
        .collect();
    let mut values = vec![Vec::with_capacity(spec.rows); n];
    for &fault in &is_fault {
        let z: [f64; 3] = [unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)];
        for j in 0..n {
            let mut v = mixing[j].iter().zip(&z).map(|(w, z)| w * z).sum::<f64>()
                + noise * unit.sample(&mut rng);
            if fault && j < spec.shifted_channels {
                v += spec.shift_sigmas * std[j];
            }
            values[j].push(Some(v));
        }
    }

    let schema: Vec<ChannelSchema> = NAMES[..n]
        .iter()
        .map(|(name, kind)| ChannelSchema::new(*name, *kind))
        .collect();
    let channels = schema
        .iter()
        .zip(values)
        .map(|(s, values)| Channel {
            name: s.designation.clone(),
            values,
        })
        .collect();
    let truth: Vec<FaultFlag> = is_fault.iter().map(|&f| FaultFlag::from_bool(f)).collect();

    let mut fault_intervals = Vec::new();
    let mut i = 0;
    while i < spec.rows {
        if is_fault[i] {
            let s = i;
            while i + 1 < spec.rows && is_fault[i + 1] {
                i += 1;
            }
            fault_intervals.push(FaultInterval {
                start: timestamps[s],
                end: timestamps[i],
                label: "injected".into(),
            });
        }
        i += 1;
    }

    let frame = TimeSeriesFrame::new(timestamps, spec.cadence_s, channels, Some(truth))?;
    Ok(SyntheticData {
        frame,
        schema,
        fault_intervals,
    })
}

impl SyntheticData {
    /// Run configuration for this frame stored at `dataset`: every month
    /// forced to cooling, no operational or IQR filtering, all channels,
    /// default OPTICS settings with suggested eps and the largest-gap cut.
    /// Needs at least six channels so both valve signals exist.
    pub fn run_config(&self, dataset: impl Into<PathBuf>) -> RunConfig {
        let months: BTreeMap<_, _> = self
            .frame
            .timestamps()
            .iter()
            .map(|&t| (time::year_month(t), OperatingMode::Cooling))
            .collect();
        let mut mode = ModeConfig::new("CLG-O", "HTG-O");
        mode.month_overrides = months;
        RunConfig {
            dataset: dataset.into(),
            schema: self.schema.clone(),
            timestamp_format: None,
            mode,
            analysis_channels: self.schema.iter().map(|s| s.designation.clone()).collect(),
            season: OperatingMode::Cooling,
            months: None,
            operational_filter: false,
            iqr_filter: false,
            use_pca: false,
            pc_selection: crate::pca::PcSelection::ScreeGap,
            optics: OpticsConfig {
                eps: EpsChoice::Keyword(EpsKeyword::Suggest),
                ..OpticsConfig::default()
            },
            threshold: ThresholdChoice::Keyword(ThresholdKeyword::LargestGap),
            kmeans: KmeansConfig::default(),
            fault_intervals: None,
        }
    }
}
