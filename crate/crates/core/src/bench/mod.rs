//! Benchmark scenarios driven end to end over the emulated link, plus the
//! CSV and summary plumbing behind the `vasbench` tool.

mod stats;
mod testbed;

pub use stats::{
    format_table, read_measurements, summarize, write_gnuplot, write_measurements, SummaryRow,
};
pub use testbed::Testbed;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::link::{LinkProfile, TransportModel, DEFAULT_SAMPLES};
use crate::measure::Measurement;
use crate::payments::{AUTHORIZATION_LEN, RECEIPT_LEN};
use crate::protocol::{PADDED_DATA_LEN, PADDED_WIRE_BYTES, VAS_HEADER_LEN};
use crate::siem::{FlParameters, FL_BLOB_LEN};
use crate::vehicle::{SetupTimes, VasError, VehicleSession};
use crate::wire::service_ids;

/// Request size of the small padded messages.
pub const SMALL_BYTES: u64 = PADDED_WIRE_BYTES as u64;
/// Bulk size of update downloads and log uploads.
pub const BULK_BYTES: u64 = 100_000_000;
/// Default burst counts for the micropayment scenario.
pub const DEFAULT_BURSTS: [u32; 5] = [1, 10, 50, 100, 500];
/// One-shot payment amount used by the naive payment scenario.
const NAIVE_AMOUNT: u64 = 100;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] VasError),
    #[error("{0}")]
    Io(String),
}

impl From<crate::wire::WireError> for BenchError {
    fn from(e: crate::wire::WireError) -> Self {
        BenchError::Runtime(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Stability,
    Updates,
    SiemUpload,
    FlPull,
    NaivePayment,
    Micropayments,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Stability,
        ScenarioKind::Updates,
        ScenarioKind::SiemUpload,
        ScenarioKind::FlPull,
        ScenarioKind::NaivePayment,
        ScenarioKind::Micropayments,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Stability => "stability",
            ScenarioKind::Updates => "updates",
            ScenarioKind::SiemUpload => "siem_upload",
            ScenarioKind::FlPull => "fl_pull",
            ScenarioKind::NaivePayment => "naive_payment",
            ScenarioKind::Micropayments => "micropayments",
        }
    }

    /// Request and response payload sizes of one exchange.
    pub fn payload(&self) -> (u64, u64) {
        match self {
            ScenarioKind::Stability | ScenarioKind::NaivePayment | ScenarioKind::Micropayments => {
                (SMALL_BYTES, SMALL_BYTES)
            }
            ScenarioKind::Updates => (SMALL_BYTES, BULK_BYTES),
            ScenarioKind::SiemUpload => (BULK_BYTES, crate::protocol::MAX_ACK_FRAME as u64),
            ScenarioKind::FlPull => (SMALL_BYTES, FL_BLOB_LEN as u64),
        }
    }

    fn service(&self) -> u16 {
        match self {
            ScenarioKind::Stability => service_ids::CHARGING,
            ScenarioKind::Updates => service_ids::UPDATES,
            ScenarioKind::SiemUpload | ScenarioKind::FlPull => service_ids::SIEM,
            ScenarioKind::NaivePayment | ScenarioKind::Micropayments => service_ids::PAYMENTS,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BenchError::Usage(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub profile: LinkProfile,
    pub transport: TransportModel,
    pub samples: u32,
    pub seed: u64,
    /// Burst counts; only the micropayment scenario reads them.
    pub bursts: Vec<u32>,
    /// Re-run discovery and the handshake before every sample.
    pub reconnect: bool,
    /// Pad receipts and authorizations to 1 KB records. Off by default:
    /// bursts travel at their natural size.
    pub pad_bursts: bool,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, profile: LinkProfile, transport: TransportModel) -> Self {
        Self {
            kind,
            profile,
            transport,
            samples: DEFAULT_SAMPLES,
            seed: 42,
            bursts: DEFAULT_BURSTS.to_vec(),
            reconnect: false,
            pad_bursts: false,
        }
    }

    pub fn samples(mut self, samples: u32) -> Self {
        self.samples = samples;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn bursts(mut self, bursts: Vec<u32>) -> Self {
        self.bursts = bursts;
        self
    }

    pub fn reconnect(mut self, reconnect: bool) -> Self {
        self.reconnect = reconnect;
        self
    }

    pub fn pad_bursts(mut self, pad: bool) -> Self {
        self.pad_bursts = pad;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.samples == 0 {
            return Err(BenchError::Usage("samples must be >= 1".into()));
        }
        self.profile
            .validate()
            .map_err(|e| BenchError::Usage(e.to_string()))?;
        if self.kind == ScenarioKind::Micropayments && (self.bursts.is_empty() || self.bursts.contains(&0)) {
            return Err(BenchError::Usage("burst counts must be >= 1".into()));
        }
        Ok(())
    }
}

struct Runner {
    bed: Testbed,
    scenario: Scenario,
    session: Option<VehicleSession>,
    out: Vec<Measurement>,
}

impl Runner {
    fn session(&mut self) -> Result<(&mut VehicleSession, f64), BenchError> {
        let mut setup = 0.0;
        if self.session.is_none() || self.scenario.reconnect {
            // Drop the old session first so the charger sees it end.
            self.session = None;
            let padded = self.scenario.kind != ScenarioKind::Micropayments || self.scenario.pad_bursts;
            let (s, SetupTimes { total_ms, .. }) = self.bed.connect(&[self.scenario.kind.service()], padded)?;
            self.session = Some(s);
            setup = total_ms;
        }
        Ok((self.session.as_mut().expect("connected above"), setup))
    }

    fn record(&mut self, label: String, index: u32, req: u64, resp: u64, setup: f64, rtt: f64) {
        self.out.push(Measurement {
            scenario: label,
            profile: self.scenario.profile.name.clone(),
            transport: self.scenario.transport.kind,
            sample_index: index,
            request_bytes: req,
            response_bytes: resp,
            handshake_ms: setup,
            rtt_ms: rtt,
        });
    }

    fn sample(&mut self, index: u32) -> Result<(), BenchError> {
        let kind = self.scenario.kind;
        let (req, resp) = kind.payload();
        let (s, setup) = self.session()?;
        let t0 = s.now_ms();
        match kind {
            ScenarioKind::Stability => {
                s.echo(PADDED_DATA_LEN as u32)?;
            }
            ScenarioKind::Updates => {
                s.raw_download(resp)?;
            }
            ScenarioKind::SiemUpload => {
                s.upload_opaque(req)?;
            }
            ScenarioKind::FlPull => {
                s.pull_fl()?;
            }
            ScenarioKind::NaivePayment => {
                s.naive_payment(NAIVE_AMOUNT, NAIVE_AMOUNT)?;
            }
            ScenarioKind::Micropayments => unreachable!("handled per burst count"),
        }
        let rtt = s.now_ms() - t0;
        self.record(kind.as_str().to_string(), index, req, resp, setup, rtt);
        Ok(())
    }

    fn burst_sample(&mut self, bursts: u32, index: u32) -> Result<(), BenchError> {
        let tariff = self.bed.charger.config().tariff;
        let (s, setup) = self.session()?;
        s.start_micropayment(tariff.price_per_wh, tariff.burst_wh)
            .map_err(VasError::from)?;
        let elapsed = s.run_bursts(bursts)?;
        s.reconcile()?;
        let (auth, receipt) = burst_wire_bytes(self.scenario.pad_bursts);
        let n = u64::from(bursts);
        self.record(micropayment_label(bursts), index, n * auth, n * receipt, setup, elapsed);
        Ok(())
    }
}

/// Wire bytes of one authorization and one receipt, TLS record included.
pub fn burst_wire_bytes(padded: bool) -> (u64, u64) {
    if padded {
        (SMALL_BYTES, SMALL_BYTES)
    } else {
        let overhead = (crate::wire::TLS_RECORD_OVERHEAD as usize + crate::wire::HEADER_LEN + VAS_HEADER_LEN) as u64;
        (AUTHORIZATION_LEN as u64 + overhead, RECEIPT_LEN as u64 + overhead)
    }
}

/// Scenario label of one burst count in the micropayment family.
pub fn micropayment_label(bursts: u32) -> String {
    format!("micropayments:n={bursts}")
}

/// Runs one scenario over the full protocol path and returns one
/// measurement per sample (per burst count for micropayments).
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<Measurement>, BenchError> {
    scenario.validate()?;
    let bed = Testbed::new(scenario.profile.clone(), scenario.transport, scenario.seed)?;
    if scenario.kind == ScenarioKind::FlPull {
        bed.siem.publish_fl(FlParameters::random(1, scenario.seed));
        bed.charger
            .refresh_fl()
            .map_err(|e| BenchError::Runtime(e.into()))?;
    }
    let mut runner = Runner {
        bed,
        scenario: scenario.clone(),
        session: None,
        out: Vec::new(),
    };
    if scenario.kind == ScenarioKind::Micropayments {
        for &n in &scenario.bursts {
            for i in 0..scenario.samples {
                runner.burst_sample(n, i)?;
            }
        }
    } else {
        for i in 0..scenario.samples {
            runner.sample(i)?;
        }
    }
    Ok(runner.out)
}

/// Runs scenarios on separate threads, each with its own testbed and clock.
/// Results come back in input order.
pub fn run_parallel(scenarios: &[Scenario]) -> Vec<Result<Vec<Measurement>, BenchError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run_scenario(s)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(BenchError::Io("scenario thread panicked".into()))))
            .collect()
    })
}
