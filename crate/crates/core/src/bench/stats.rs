use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use super::BenchError;
use crate::measure::Measurement;

/// Summary of one (scenario, profile) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub profile: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub stdev_ms: f64,
    pub coefficient_of_variation: f64,
    pub mean_handshake_ms: f64,
}

/// Linear interpolation between closest ranks on sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize_group(scenario: &str, profile: &str, rows: &[&Measurement]) -> SummaryRow {
    let n = rows.len();
    let mut rtts: Vec<f64> = rows.iter().map(|m| m.rtt_ms).collect();
    rtts.sort_by(f64::total_cmp);
    let mean = rtts.iter().sum::<f64>() / n as f64;
    let stdev = if n > 1 {
        (rtts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        scenario: scenario.to_string(),
        profile: profile.to_string(),
        samples: n,
        mean_ms: mean,
        p50_ms: percentile(&rtts, 0.5),
        p95_ms: percentile(&rtts, 0.95),
        stdev_ms: stdev,
        coefficient_of_variation: if mean > 0.0 { stdev / mean } else { 0.0 },
        mean_handshake_ms: rows.iter().map(|m| m.handshake_ms).sum::<f64>() / n as f64,
    }
}

fn groups(measurements: &[Measurement]) -> BTreeMap<(&str, &str), Vec<&Measurement>> {
    let mut out: BTreeMap<(&str, &str), Vec<&Measurement>> = BTreeMap::new();
    for m in measurements {
        out.entry((m.scenario.as_str(), m.profile.as_str())).or_default().push(m);
    }
    out
}

/// One row per (scenario, profile), sorted by scenario then profile.
pub fn summarize(measurements: &[Measurement]) -> Vec<SummaryRow> {
    groups(measurements)
        .into_iter()
        .map(|((s, p), rows)| summarize_group(s, p, &rows))
        .collect()
}

pub fn write_measurements<W: Write>(out: W, measurements: &[Measurement]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for m in measurements {
        w.serialize(m).map_err(|e| BenchError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| BenchError::Io(e.to_string()))
}

/// Parses measurement CSV. Errors name the offending line.
pub fn read_measurements<R: Read>(input: R) -> Result<Vec<Measurement>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<Measurement>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let m = row.map_err(|e| {
            let line = e.position().map_or(line as u64, |p| p.line());
            BenchError::Io(format!("line {line}: {e}"))
        })?;
        if !(m.rtt_ms.is_finite() && m.rtt_ms > 0.0) {
            return Err(BenchError::Io(format!("line {line}: rtt_ms must be positive")));
        }
        out.push(m);
    }
    Ok(out)
}

/// Fixed-width text table of summary rows.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<22} {:<10} {:>7} {:>12} {:>12} {:>12} {:>10} {:>7} {:>12}\n",
        "scenario", "profile", "samples", "mean_ms", "p50_ms", "p95_ms", "stdev_ms", "cv", "setup_ms"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<22} {:<10} {:>7} {:>12.3} {:>12.3} {:>12.3} {:>10.3} {:>7.4} {:>12.3}\n",
            r.scenario,
            r.profile,
            r.samples,
            r.mean_ms,
            r.p50_ms,
            r.p95_ms,
            r.stdev_ms,
            r.coefficient_of_variation,
            r.mean_handshake_ms
        ));
    }
    s
}

/// gnuplot data: one indexed block per (scenario, profile) holding
/// `sample rtt_ms`, blocks separated by two blank lines.
pub fn write_gnuplot<W: Write>(mut out: W, measurements: &[Measurement]) -> Result<(), BenchError> {
    let io = |e: std::io::Error| BenchError::Io(e.to_string());
    for (i, ((scenario, profile), rows)) in groups(measurements).into_iter().enumerate() {
        if i > 0 {
            writeln!(out, "\n").map_err(io)?;
        }
        writeln!(out, "# {scenario} {profile}").map_err(io)?;
        for m in rows {
            writeln!(out, "{} {:.6}", m.sample_index, m.rtt_ms).map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::TransportKind;

    fn m(scenario: &str, profile: &str, i: u32, rtt: f64) -> Measurement {
        Measurement {
            scenario: scenario.into(),
            profile: profile.into(),
            transport: TransportKind::Ideal,
            sample_index: i,
            request_bytes: 1024,
            response_bytes: 1024,
            handshake_ms: 0.0,
            rtt_ms: rtt,
        }
    }

    #[test]
    fn single_row_has_zero_spread() {
        let rows = summarize(&[m("stability", "5G", 0, 34.5)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_ms, 34.5);
        assert_eq!(rows[0].p50_ms, 34.5);
        assert_eq!(rows[0].stdev_ms, 0.0);
    }

    #[test]
    fn percentiles_interpolate() {
        let data: Vec<_> = (1..=5).map(|i| m("s", "p", i, f64::from(i))).collect();
        let r = &summarize(&data)[0];
        assert_eq!(r.p50_ms, 3.0);
        assert!((r.p95_ms - 4.8).abs() < 1e-12);
        // sample stdev of 1..5 is sqrt(2.5)
        assert!((r.stdev_ms - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_preserves_summaries() {
        let data = vec![m("b", "EVolve10", 0, 5.0), m("a", "5G", 0, 35.0), m("a", "5G", 1, 36.0)];
        let mut buf = Vec::new();
        write_measurements(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,profile,transport,sample,request_bytes,response_bytes,handshake_ms,rtt_ms\n"));
        let back = read_measurements(buf.as_slice()).unwrap();
        assert_eq!(back, data);
        assert_eq!(summarize(&back), summarize(&data));
        assert_eq!(summarize(&data)[0].scenario, "a");
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "scenario,profile,transport,sample,request_bytes,response_bytes,handshake_ms,rtt_ms\n\
                    a,5G,ideal,0,1,1,0,3.0\n\
                    a,5G,ideal,x,1,1,0,3.0\n";
        let err = read_measurements(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn empty_input_gives_empty_report() {
        let header = "scenario,profile,transport,sample,request_bytes,response_bytes,handshake_ms,rtt_ms\n";
        assert!(summarize(&read_measurements(header.as_bytes()).unwrap()).is_empty());
        assert!(summarize(&read_measurements("".as_bytes()).unwrap()).is_empty());
    }
}
