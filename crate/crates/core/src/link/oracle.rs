//! Closed-form transfer model used as the reference for every emulated timing.

use super::{LinkError, LinkProfile, TransportKind, TransportModel};

/// Delivered throughput in Mbps.
///
/// Lossy links under the throttled model are capped at `mss·8 / (rtt·√p)`.
pub fn effective_rate_mbps(profile: &LinkProfile, model: &TransportModel) -> f64 {
    match model.kind {
        TransportKind::Ideal => profile.rate_mbps,
        TransportKind::LossThrottled => {
            let p = profile.plr_percent / 100.0;
            if p <= 0.0 {
                return profile.rate_mbps;
            }
            let rtt_s = profile.base_rtt_ms() / 1000.0;
            if rtt_s <= 0.0 {
                return profile.rate_mbps;
            }
            let cap = f64::from(model.mss_bytes) * 8.0 / (rtt_s * p.sqrt()) / 1e6;
            profile.rate_mbps.min(cap)
        }
    }
}

/// Serialization time of `bytes` at the effective rate, in milliseconds.
pub fn serialization_ms(profile: &LinkProfile, model: &TransportModel, bytes: u64) -> f64 {
    bytes as f64 * 8.0 / (effective_rate_mbps(profile, model) * 1e6) * 1000.0
}

/// Expected duration of one request/response exchange, jitter excluded.
pub fn model_transfer_time_ms(
    profile: &LinkProfile,
    model: &TransportModel,
    request_bytes: u64,
    response_bytes: u64,
) -> Result<f64, LinkError> {
    if request_bytes == 0 {
        return Err(LinkError::EmptyRequest);
    }
    Ok(profile.base_rtt_ms() + serialization_ms(profile, model, request_bytes + response_bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const KB: u64 = 1024;
    const MB100: u64 = 100_000_000;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ideal_rate_is_nominal() {
        for p in LinkProfile::builtins() {
            assert_eq!(effective_rate_mbps(&p, &TransportModel::ideal()), p.rate_mbps);
        }
    }

    #[test]
    fn zero_loss_profiles_are_not_throttled() {
        for p in LinkProfile::builtins().iter().filter(|p| !p.is_lossy()) {
            assert_eq!(
                effective_rate_mbps(p, &TransportModel::ideal()),
                effective_rate_mbps(p, &TransportModel::loss_throttled())
            );
        }
    }

    #[test]
    fn throttled_cellular_rates() {
        // Hand evaluation: 11680 / (0.034 * sqrt(0.002)) = 7_681_5xx bps,
        // 11680 / (0.072 * sqrt(0.002)) = 3_627_4xx bps.
        let r5 = effective_rate_mbps(&LinkProfile::nr_5g(), &TransportModel::loss_throttled());
        let r4 = effective_rate_mbps(&LinkProfile::lte_4g(), &TransportModel::loss_throttled());
        assert!(close(r5, 7.6815, 1e-3), "{r5}");
        assert!(close(r4, 3.6274, 1e-3), "{r4}");
    }

    #[test]
    fn transfer_time_examples() {
        let ideal = TransportModel::ideal();
        // 4 + 100_001_024 * 8 / 1e7 s
        let t = model_transfer_time_ms(&LinkProfile::evolve10(), &ideal, KB, MB100).unwrap();
        assert!(close(t, 80_004.8192, 1e-6), "{t}");
        let t1g = model_transfer_time_ms(&LinkProfile::evolve1g(), &ideal, KB, MB100).unwrap();
        assert!(close(t1g, 804.008192, 1e-6), "{t1g}");
        let t100 = model_transfer_time_ms(&LinkProfile::evolve100(), &ideal, KB, MB100).unwrap();
        assert!(close(t100, 8_004.08192, 1e-6));
        assert!((t100 / t1g) > 9.0 && (t100 / t1g) < 11.0);
        let small = model_transfer_time_ms(&LinkProfile::evolve100(), &ideal, KB, KB).unwrap();
        assert!(close(small, 4.16384, 1e-9), "{small}");
    }

    #[test]
    fn lossy_upload_example() {
        let t = model_transfer_time_ms(
            &LinkProfile::nr_5g(),
            &TransportModel::loss_throttled(),
            MB100,
            64,
        )
        .unwrap();
        assert!(close(t, 104_180.0, 100.0), "{t}");
    }

    #[test]
    fn empty_request_is_rejected() {
        assert!(matches!(
            model_transfer_time_ms(&LinkProfile::evolve10(), &TransportModel::ideal(), 0, 10),
            Err(LinkError::EmptyRequest)
        ));
    }

    #[test]
    fn strictly_increasing_in_payload() {
        for p in LinkProfile::builtins() {
            for model in [TransportModel::ideal(), TransportModel::loss_throttled()] {
                let mut last = 0.0;
                for total in [1u64, 2, 100, 1500, 1 << 20, 1 << 30] {
                    let t = model_transfer_time_ms(&p, &model, total, 0).unwrap();
                    assert!(t > last);
                    last = t;
                }
            }
        }
    }
}
