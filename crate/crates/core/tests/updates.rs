use vas_core::bench::Testbed;
use vas_core::bus::{roles, topics};
use vas_core::crypto::Identity;
use vas_core::link::{LinkProfile, Side, TransportModel};
use vas_core::update::{EcuState, UpdateError, UpdateManifest, Version};
use vas_core::vehicle::{ChargerEndpoint, VasError};
use vas_core::wire::{error_codes, service_ids, WireError};

const ECU: &str = "bms-2";

fn bed(seed: u64) -> Testbed {
    Testbed::new(LinkProfile::evolve1g(), TransportModel::ideal(), seed).unwrap()
}

fn image(len: usize, tag: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(31) ^ tag).collect()
}

fn release(bed: &Testbed, version: Version, img: &[u8]) -> UpdateManifest {
    let m = UpdateManifest::sign(ECU, version, img, &bed.publisher);
    assert!(bed.repo.put(&m, img).unwrap());
    m
}

fn ecu() -> EcuState {
    EcuState::new(ECU, Version::new(1, 0, 0), image(4096, 0))
}

#[test]
fn published_release_reaches_the_ecu() {
    let mut bed = bed(1);
    let fetched = bed.charger.bus().subscribe(roles::CLOUD_BRIDGE, topics::UPDATES_FETCHED).unwrap();
    let img = image(256 * 1024, 7);
    let m = release(&bed, Version::new(1, 1, 0), &img);
    assert_eq!(bed.charger.pending_updates(), vec![m.clone()]);

    let (mut s, _) = bed.connect(&[service_ids::UPDATES], false).unwrap();
    let updated = s.update_ecu(&ecu()).unwrap().expect("an update is offered");
    assert_eq!(updated.current_version, Version::new(1, 1, 0));
    assert_eq!(&updated.image[..], &img[..]);
    assert_eq!(updated.previous_version(), Some(Version::new(1, 0, 0)));
    assert!(s.update_ecu(&updated).unwrap().is_none());
    assert_eq!(fetched.drain().len(), 1);
}

#[test]
fn corruption_on_the_cloud_link_never_reaches_the_cache() {
    let mut bed = bed(2);
    let m = release(&bed, Version::new(2, 0, 0), &image(64 * 1024, 1));
    let repo_link = bed.charger.repo_link().unwrap();
    repo_link.link().set_tamper(|side, bytes| {
        if side == Side::Server && bytes.len() > 1000 {
            bytes[900] ^= 0xFF;
        }
    });
    let (mut s, _) = bed.connect(&[service_ids::UPDATES], false).unwrap();
    let err = s.update_ecu(&ecu()).unwrap_err();
    assert!(
        matches!(err, VasError::Wire(WireError::Remote { code: error_codes::UNAVAILABLE, .. })),
        "{err}"
    );
    assert!(!bed.charger.cache().contains(&m));

    repo_link.link().clear_tamper();
    assert!(s.update_ecu(&ecu()).unwrap().is_some());
    assert!(bed.charger.cache().contains(&m));
}

#[test]
fn corrupted_cache_entry_is_rejected_by_the_vehicle() {
    let mut bed = bed(3);
    let m = release(&bed, Version::new(2, 0, 0), &image(64 * 1024, 2));
    bed.charger.fetch_update(&m).unwrap();
    assert!(bed.charger.cache().tamper(&m, |img| img[10] ^= 0x01));
    let (mut s, _) = bed.connect(&[service_ids::UPDATES], false).unwrap();
    let err = s.update_ecu(&ecu()).unwrap_err();
    assert!(matches!(err, VasError::Update(UpdateError::Integrity { .. })), "{err}");
}

#[test]
fn corruption_on_the_vehicle_link_is_caught() {
    let mut bed = bed(4);
    release(&bed, Version::new(2, 0, 0), &image(64 * 1024, 3));
    let (mut s, _) = bed.connect(&[service_ids::UPDATES], false).unwrap();
    bed.link.set_tamper(|side, bytes| {
        if side == Side::Server && bytes.len() > 1000 {
            bytes[500] ^= 0x10;
        }
    });
    assert!(s.update_ecu(&ecu()).is_err());
}

#[test]
fn one_cloud_download_serves_five_vehicles() {
    const SIZE: usize = 1 << 20;
    let mut bed = bed(5);
    let img = image(SIZE, 4);
    release(&bed, Version::new(3, 0, 0), &img);
    let repo_link = bed.charger.repo_link().unwrap();

    let mut vehicle_bytes = 0;
    for i in 0..5u64 {
        let vehicle = bed.extra_vehicle(i);
        let link = bed.open_link(i);
        let ep = ChargerEndpoint::new(link.client(), bed.charger.clone());
        let nonce = bed.next_nonce();
        let (mut s, _) = vehicle
            .discover_and_connect(nonce, &[ep], &[service_ids::UPDATES], false)
            .unwrap();
        let updated = s.update_ecu(&ecu()).unwrap().unwrap();
        assert_eq!(&updated.image[..], &img[..]);
        vehicle_bytes += link.bytes_sent(Side::Server);
    }
    let cloud = repo_link.meter().bytes_from_cloud();
    let size = SIZE as f64;
    assert!((cloud as f64) >= size && (cloud as f64) < size * 1.01, "cloud {cloud}");
    let ratio = vehicle_bytes as f64 / size;
    assert!((5.0..5.2).contains(&ratio), "vehicle/image ratio {ratio}");
}

#[test]
fn bad_and_stale_notifications_are_refused() {
    let bed = bed(6);
    let alerts = bed.charger.bus().subscribe(roles::CLOUD_BRIDGE, topics::SIEM_ALERTS).unwrap();
    let img = image(1024, 5);
    release(&bed, Version::new(2, 0, 0), &img);

    let older = UpdateManifest::sign(ECU, Version::new(1, 5, 0), &img, &bed.publisher);
    assert!(matches!(bed.charger.notify_update(older), Err(UpdateError::Downgrade { .. })));

    let forger = Identity::from_seed("forger", [66; 32]);
    let forged = UpdateManifest::sign(ECU, Version::new(9, 0, 0), &img, &forger);
    assert!(matches!(bed.charger.notify_update(forged), Err(UpdateError::BadSignature)));
    assert_eq!(bed.charger.rejected_notifications(), 1);
    assert_eq!(alerts.drain().len(), 1);
    assert_eq!(bed.charger.pending_updates().len(), 1);
}

#[test]
fn unreachable_repository_surfaces_as_unavailable() {
    let mut bed = bed(7);
    let img = image(4096, 6);
    let m = release(&bed, Version::new(2, 0, 0), &img);
    bed.charger.repo_link().unwrap().set_online(false);
    let (mut s, _) = bed.connect(&[service_ids::UPDATES], false).unwrap();
    let err = s.update_ecu(&ecu()).unwrap_err();
    assert!(
        matches!(err, VasError::Wire(WireError::Remote { code: error_codes::UNAVAILABLE, .. })),
        "{err}"
    );
    assert!(!bed.charger.cache().contains(&m));
}
