use std::sync::Arc;

use crate::bus::EventBus;
use crate::charger::{Charger, ChargerConfig};
use crate::cloud::{CloudLink, ImageRepository, PaymentGateway, SiemBackend};
use crate::crypto::{Digest, Identity, KeyRegistry};
use crate::link::{EmulatedLink, LinkProfile, TransportModel};
use crate::vehicle::{ChargerEndpoint, SetupTimes, Vehicle, VehicleSession, VasError};
use crate::wire::WireError;

fn seed_bytes(label: &str, seed: u64) -> [u8; 32] {
    Digest::of_parts(&[label.as_bytes(), &seed.to_be_bytes()]).0
}

/// One vehicle, one charger on an emulated link, and the three cloud
/// services behind the charger on 4G links. Everything derives from `seed`.
pub struct Testbed {
    pub vehicle: Vehicle,
    pub charger: Arc<Charger>,
    pub publisher: Identity,
    pub repo: Arc<ImageRepository>,
    pub siem: Arc<SiemBackend>,
    pub gateway: Arc<PaymentGateway>,
    pub link: EmulatedLink,
    trusted_vehicles: Arc<KeyRegistry>,
    trusted_chargers: Arc<KeyRegistry>,
    seed: u64,
    connections: u64,
}

impl Testbed {
    pub fn new(profile: LinkProfile, model: TransportModel, seed: u64) -> Result<Self, WireError> {
        Self::with_config(profile, model, seed, ChargerConfig::default())
    }

    pub fn with_config(
        profile: LinkProfile,
        model: TransportModel,
        seed: u64,
        config: ChargerConfig,
    ) -> Result<Self, WireError> {
        let charger_id = Identity::from_seed("charger", seed_bytes("charger", seed));
        let vehicle_id = Identity::from_seed("vehicle", seed_bytes("vehicle", seed));
        let publisher = Identity::from_seed("publisher", seed_bytes("publisher", seed));

        let trusted_vehicles = Arc::new(KeyRegistry::new());
        trusted_vehicles.register(vehicle_id.verifying_key());
        let trusted_chargers = Arc::new(KeyRegistry::new());
        trusted_chargers.register(charger_id.verifying_key());

        let charger = Charger::new(
            charger_id,
            config,
            trusted_vehicles.clone(),
            publisher.verifying_key(),
            EventBus::platform(),
        )?;
        let repo = ImageRepository::new(publisher.verifying_key());
        let siem = SiemBackend::new();
        let gateway = PaymentGateway::new();
        charger.attach_repository(&repo, CloudLink::lte(repo.clone(), seed ^ 0x5250_4f00));
        charger.attach_siem_backend(&siem, CloudLink::lte(siem.clone(), seed ^ 0x5349_454d));
        charger.attach_gateway(&gateway, CloudLink::lte(gateway.clone(), seed ^ 0x5041_5900));

        let vehicle = Vehicle::new(vehicle_id, trusted_chargers.clone(), publisher.verifying_key());
        let link = EmulatedLink::open(profile, model, seed);
        Ok(Self {
            vehicle,
            charger,
            publisher,
            repo,
            siem,
            gateway,
            link,
            trusted_vehicles,
            trusted_chargers,
            seed,
            connections: 0,
        })
    }

    /// Another vehicle the charger trusts, distinct for each `index`.
    pub fn extra_vehicle(&self, index: u64) -> Vehicle {
        let id = Identity::from_seed("vehicle", seed_bytes(&format!("vehicle-{index}"), self.seed));
        self.trusted_vehicles.register(id.verifying_key());
        Vehicle::new(id, self.trusted_chargers.clone(), self.publisher.verifying_key())
    }

    /// A fresh link with the same profile, e.g. for a reconnect or another vehicle.
    pub fn open_link(&self, index: u64) -> EmulatedLink {
        EmulatedLink::open(self.link.profile(), self.link.model(), self.seed ^ (index + 1).wrapping_mul(0x9E37_79B9))
    }

    /// Nonce for the next discovery round.
    pub fn next_nonce(&mut self) -> [u8; 12] {
        let d = Digest::of_parts(&[b"sdp-nonce", &self.seed.to_be_bytes(), &self.connections.to_be_bytes()]);
        self.connections += 1;
        let mut nonce = [0u8; 12];
        nonce.copy_from_slice(&d.0[..12]);
        nonce
    }

    pub fn endpoint(&self) -> ChargerEndpoint {
        ChargerEndpoint::new(self.link.client(), self.charger.clone())
    }

    /// Full setup: discovery, handshake, negotiation and selection.
    pub fn connect(&mut self, services: &[u16], padded: bool) -> Result<(VehicleSession, SetupTimes), VasError> {
        let nonce = self.next_nonce();
        self.vehicle
            .discover_and_connect(nonce, &[self.endpoint()], services, padded)
    }
}
