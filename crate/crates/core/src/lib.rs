pub mod bench;
pub mod bus;
pub mod charger;
pub mod cloud;
pub mod crypto;
pub mod link;
pub mod measure;
pub mod payments;
pub mod protocol;
pub mod siem;
pub mod update;
pub mod vehicle;
pub mod wire;
