//! Service catalog exchanged during negotiation.
//!
//! ```text
//! count:u16 { id:u16 criticality:u8 name:str nparams:u16 { key:str value:str }* }*
//! str = len:u16 utf8
//! ```

use std::collections::HashSet;

use super::WireError;
use crate::bus::Criticality;

pub mod service_ids {
    pub const CHARGING: u16 = 1;
    pub const UPDATES: u16 = 2;
    pub const SIEM: u16 = 3;
    pub const PAYMENTS: u16 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDescriptor {
    pub service_id: u16,
    pub name: String,
    pub parameters: Vec<(String, String)>,
    pub criticality: Criticality,
}

impl ServiceDescriptor {
    pub fn new(service_id: u16, name: &str, criticality: Criticality) -> Self {
        Self {
            service_id,
            name: name.to_string(),
            parameters: Vec::new(),
            criticality,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.push((key.to_string(), value.to_string()));
        self
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.parameters
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn charging() -> Self {
        Self::new(service_ids::CHARGING, "charging", Criticality::Critical)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    let len = u16::try_from(s.len()).map_err(|_| WireError::Malformed("string too long".into()))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_count(out: &mut Vec<u8>, n: usize) -> Result<(), WireError> {
    let n = u16::try_from(n).map_err(|_| WireError::Malformed("too many entries".into()))?;
    out.extend_from_slice(&n.to_be_bytes());
    Ok(())
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn str(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Malformed("invalid utf-8".into()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub(crate) fn finish(&self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Malformed(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub fn encode_params(params: &[(String, String)]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    put_count(&mut out, params.len())?;
    for (k, v) in params {
        put_str(&mut out, k)?;
        put_str(&mut out, v)?;
    }
    Ok(out)
}

pub(crate) fn read_params(r: &mut Reader<'_>) -> Result<Vec<(String, String)>, WireError> {
    let n = r.u16()?;
    (0..n).map(|_| Ok((r.str()?, r.str()?))).collect()
}

pub fn decode_params(buf: &[u8]) -> Result<Vec<(String, String)>, WireError> {
    let mut r = Reader::new(buf);
    let p = read_params(&mut r)?;
    r.finish()?;
    Ok(p)
}

pub fn encode_catalog(services: &[ServiceDescriptor]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    put_count(&mut out, services.len())?;
    for s in services {
        out.extend_from_slice(&s.service_id.to_be_bytes());
        out.push(match s.criticality {
            Criticality::Standard => 0,
            Criticality::Critical => 1,
        });
        put_str(&mut out, &s.name)?;
        out.extend_from_slice(&encode_params(&s.parameters)?);
    }
    Ok(out)
}

/// Decodes and validates a catalog: ids are unique and the charging service
/// is present as critical.
pub fn decode_catalog(buf: &[u8]) -> Result<Vec<ServiceDescriptor>, WireError> {
    let bad = |m: &str| WireError::Protocol(format!("catalog: {m}"));
    let mut r = Reader::new(buf);
    let n = r.u16().map_err(|_| bad("truncated"))?;
    let mut out = Vec::with_capacity(n as usize);
    let mut seen = HashSet::new();
    for _ in 0..n {
        let entry = (|| -> Result<ServiceDescriptor, WireError> {
            let service_id = r.u16()?;
            let criticality = match r.u8()? {
                0 => Criticality::Standard,
                1 => Criticality::Critical,
                c => return Err(WireError::Malformed(format!("criticality {c}"))),
            };
            let name = r.str()?;
            let parameters = read_params(&mut r)?;
            Ok(ServiceDescriptor {
                service_id,
                name,
                parameters,
                criticality,
            })
        })()
        .map_err(|e| bad(&e.to_string()))?;
        if !seen.insert(entry.service_id) {
            return Err(bad(&format!("duplicate service id {}", entry.service_id)));
        }
        out.push(entry);
    }
    r.finish().map_err(|e| bad(&e.to_string()))?;
    match out.iter().find(|s| s.service_id == service_ids::CHARGING) {
        Some(s) if s.criticality == Criticality::Critical => Ok(out),
        Some(_) => Err(bad("charging service must be critical")),
        None => Err(bad("charging service missing")),
    }
}
