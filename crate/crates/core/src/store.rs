//! In-process coordination store with prefix watches and leases.
//!
//! Every mutation bumps a global revision and is appended to a mutation log.
//! Watches are cursors into that log, so a watcher sees each matching
//! mutation exactly once, in revision order, whenever it polls.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

pub const MAX_VALUE_BYTES: usize = 1024;

pub type Revision = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LeaseId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("value for {key} is {len} bytes, limit is {MAX_VALUE_BYTES}")]
    ValueTooLarge { key: String, len: usize },
    #[error("unknown lease {0:?}")]
    UnknownLease(LeaseId),
    #[error("lease ttl must be positive")]
    ZeroTtl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lease {
    pub id: LeaseId,
    pub ttl: SimDuration,
    pub granted_at: SimTime,
}

impl Lease {
    pub fn expires_at(&self) -> SimTime {
        self.granted_at + self.ttl
    }

    /// Expired once the clock has passed `granted_at + ttl`.
    pub fn is_expired(&self, now: SimTime) -> bool {
        now > self.expires_at()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KvEntry {
    pub key: String,
    #[serde(serialize_with = "serialize_lossy_utf8")]
    pub value: Vec<u8>,
    pub lease: Option<LeaseId>,
    /// Revision of the last write to this key.
    pub revision: Revision,
}

fn serialize_lossy_utf8<S: serde::Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(v))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Put(#[serde(serialize_with = "serialize_lossy_utf8")] Vec<u8>),
    Delete,
}

/// One mutation as seen by watchers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Notification {
    pub revision: Revision,
    pub key: String,
    pub kind: EventKind,
}

/// A cursor over the mutation log restricted to keys under `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watch {
    prefix: String,
    next_revision: Revision,
}

impl Watch {
    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn next_revision(&self) -> Revision {
        self.next_revision
    }
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    entries: BTreeMap<String, KvEntry>,
    leases: BTreeMap<LeaseId, Lease>,
    revision: Revision,
    next_lease: u64,
    log: Vec<Notification>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Revision of the latest mutation (0 before any write).
    pub fn revision(&self) -> Revision {
        self.revision
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(|e| e.value.as_slice())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(|v| std::str::from_utf8(v).ok())
    }

    pub fn entry(&self, key: &str) -> Option<&KvEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.range(prefix.to_string()..).map(|(k, _)| k.as_str()).take_while(move |k| k.starts_with(prefix))
    }

    fn record(&mut self, key: String, kind: EventKind) -> Revision {
        self.revision += 1;
        self.log.push(Notification { revision: self.revision, key, kind });
        self.revision
    }

    pub fn put(&mut self, key: &str, value: impl Into<Vec<u8>>, lease: Option<LeaseId>) -> Result<Revision, StoreError> {
        let value = value.into();
        if value.len() > MAX_VALUE_BYTES {
            return Err(StoreError::ValueTooLarge { key: key.to_string(), len: value.len() });
        }
        if let Some(id) = lease {
            if !self.leases.contains_key(&id) {
                return Err(StoreError::UnknownLease(id));
            }
        }
        let rev = self.record(key.to_string(), EventKind::Put(value.clone()));
        self.entries.insert(key.to_string(), KvEntry { key: key.to_string(), value, lease, revision: rev });
        Ok(rev)
    }

    /// Deletes `key`. Returns the revision of the delete, or `None` if absent.
    pub fn delete(&mut self, key: &str) -> Option<Revision> {
        self.entries.remove(key)?;
        Some(self.record(key.to_string(), EventKind::Delete))
    }

    /// Deletes every key under `prefix`; returns the deleted keys in key order.
    pub fn delete_prefix(&mut self, prefix: &str) -> Vec<String> {
        let keys: Vec<String> = self.keys_with_prefix(prefix).map(str::to_string).collect();
        for k in &keys {
            self.delete(k);
        }
        keys
    }

    /// Opens a watch delivering every mutation under `prefix` with revision >= `from_revision`.
    pub fn watch(&self, prefix: &str, from_revision: Revision) -> Watch {
        Watch { prefix: prefix.to_string(), next_revision: from_revision.max(1) }
    }

    /// Drains the notifications a watch has not seen yet.
    pub fn poll(&self, watch: &mut Watch) -> Vec<Notification> {
        // Revision r lives at log index r - 1.
        let start = (watch.next_revision as usize).saturating_sub(1).min(self.log.len());
        let out: Vec<Notification> =
            self.log[start..].iter().filter(|n| n.key.starts_with(&watch.prefix)).cloned().collect();
        watch.next_revision = self.revision + 1;
        out
    }

    pub fn grant_lease(&mut self, ttl: SimDuration, now: SimTime) -> Result<LeaseId, StoreError> {
        if ttl.is_zero() {
            return Err(StoreError::ZeroTtl);
        }
        self.next_lease += 1;
        let id = LeaseId(self.next_lease);
        self.leases.insert(id, Lease { id, ttl, granted_at: now });
        Ok(id)
    }

    /// Renews `lease`: its expiry restarts from `now`.
    pub fn keep_alive(&mut self, lease: LeaseId, now: SimTime) -> Result<(), StoreError> {
        let l = self.leases.get_mut(&lease).ok_or(StoreError::UnknownLease(lease))?;
        l.granted_at = l.granted_at.max(now);
        Ok(())
    }

    pub fn lease(&self, lease: LeaseId) -> Option<&Lease> {
        self.leases.get(&lease)
    }

    /// Drops `lease` and every key attached to it.
    pub fn revoke(&mut self, lease: LeaseId) -> Vec<String> {
        if self.leases.remove(&lease).is_none() {
            return Vec::new();
        }
        self.delete_attached(&[lease])
    }

    fn delete_attached(&mut self, leases: &[LeaseId]) -> Vec<String> {
        let keys: Vec<String> = self
            .entries
            .values()
            .filter(|e| e.lease.is_some_and(|l| leases.contains(&l)))
            .map(|e| e.key.clone())
            .collect();
        for k in &keys {
            self.delete(k);
        }
        keys
    }

    /// Removes leases that expired by `now` along with their keys.
    pub fn expire_leases(&mut self, now: SimTime) -> Vec<String> {
        let expired: Vec<LeaseId> = self.leases.values().filter(|l| l.is_expired(now)).map(|l| l.id).collect();
        if expired.is_empty() {
            return Vec::new();
        }
        for id in &expired {
            self.leases.remove(id);
        }
        self.delete_attached(&expired)
    }

    /// Earliest instant at which some lease will be expired, if any.
    pub fn next_expiry(&self) -> Option<SimTime> {
        self.leases.values().map(|l| l.expires_at() + SimDuration::from_millis(1)).min()
    }

    /// Number of mutations recorded so far.
    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    /// JSON dump of all live entries and leases, for debugging.
    pub fn dump(&self) -> serde_json::Value {
        serde_json::json!({
            "revision": self.revision,
            "entries": self.entries.values().collect::<Vec<_>>(),
            "leases": self.leases.values().collect::<Vec<_>>(),
        })
    }
}
