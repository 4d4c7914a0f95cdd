//! Slice-ownership permission table of a multi-headed external memory
//! controller. Each 1GB slice is owned by at most one host; every access is
//! checked against the owner and mismatches are fatal to the requestor.

use std::collections::BTreeSet;
use std::io::{self, Write};

use super::PoolHwError;

/// Host identifier within one pool (ports on the controller).
pub type HostId = u16;

/// Outcome of a permission check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessVerdict {
    Allowed,
    /// Requestor does not own the slice; the device raises a fatal memory error.
    Fatal,
}

/// Size of the snapshot header: magic, version, slice count, host count.
pub const SNAPSHOT_HEADER_BYTES: usize = 16;

const SNAPSHOT_MAGIC: &[u8; 4] = b"PSLT";
const SNAPSHOT_VERSION: u32 = 1;

/// Encoded permission-table size in bytes: `ceil(n_slices * ceil(log2(n_hosts)) / 8)`.
///
/// 1024 slices shared by 64 hosts pack into exactly 768 bytes.
pub fn state_bytes(n_slices: u64, n_hosts: u64) -> u64 {
    (n_slices * bits_per_entry(n_hosts)).div_ceil(8)
}

fn bits_per_entry(n_hosts: u64) -> u64 {
    if n_hosts <= 1 {
        0
    } else {
        64 - (n_hosts - 1).leading_zeros() as u64
    }
}

/// Per-pool mapping of slice index to owning host.
#[derive(Debug, Clone)]
pub struct SliceTable {
    owner: Vec<Option<HostId>>,
    free: BTreeSet<u32>,
    n_hosts: u16,
}

impl SliceTable {
    /// Creates a table with every slice unassigned. At most 64 hosts share a pool.
    pub fn new(n_slices: u32, n_hosts: u16) -> Result<Self, PoolHwError> {
        if n_hosts == 0 || n_hosts > 64 {
            return Err(PoolHwError::Config(format!(
                "n_hosts must be in 1..=64, got {n_hosts}"
            )));
        }
        Ok(Self {
            owner: vec![None; n_slices as usize],
            free: (0..n_slices).collect(),
            n_hosts,
        })
    }

    pub fn n_slices(&self) -> u32 {
        self.owner.len() as u32
    }

    pub fn n_hosts(&self) -> u16 {
        self.n_hosts
    }

    pub fn free_count(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn assigned_count(&self) -> u32 {
        self.n_slices() - self.free_count()
    }

    pub fn owner_of(&self, slice: u32) -> Result<Option<HostId>, PoolHwError> {
        self.owner
            .get(slice as usize)
            .copied()
            .ok_or(PoolHwError::SliceOutOfRange {
                slice,
                n_slices: self.n_slices(),
            })
    }

    /// Iterates unassigned slice indices in ascending order.
    pub fn free_slices(&self) -> impl Iterator<Item = u32> + '_ {
        self.free.iter().copied()
    }

    fn check_host(&self, host: HostId) -> Result<(), PoolHwError> {
        if host >= self.n_hosts {
            return Err(PoolHwError::HostOutOfRange {
                host,
                n_hosts: self.n_hosts,
            });
        }
        Ok(())
    }

    /// Assigns `k` unassigned slices to `host`, lowest index first.
    pub fn assign_slices(&mut self, host: HostId, k: u32) -> Result<Vec<u32>, PoolHwError> {
        self.check_host(host)?;
        if (self.free.len() as u32) < k {
            return Err(PoolHwError::CapacityExhausted {
                requested: k,
                available: self.free.len() as u32,
            });
        }
        let picked: Vec<u32> = self.free.iter().take(k as usize).copied().collect();
        for &s in &picked {
            self.free.remove(&s);
            self.owner[s as usize] = Some(host);
        }
        Ok(picked)
    }

    /// Assigns the given unassigned slices to `host`.
    pub fn assign_specific(&mut self, host: HostId, slices: &[u32]) -> Result<(), PoolHwError> {
        self.check_host(host)?;
        for &s in slices {
            let cur = self.owner_of(s)?;
            if cur.is_some() {
                return Err(PoolHwError::OwnershipViolation {
                    slice: s,
                    host,
                    owner: cur,
                });
            }
        }
        for &s in slices {
            self.free.remove(&s);
            self.owner[s as usize] = Some(host);
        }
        Ok(())
    }

    /// Resets the permission entries for slices owned by `host`. Rejects the
    /// whole batch if any slice is owned by someone else.
    pub fn release_slices(&mut self, host: HostId, slices: &[u32]) -> Result<(), PoolHwError> {
        self.check_host(host)?;
        for &s in slices {
            let cur = self.owner_of(s)?;
            if cur != Some(host) {
                return Err(PoolHwError::OwnershipViolation {
                    slice: s,
                    host,
                    owner: cur,
                });
            }
        }
        for &s in slices {
            self.owner[s as usize] = None;
            self.free.insert(s);
        }
        Ok(())
    }

    /// Permission check for one access. Allowed iff the requestor owns the
    /// slice; unassigned slices match no requestor. Never mutates the table.
    pub fn check_access(
        &self,
        requestor: HostId,
        slice: u32,
    ) -> Result<AccessVerdict, PoolHwError> {
        let owner = self.owner_of(slice)?;
        Ok(if owner == Some(requestor) {
            AccessVerdict::Allowed
        } else {
            AccessVerdict::Fatal
        })
    }

    /// Scans the full table and verifies internal consistency (free set
    /// matches unassigned entries). Intended for tests and assertion mode.
    pub fn verify_consistency(&self) -> Result<(), PoolHwError> {
        for (i, owner) in self.owner.iter().enumerate() {
            let in_free = self.free.contains(&(i as u32));
            if owner.is_some() == in_free {
                return Err(PoolHwError::Config(format!(
                    "slice {i}: owner {owner:?} inconsistent with free set"
                )));
            }
        }
        Ok(())
    }

    /// Writes the packed ownership snapshot: a 16-byte header followed by
    /// `ceil(log2(n_hosts))`-bit entries, little-endian bit order within each
    /// byte. Unassigned slices encode as 0; the snapshot is an ownership
    /// image, not a full dump of the assignment mask.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.n_slices().to_le_bytes())?;
        w.write_all(&(self.n_hosts as u32).to_le_bytes())?;

        let bits = bits_per_entry(self.n_hosts as u64) as usize;
        let body_len = state_bytes(self.n_slices() as u64, self.n_hosts as u64) as usize;
        let mut body = vec![0u8; body_len];
        for (i, owner) in self.owner.iter().enumerate() {
            let value = owner.unwrap_or(0) as u64;
            let bit_off = i * bits;
            for b in 0..bits {
                if value >> b & 1 == 1 {
                    let pos = bit_off + b;
                    body[pos / 8] |= 1 << (pos % 8);
                }
            }
        }
        w.write_all(&body)
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_snapshot(&mut out).expect("vec write");
        out
    }
}
