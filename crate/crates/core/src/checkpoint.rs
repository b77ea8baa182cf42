// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary snapshot of a [`KernelCusum`] so monitoring can resume after a restart.
//!
//! All integers are little-endian `u64` unless noted, all reals are
//! little-endian IEEE-754 `f64` bit patterns (so they restore bit-identically,
//! including `±∞`). Field order, version 1:
//!
//! | field            | type                       |
//! |------------------|----------------------------|
//! | magic            | 4 bytes `b"KCSM"`          |
//! | version          | `u32` = 1                  |
//! | window `r`       | `u64`                      |
//! | min_samples `M`  | `u64`                      |
//! | threshold `b`    | `f64`                      |
//! | correction `c`   | `f64`                      |
//! | dimension `d`    | `u64`                      |
//! | reference size `m` | `u64`                    |
//! | reference self-sum | `f64` (fingerprint)      |
//! | raw count `q`    | `u64` (≤ r + 1)            |
//! | raw buffer       | `q · d` × `f64`, oldest first |
//! | pairs seen       | `u64`                      |
//! | since refresh    | `u64`                      |
//! | within-row sums  | `r` × `f64`, slot order    |
//! | n                | `u64`                      |
//! | prefix sum       | `f64`                      |
//! | prefix compensation | `f64`                   |
//! | lagged minimum   | `f64`                      |
//! | pending count    | `u64`                      |
//! | pending prefixes | count × `f64`, oldest first |
//! | s_hat            | `f64`                      |
//! | alarmed          | `u8` (0/1)                 |
//! | alarmed_at       | `u64` (0 when not alarmed) |
//!
//! The slot Gram matrix and reference cross rows are not stored: they are
//! deterministic kernel evaluations of the buffered pairs and are rebuilt on
//! restore.

use std::sync::Arc;

use crate::detector::{CusumState, DetectorConfig, KernelCusum, MmdWindow, ReferenceSet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KCSM";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated snapshot".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.buf.len() / 8 {
            return Err(Error::Checkpoint("truncated snapshot".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl KernelCusum {
    /// Serializes the full detector state (not the reference set).
    pub fn checkpoint(&self) -> Vec<u8> {
        let cfg = self.config();
        let win = self.window();
        let reference = self.reference();
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(cfg.window as u64);
        w.u64(u64::from(cfg.min_samples));
        w.f64(cfg.threshold);
        w.f64(cfg.correction);
        w.u64(win.dim() as u64);
        w.u64(reference.len() as u64);
        w.f64(reference.self_sum());

        w.u64(win.raw().len() as u64);
        for y in win.raw() {
            for &v in y {
                w.f64(v);
            }
        }
        let parts = win.parts();
        w.u64(parts.pairs_seen);
        w.u64(parts.since_refresh as u64);
        for &v in parts.within_rows {
            w.f64(v);
        }

        let c = self.cusum().parts();
        w.u64(c.n);
        w.f64(c.prefix_sum);
        w.f64(c.prefix_comp);
        w.f64(c.min_lagged);
        w.u64((c.pending.0.len() + c.pending.1.len()) as u64);
        for &v in c.pending.0.iter().chain(c.pending.1) {
            w.f64(v);
        }
        w.f64(c.s_hat);
        w.0.push(u8::from(c.alarmed_at.is_some()));
        w.u64(c.alarmed_at.unwrap_or(0));
        w.0
    }

    /// Restores a detector from [`Self::checkpoint`] output. `reference` must be
    /// the set the snapshot was taken against (checked by size and self-sum).
    pub fn restore(reference: Arc<ReferenceSet>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let window = r.usize()?;
        let min_samples = u32::try_from(r.u64()?)
            .map_err(|_| Error::Checkpoint("min_samples overflow".into()))?;
        let config = DetectorConfig {
            window,
            min_samples,
            threshold: r.f64()?,
            correction: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;
        let dim = r.usize()?;
        let m = r.usize()?;
        let self_sum = r.f64()?;
        if dim != reference.dim()
            || m != reference.len()
            || self_sum.to_bits() != reference.self_sum().to_bits()
        {
            return Err(Error::Checkpoint(
                "snapshot was taken against a different reference set".into(),
            ));
        }

        let q = r.usize()?;
        if q > window + 1 {
            return Err(Error::Checkpoint("raw buffer longer than r + 1".into()));
        }
        let raw = (0..q).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let pairs_seen = r.u64()?;
        let since_refresh = r.usize()?;
        let within_rows = r.f64s(window)?;
        let win = MmdWindow::from_parts(
            &reference,
            window,
            dim,
            raw,
            pairs_seen,
            since_refresh,
            within_rows,
        )?;

        let n = r.u64()?;
        let prefix_sum = r.f64()?;
        let prefix_comp = r.f64()?;
        let min_lagged = r.f64()?;
        let pending_len = r.usize()?;
        if pending_len > min_samples as usize + 1 {
            return Err(Error::Checkpoint("pending queue longer than M + 1".into()));
        }
        let pending = r.f64s(pending_len)?;
        let s_hat = r.f64()?;
        let alarmed = r.take(1)?[0];
        let alarmed_at_raw = r.u64()?;
        let alarmed_at = match alarmed {
            0 => None,
            1 => Some(alarmed_at_raw),
            _ => return Err(Error::Checkpoint("bad alarm flag".into())),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let cusum = CusumState::from_raw(
            n,
            prefix_sum,
            prefix_comp,
            min_lagged,
            pending,
            s_hat,
            alarmed_at,
        );
        Ok(KernelCusum::from_parts(reference, config, win, cusum))
    }
}
