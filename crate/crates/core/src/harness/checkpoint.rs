//! Versioned little-endian binary checkpoints of a running search.
//!
//! Layout: 8-byte magic, `u32` version, the run config as TOML text, then the
//! search state field by field. Every float is stored as its IEEE-754 bits so
//! a resumed search continues bit-identically. Wall-clock timings are left
//! out, so reruns of one config write byte-identical checkpoints; restored
//! epochs carry zero times and `elapsed` restarts at zero.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::RunConfig;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::search::{Adam, EpochRecord, PhaseTimes, SearchState, SearchTrace, Sgd};
use crate::searchspace::{ArchMatrix, ParamKey, SupernetState};

pub const MAGIC: [u8; 8] = *b"PXSRCHCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: SearchState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(VERSION);
        w.string(&self.config.to_toml_string());
        w.state(&self.state);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let config = RunConfig::from_toml_str(&r.string()?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let state = r.state()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after state",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, state })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("bin.tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }

    fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }

    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }

    fn usize(&mut self, x: usize) {
        self.u64(x as u64);
    }

    fn f64(&mut self, x: f64) {
        self.bytes(&x.to_bits().to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.usize(s.len());
        self.bytes(s.as_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        for &x in m.iter() {
            self.f64(x);
        }
    }

    fn key(&mut self, key: ParamKey) {
        match key {
            ParamKey::Stem => self.u8(0),
            ParamKey::Op { edge, op, slot } => {
                self.u8(1);
                self.usize(edge);
                self.usize(op);
                self.usize(slot);
            }
            ParamKey::HeadWeight => self.u8(2),
            ParamKey::HeadBias => self.u8(3),
        }
    }

    fn opt_usize(&mut self, x: Option<usize>) {
        match x {
            Some(v) => {
                self.u8(1);
                self.usize(v);
            }
            None => self.u8(0),
        }
    }

    fn weights(&mut self, w: &SupernetState) {
        self.matrix(&w.stem);
        self.usize(w.ops.len());
        for (&(edge, op), arrays) in &w.ops {
            self.usize(edge);
            self.usize(op);
            self.usize(arrays.len());
            arrays.iter().for_each(|m| self.matrix(m));
        }
        self.matrix(&w.head_weight);
        self.matrix(&w.head_bias);
    }

    fn record(&mut self, r: &EpochRecord) {
        self.usize(r.epoch);
        self.matrix(&r.arch);
        self.matrix(&r.discrete);
        self.usize(r.selected.len());
        r.selected.iter().for_each(|&k| self.usize(k));
        for x in [r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.objective] {
            self.f64(x);
        }
        match r.discretization_gap {
            Some(g) => {
                self.u8(1);
                self.f64(g);
            }
            None => self.u8(0),
        }
        self.usize(r.arch_op_calls);
        self.usize(r.weight_op_calls);
        self.usize(r.degenerate_rows);
    }

    fn state(&mut self, s: &SearchState) {
        self.usize(s.epoch);
        self.matrix(s.arch.matrix());
        self.matrix(s.discrete.matrix());
        self.weights(&s.weights);

        for x in [s.sgd.lr, s.sgd.momentum, s.sgd.weight_decay] {
            self.f64(x);
        }
        self.usize(s.sgd.velocity.len());
        for (&key, m) in &s.sgd.velocity {
            self.key(key);
            self.matrix(m);
        }

        let a = &s.adam;
        for x in [a.lr, a.beta1, a.beta2, a.eps] {
            self.f64(x);
        }
        self.matrix(&a.m);
        self.matrix(&a.v);
        self.u64(a.t);

        self.bytes(&s.rng.get_seed());
        self.u64(s.rng.get_stream());
        self.bytes(&s.rng.get_word_pos().to_le_bytes());

        self.opt_usize(s.trace.first_box_violation);
        self.usize(s.trace.records.len());
        s.trace.records.iter().for_each(|r| self.record(r));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| Error::Checkpoint(format!("count {x} does not fit in usize")))
    }

    /// A count of items each occupying at least `min_bytes`.
    fn len(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_bytes) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("implausible length {n} at offset {}", self.pos)));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!("invalid flag byte {b} at offset {}", self.pos - 1))),
        }
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("embedded text is not UTF-8".into()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint(format!("implausible matrix shape {rows}×{cols}")))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_shape_vec((rows, cols), data).expect("length matches shape"))
    }

    fn key(&mut self) -> Result<ParamKey> {
        Ok(match self.u8()? {
            0 => ParamKey::Stem,
            1 => ParamKey::Op {
                edge: self.usize()?,
                op: self.usize()?,
                slot: self.usize()?,
            },
            2 => ParamKey::HeadWeight,
            3 => ParamKey::HeadBias,
            t => return Err(Error::Checkpoint(format!("unknown parameter tag {t}"))),
        })
    }

    fn opt_usize(&mut self) -> Result<Option<usize>> {
        Ok(if self.flag()? { Some(self.usize()?) } else { None })
    }

    fn weights(&mut self) -> Result<SupernetState> {
        let stem = self.matrix()?;
        let mut ops = BTreeMap::new();
        for _ in 0..self.len(24)? {
            let key = (self.usize()?, self.usize()?);
            let arrays = (0..self.len(16)?).map(|_| self.matrix()).collect::<Result<Vec<_>>>()?;
            ops.insert(key, arrays);
        }
        Ok(SupernetState {
            stem,
            ops,
            head_weight: self.matrix()?,
            head_bias: self.matrix()?,
        })
    }

    fn record(&mut self) -> Result<EpochRecord> {
        let epoch = self.usize()?;
        let arch = self.matrix()?;
        let discrete = self.matrix()?;
        let selected = (0..self.len(8)?).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        Ok(EpochRecord {
            epoch,
            arch,
            discrete,
            selected,
            train_loss: self.f64()?,
            train_accuracy: self.f64()?,
            val_loss: self.f64()?,
            val_accuracy: self.f64()?,
            objective: self.f64()?,
            discretization_gap: if self.flag()? { Some(self.f64()?) } else { None },
            arch_op_calls: self.usize()?,
            weight_op_calls: self.usize()?,
            degenerate_rows: self.usize()?,
            times: PhaseTimes::default(),
        })
    }

    fn state(&mut self) -> Result<SearchState> {
        let epoch = self.usize()?;
        let arch = ArchMatrix::from_matrix(self.matrix()?);
        let discrete = ArchMatrix::from_matrix(self.matrix()?);
        let weights = self.weights()?;

        let mut sgd = Sgd::new(self.f64()?, self.f64()?, self.f64()?);
        for _ in 0..self.len(17)? {
            let key = self.key()?;
            sgd.velocity.insert(key, self.matrix()?);
        }

        let mut adam = Adam::new(self.f64()?, self.f64()?, self.f64()?, self.f64()?, (0, 0));
        adam.m = self.matrix()?;
        adam.v = self.matrix()?;
        adam.t = self.u64()?;

        let mut rng = ChaCha8Rng::from_seed(self.array()?);
        rng.set_stream(self.u64()?);
        rng.set_word_pos(u128::from_le_bytes(self.array()?));

        let first_box_violation = self.opt_usize()?;
        let records = (0..self.len(16)?).map(|_| self.record()).collect::<Result<Vec<_>>>()?;
        Ok(SearchState {
            epoch,
            arch,
            discrete,
            weights,
            sgd,
            adam,
            rng,
            trace: SearchTrace {
                records,
                first_box_violation,
            },
            elapsed: 0.0,
        })
    }
}
