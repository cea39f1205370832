//! Portable ensemble files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "DYNASENS"
//! version      u32      1
//! agents       u32 count, then per agent: u32 byte length + UTF-8 id
//! runs         u64
//! horizon      u64
//! seed         u64
//! lasso        u32 folds, u32 grid size, f64 min ratio, f64 tolerance,
//!              u32 max sweeps, u64 fold seed
//! scaling      u32 feature count p, p × f64 means, p × f64 scales
//! models       agents × runs records, agent-major:
//!                u8 kind (0 fitted, 1 constant), f64 intercept, f64 penalty,
//!                f64 positive rate, u32 count + f64 weights,
//!                u32 count + (f64 penalty, f64 loss) cv points
//! ```

use std::fmt::Write as _;

use super::{Ensemble, EnsembleConfig, FeatureScaling, LassoOptions, LogisticModel, ModelKind};
use crate::error::{Error, Result};

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"DYNASENS";
pub const ENSEMBLE_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid("length does not fit in u32"))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
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
            .ok_or_else(|| Error::Parse(format!("ensemble file truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// Reads `n` floats, refusing counts larger than the remaining input.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Parse(format!("ensemble file truncated at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse("agent id is not UTF-8".into()))
    }
}

pub fn encode_ensemble(e: &Ensemble) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(ENSEMBLE_MAGIC);
    w.0.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    w.u32(e.agent_ids.len())?;
    for id in &e.agent_ids {
        w.str(id)?;
    }
    w.u64(e.config.runs as u64);
    w.u64(e.config.horizon as u64);
    w.u64(e.config.seed);
    let l = &e.config.lasso;
    w.u32(l.folds)?;
    w.u32(l.grid_size)?;
    w.f64(l.min_ratio);
    w.f64(l.tolerance);
    w.u32(l.max_sweeps)?;
    w.u64(l.fold_seed);
    w.u32(e.scaling.len())?;
    w.f64s(&e.scaling.means);
    w.f64s(&e.scaling.scales);
    if e.models.len() != e.agent_ids.len() || e.models.iter().any(|m| m.len() != e.config.runs) {
        return Err(Error::invalid("ensemble model grid does not match agents × runs"));
    }
    for m in e.models.iter().flatten() {
        w.u8(match m.kind {
            ModelKind::Fitted => 0,
            ModelKind::Constant => 1,
        });
        w.f64(m.intercept);
        w.f64(m.penalty);
        w.f64(m.positive_rate);
        w.u32(m.weights.len())?;
        w.f64s(&m.weights);
        w.u32(m.cv_curve.len())?;
        for &(p, loss) in &m.cv_curve {
            w.f64(p);
            w.f64(loss);
        }
    }
    Ok(w.0)
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<Ensemble> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != ENSEMBLE_MAGIC {
        return Err(Error::Parse("not an ensemble file".into()));
    }
    let version = r.u32()? as u32;
    if version != ENSEMBLE_VERSION {
        return Err(Error::Parse(format!("unsupported ensemble version {version}")));
    }
    let n_agents = r.u32()?;
    let agent_ids = (0..n_agents).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let runs = r.u64()? as usize;
    let horizon = r.u64()? as usize;
    let seed = r.u64()?;
    let lasso = LassoOptions {
        folds: r.u32()?,
        grid_size: r.u32()?,
        min_ratio: r.f64()?,
        tolerance: r.f64()?,
        max_sweeps: r.u32()?,
        fold_seed: r.u64()?,
    };
    let p = r.u32()?;
    let scaling = FeatureScaling {
        means: r.f64s(p)?,
        scales: r.f64s(p)?,
    };
    let mut models = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let mut per_agent = Vec::new();
        for _ in 0..runs {
            let kind = match r.u8()? {
                0 => ModelKind::Fitted,
                1 => ModelKind::Constant,
                k => return Err(Error::Parse(format!("unknown model kind {k}"))),
            };
            let intercept = r.f64()?;
            let penalty = r.f64()?;
            let positive_rate = r.f64()?;
            let n_weights = r.u32()?;
            let weights = r.f64s(n_weights)?;
            let n_cv = r.u32()?;
            let flat = r.f64s(2 * n_cv)?;
            let cv_curve = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            per_agent.push(LogisticModel {
                kind,
                intercept,
                weights,
                penalty,
                positive_rate,
                cv_curve,
            });
        }
        models.push(per_agent);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!("{} trailing bytes after ensemble", bytes.len() - r.pos)));
    }
    Ok(Ensemble {
        agent_ids,
        config: EnsembleConfig {
            runs,
            horizon,
            seed,
            lasso,
        },
        scaling,
        models,
    })
}

/// Line-oriented summary: a header, one `model` line per agent and run, and
/// one `cv` line per grid point.
pub fn summary(e: &Ensemble) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "ensemble version={ENSEMBLE_VERSION} agents={} runs={} horizon={} seed={} features={}",
        e.n_agents(),
        e.config.runs,
        e.config.horizon,
        e.config.seed,
        e.scaling.len()
    );
    for (id, runs) in e.agent_ids.iter().zip(&e.models) {
        for (r, m) in runs.iter().enumerate() {
            let kind = match m.kind {
                ModelKind::Fitted => "fitted",
                ModelKind::Constant => "constant",
            };
            let _ = writeln!(
                out,
                "model agent={id} run={r} kind={kind} nonzero={} penalty={} positive_rate={} intercept={}",
                m.nonzero_weights(),
                m.penalty,
                m.positive_rate,
                m.intercept
            );
        }
    }
    for (id, runs) in e.agent_ids.iter().zip(&e.models) {
        for (r, m) in runs.iter().enumerate() {
            for (p, loss) in &m.cv_curve {
                let _ = writeln!(out, "cv agent={id} run={r} penalty={p} loss={loss}");
            }
        }
    }
    out
}
