//! Binary path dump.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"DSPATH01"
//! 8       8     d        (u64)
//! 16      8     n_steps  (u64)
//! 24      8     dt       (f64)
//! 32      8     N        (u64)
//! 40      8     seed     (u64)
//! 48      ...   states: for k in 0..=n_steps, for path in 0..N, for i in 0..d: f64
//! ```

use std::io::{Read, Write};

use super::simulate::PathEnsemble;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSPATH01";

#[derive(Debug, Clone, PartialEq)]
pub struct PathDump {
    pub dim: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Time-major: `states[(k * n_paths + i) * dim + c]`.
    pub states: Vec<f64>,
}

impl PathDump {
    pub fn state(&self, k: usize, path: usize) -> &[f64] {
        let o = (k * self.n_paths + path) * self.dim;
        &self.states[o..o + self.dim]
    }
}

pub fn write_dump<W: Write>(ensemble: &PathEnsemble, mut w: W) -> Result<()> {
    let n = ensemble.grid.n_steps();
    w.write_all(MAGIC)?;
    w.write_all(&(ensemble.dim as u64).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&ensemble.grid.dt().to_le_bytes())?;
    w.write_all(&(ensemble.n_paths() as u64).to_le_bytes())?;
    w.write_all(&ensemble.seed.to_le_bytes())?;
    for k in 0..=n {
        for p in ensemble.paths() {
            for v in p.state(k) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<PathDump> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    if &word != MAGIC {
        return Err(Error::InvalidInput("not a path dump (bad magic)".into()));
    }
    let mut next = || -> Result<[u8; 8]> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(b)
    };
    let dim = u64::from_le_bytes(next()?) as usize;
    let n_steps = u64::from_le_bytes(next()?) as usize;
    let dt = f64::from_le_bytes(next()?);
    let n_paths = u64::from_le_bytes(next()?) as usize;
    let seed = u64::from_le_bytes(next()?);
    let count = (n_steps + 1) * n_paths * dim;
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        states.push(f64::from_le_bytes(next()?));
    }
    Ok(PathDump {
        dim,
        n_steps,
        dt,
        n_paths,
        seed,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_ensemble, Domain, PerturbationField, SdeModel, TimeGrid};

    #[test]
    fn dump_reads_back() {
        let m = SdeModel::brownian(2, 1.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, 5).unwrap();
        let e = simulate_ensemble(&m, &Domain::unbounded(2), &[0.0, 1.0], &PerturbationField::zero(2), &g, 3, 9)
            .unwrap();
        let mut buf = Vec::new();
        write_dump(&e, &mut buf).unwrap();
        assert_eq!(buf.len(), 48 + 6 * 3 * 2 * 8);
        let d = read_dump(buf.as_slice()).unwrap();
        assert_eq!((d.dim, d.n_steps, d.n_paths, d.seed), (2, 5, 3, 9));
        assert_eq!(d.dt, 0.2);
        for k in 0..=5 {
            for i in 0..3 {
                assert_eq!(d.state(k, i), e.path(i).state(k));
            }
        }
    }
}
