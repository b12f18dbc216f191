//! `IMPFLOW1` model files.
//!
//! Layout (little-endian): magic, `u32` version, `u32` d, `u32` block
//! count, per block `u32` layer count and `u32` widths, attribute tag
//! (`u32` length + UTF-8), solver (`u32` scheme, `u32` steps, `f64`
//! tolerance), then the parameters as a `u32` count of `f32` values.

use std::path::Path;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::flow::{CnfModel, SolverConfig, SolverScheme};

pub const FLOW_MAGIC: &[u8; 8] = b"IMPFLOW1";
pub const FLOW_VERSION: u32 = 1;

impl CnfModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(FLOW_MAGIC, FLOW_VERSION);
        w.usize(self.dim());
        let widths = self.block_widths();
        w.usize(widths.len());
        for b in &widths {
            w.usize(b.len() - 1);
            for &x in b {
                w.usize(x);
            }
        }
        w.str(self.attribute());
        let solver = self.solver();
        w.u32(match solver.scheme {
            SolverScheme::Rk4 => 0,
        });
        w.usize(solver.steps);
        w.f64(solver.tolerance);
        w.f32s(self.params());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, FLOW_MAGIC, FLOW_VERSION, "flow model")?;
        let dim = r.usize()?;
        let blocks = r.usize()?;
        if blocks > 1024 {
            return Err(Error::Corrupt("flow model: implausible block count".into()));
        }
        let mut widths = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let layers = r.usize()?;
            if layers > 1024 {
                return Err(Error::Corrupt("flow model: implausible layer count".into()));
            }
            widths.push(
                (0..=layers)
                    .map(|_| r.usize())
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let attribute = r.str()?;
        let scheme = match r.u32()? {
            0 => SolverScheme::Rk4,
            other => {
                return Err(Error::Corrupt(format!(
                    "flow model: unknown solver scheme {other}"
                )))
            }
        };
        let steps = r.usize()?;
        let tolerance = r.f64()?;
        let params = r.f32s()?;
        r.finish()?;
        let solver = SolverConfig {
            steps,
            scheme,
            tolerance,
        };
        CnfModel::from_parts(dim, &widths, params, attribute, solver)
            .map_err(|e| Error::Corrupt(format!("flow model: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;

    #[test]
    fn roundtrip_and_rejections() {
        let m = CnfModel::init(&FlowConfig::new(3, vec![5], 2), "dominance", 8).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"IMPFLOW1");
        assert_eq!(CnfModel::from_bytes(&bytes).unwrap(), m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CnfModel::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(
            CnfModel::from_bytes(&bad),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));

        assert!(matches!(
            CnfModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Corrupt(_))
        ));
    }
}
