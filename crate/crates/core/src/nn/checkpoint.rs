//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "HNET" | u32 version | u32 len, spec JSON | u64 iteration
//! per learnable tensor: u32 len, f32 values
//! per batchnorm layer: running mean blob, running variance blob
//! u8 has_velocity | velocity blobs in parameter order
//! ```

use std::io::Write;
use std::path::Path;

use super::network::LayerState;
use super::{Network, NetworkSpec, NnError, Result};

pub const MAGIC: &[u8; 4] = b"HNET";
pub const VERSION: u32 = 1;

/// A saved network plus training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Network<f32>,
    pub iteration: u64,
    /// Momentum buffers, present when saved by the trainer so a resumed run
    /// continues exactly.
    pub velocity: Option<Vec<Vec<f32>>>,
}

fn put_blob(out: &mut Vec<u8>, v: &[f32]) {
    out.extend((v.len() as u32).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
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
            .ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self, expected: usize, what: &str) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        if n != expected {
            return Err(NnError::Checkpoint(format!("{what}: {n} values, spec needs {expected}")));
        }
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn new(net: Network<f32>, iteration: u64) -> Self {
        Self {
            net,
            iteration,
            velocity: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let spec = serde_json::to_vec(self.net.spec())?;
        out.extend((spec.len() as u32).to_le_bytes());
        out.extend(&spec);
        out.extend(self.iteration.to_le_bytes());
        for p in self.net.params() {
            put_blob(&mut out, p);
        }
        for s in self.net.state() {
            if let LayerState::Bn {
                running_mean,
                running_var,
                ..
            } = s
            {
                put_blob(&mut out, running_mean);
                put_blob(&mut out, running_var);
            }
        }
        match &self.velocity {
            Some(v) => {
                out.push(1);
                for b in v {
                    put_blob(&mut out, b);
                }
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("missing HNET magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let spec: NetworkSpec = serde_json::from_slice(r.take(len)?)?;
        let iteration = r.u64()?;
        // A freshly built network gives the expected blob sizes.
        let template = Network::<f32>::new(spec.clone(), 0)?;
        let mut state = Vec::with_capacity(template.state().len());
        for s in template.state() {
            state.push(match s {
                LayerState::None => LayerState::None,
                LayerState::Conv { weight, bias } => LayerState::Conv {
                    weight: r.blob(weight.len(), "conv weight")?,
                    bias: r.blob(bias.len(), "conv bias")?,
                },
                LayerState::Fc { weight, bias } => LayerState::Fc {
                    weight: r.blob(weight.len(), "fc weight")?,
                    bias: r.blob(bias.len(), "fc bias")?,
                },
                LayerState::Bn { gamma, .. } => LayerState::Bn {
                    gamma: r.blob(gamma.len(), "bn gamma")?,
                    beta: r.blob(gamma.len(), "bn beta")?,
                    running_mean: Vec::new(),
                    running_var: Vec::new(),
                },
            });
        }
        for s in state.iter_mut() {
            if let LayerState::Bn {
                gamma,
                running_mean,
                running_var,
                ..
            } = s
            {
                *running_mean = r.blob(gamma.len(), "bn running mean")?;
                *running_var = r.blob(gamma.len(), "bn running variance")?;
            }
        }
        let net = Network::from_parts(spec, state);
        let velocity = match r.take(1)?[0] {
            0 => None,
            1 => Some(
                net.params()
                    .iter()
                    .map(|p| r.blob(p.len(), "velocity"))
                    .collect::<Result<Vec<_>>>()?,
            ),
            f => return Err(NnError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            net,
            iteration,
            velocity,
        })
    }

    /// Writes via a temporary file and rename so readers never see a partial
    /// checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{homography_net, Head, Mode, Scale, Tensor};
    use crate::rng::stream_rng;

    #[test]
    fn round_trip_preserves_everything() {
        let spec = homography_net(Head::Classification { rho: 8.0 }, &Scale::Desk).unwrap();
        let mut net = Network::<f32>::new(spec, 5).unwrap();
        // Move the running statistics away from their defaults.
        let x = Tensor::new(vec![2, 2, 32, 32], (0..4096).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
        net.forward(&x, Mode::Train, &mut stream_rng(1, 1, 1)).unwrap();
        let velocity = net.params().iter().map(|p| vec![0.25; p.len()]).collect();
        let ck = Checkpoint {
            net,
            iteration: 1234,
            velocity: Some(velocity),
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"HNET");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hnet");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let spec = homography_net(Head::Regression, &Scale::Desk).unwrap();
        let bytes = Checkpoint::new(Network::new(spec, 0).unwrap(), 0).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
