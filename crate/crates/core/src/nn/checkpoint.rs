//! `EVNN` checkpoint files.
//!
//! ```text
//! "EVNN"  u32 version
//! u32 input_dim  u32 n_widths  u32 widths[n_widths]
//! f64 slope  f64 bn_momentum  f64 bn_epsilon
//! f64 input_shift[input_dim]  f64 input_scale[input_dim]
//! dense₀ (W row-major, b)  bn₀ (γ, β, mean, var)  dense₁  bn₁  dense₂  bn₂
//! dense₃  bn₃  dense₄  dense₅
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{BatchNorm, Dense, Network, N_DENSE, N_NORM};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVNN";
pub const VERSION: u32 = 1;

fn put_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

impl Network {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.input_dim as u32).to_le_bytes())?;
        let widths = self.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for width in widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        let bn = &self.norms[0];
        put_f64s(w, [self.slope, bn.momentum, bn.epsilon])?;
        put_f64s(w, self.input_shift.iter().copied())?;
        put_f64s(w, self.input_scale.iter().copied())?;
        for i in 0..N_DENSE {
            let d = &self.dense[i];
            put_f64s(w, d.weight.iter().copied())?;
            put_f64s(w, d.bias.iter().copied())?;
            if let Some(b) = self.norms.get(i) {
                for t in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    put_f64s(w, t.iter().copied())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an EVNN checkpoint".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported EVNN version {version}")));
        }
        let input_dim = get_u32(r)? as usize;
        let n_widths = get_u32(r)? as usize;
        if input_dim == 0 || n_widths != N_DENSE {
            return Err(Error::Format(format!(
                "unsupported architecture: input_dim {input_dim}, {n_widths} dense layers"
            )));
        }
        let widths: Vec<usize> = (0..n_widths)
            .map(|_| get_u32(r).map(|w| w as usize))
            .collect::<Result<_>>()?;
        if widths[..] != Network::widths_for(input_dim)[..] {
            return Err(Error::Format(format!("unexpected layer widths {widths:?}")));
        }
        let slope = get_f64(r)?;
        let momentum = get_f64(r)?;
        let epsilon = get_f64(r)?;
        let input_shift = Array1::from(get_vec(r, input_dim)?);
        let input_scale = Array1::from(get_vec(r, input_dim)?);

        let mut dense = Vec::with_capacity(N_DENSE);
        let mut norms = Vec::with_capacity(N_NORM);
        let mut fan_in = input_dim;
        for (i, &width) in widths.iter().enumerate() {
            let weight = Array2::from_shape_vec((width, fan_in), get_vec(r, width * fan_in)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = Array1::from(get_vec(r, width)?);
            dense.push(Dense { weight, bias });
            if i < N_NORM {
                let mut t = (0..4)
                    .map(|_| get_vec(r, width).map(Array1::from))
                    .collect::<Result<Vec<_>>>()?;
                let running_var = t.pop().expect("4 tensors");
                if running_var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Format("running variance must be positive".into()));
                }
                let running_mean = t.pop().expect("4 tensors");
                let beta = t.pop().expect("4 tensors");
                let gamma = t.pop().expect("4 tensors");
                norms.push(BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum,
                    epsilon,
                });
            }
            fan_in = width;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Network {
            input_dim,
            slope,
            input_shift,
            input_scale,
            dense,
            norms,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use ndarray::Array2;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = Network::new(7, 42).unwrap();
        let batch = Array2::from_shape_fn((5, 7), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.01);
        net.forward(batch.view(), Mode::Training).unwrap();
        net.set_input_standardization(Array1::from_elem(7, 0.25), Array1::from_elem(7, 1.5))
            .unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..4], b"EVNN");
        let back = Network::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), bytes);
        let expected_len = 4 + 4 + 4 + 4 + 6 * 4 + 3 * 8 + 8 * (2 * 7 + net.parameter_count() + 2 * (28 + 48));
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn rejects_corrupt_files() {
        let net = Network::new(3, 1).unwrap();
        let mut bytes = net.to_bytes();
        assert!(Network::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Network::read_from(&mut extra.as_slice()).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            Network::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
