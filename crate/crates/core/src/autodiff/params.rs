//! Named parameters with gradient slots, and the `QCKPT` checkpoint format.
//!
//! A checkpoint is the magic `QCKPT`, a `u32` record count, then per record:
//! `u32` name length, UTF-8 name, `u8` dtype (0 = f32, 1 = f64), `u32` rank,
//! `rank` × `u64` dims and the little-endian values.

use std::io::{Read, Write};

use rand::Rng;

use super::tensor::{DType, Scalar, Tensor};
use crate::error::{format_err, invalid, Error, Result};
use crate::wire;

const WHAT: &str = "QCKPT checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Param<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(invalid(format!("duplicate parameter {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) -> Result<ParamId> {
        let (fan_in, fan_out) = match shape {
            [a, b] => (*a, *b),
            [a] => (*a, *a),
            _ => return Err(invalid(format!("xavier init for shape {shape:?}"))),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| S::of(rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(shape, data)?)
    }

    pub fn add_filled(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.add(name, Tensor::filled(shape, S::of(v)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Euclidean norm of all gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g.f64() * g.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Same names and values in another precision.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"QCKPT")?;
        wire::put_u32(w, self.params.len() as u32)?;
        let mut buf = Vec::new();
        for p in &self.params {
            wire::put_u32(w, p.name.len() as u32)?;
            w.write_all(p.name.as_bytes())?;
            wire::put_u8(w, S::DTYPE.id())?;
            wire::put_u32(w, p.value.rank() as u32)?;
            for &d in p.value.shape() {
                wire::put_u64(w, d as u64)?;
            }
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        wire::expect_magic(r, b"QCKPT", WHAT)?;
        let count = wire::get_u32(r, WHAT)? as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let len = wire::get_u32(r, WHAT)? as usize;
            if len > 1 << 16 {
                return Err(format_err(WHAT, format!("implausible name length {len}")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| truncated(e))?;
            let name = String::from_utf8(name).map_err(|_| format_err(WHAT, "name is not UTF-8"))?;
            let dtype = wire::get_u8(r, WHAT)?;
            let dtype = DType::from_id(dtype).ok_or_else(|| format_err(WHAT, format!("unknown dtype {dtype}")))?;
            if dtype != S::DTYPE {
                return Err(format_err(
                    WHAT,
                    format!("{name} is stored as {}, expected {}", dtype.name(), S::DTYPE.name()),
                ));
            }
            let rank = wire::get_u32(r, WHAT)? as usize;
            if rank > 8 {
                return Err(format_err(WHAT, format!("implausible rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| wire::get_u64(r, WHAT).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * S::BYTES];
            r.read_exact(&mut bytes).map_err(|e| truncated(e))?;
            let data = bytes.chunks_exact(S::BYTES).map(S::read_le).collect();
            store.add(name, Tensor::from_vec(&shape, data)?)?;
        }
        Ok(store)
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(invalid(format!(
                "checkpoint has {} parameters, model has {}",
                other.len(),
                self.len()
            )));
        }
        for p in &mut self.params {
            let id = other
                .find(&p.name)
                .ok_or_else(|| invalid(format!("checkpoint lacks parameter {:?}", p.name)))?;
            let v = other.value(id);
            if v.shape() != p.value.shape() {
                return Err(invalid(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        format_err(WHAT, "truncated")
    } else {
        Error::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::StreamRng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = StreamRng::from_seed(1);
        let mut s = ParamStore::<f32>::new();
        s.add_xavier("a.w", &[3, 5], &mut rng).unwrap();
        s.add_filled("a.b", &[5], 0.25).unwrap();
        s.add("scalar", Tensor::scalar(f32::MIN_POSITIVE)).unwrap();
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"QCKPT");
        let back = ParamStore::<f32>::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for id in s.ids() {
            assert_eq!(back.name(id), s.name(id));
            let a: Vec<u32> = s.value(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.value(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert!(ParamStore::<f64>::load(&mut buf.as_slice()).is_err());
        buf.truncate(buf.len() - 1);
        assert!(ParamStore::<f32>::load(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn duplicate_names_and_shape_mismatch() {
        let mut s = ParamStore::<f64>::new();
        s.add_filled("w", &[2], 1.0).unwrap();
        assert!(s.add_filled("w", &[2], 1.0).is_err());
        let mut other = ParamStore::<f64>::new();
        other.add_filled("w", &[3], 1.0).unwrap();
        assert!(s.load_values_from(&other).is_err());
    }
}
