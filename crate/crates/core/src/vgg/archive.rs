//! Bit-exact binary container for named weight tensors.
//!
//! Layout, little-endian throughout, no padding between records:
//!
//! ```text
//! magic    b"VGGW"
//! version  u32 = 1
//! count    u32
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   dtype    u8 (0 = float32, 1 = float64)
//!   ndim     u8
//!   dims     u32 x ndim
//!   payload  raw little-endian scalars
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::nn::Network;
use crate::tensor::{Dtype, Element, Tensor};

pub const MAGIC: [u8; 4] = *b"VGGW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {found:?}, expected {MAGIC:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {found} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated archive while reading {reading}")]
    Truncated { reading: &'static str },
    #[error("{extra} trailing bytes after the last tensor")]
    TrailingData { extra: usize },
    #[error("unknown dtype tag {tag}")]
    BadDtypeTag { tag: u8 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor name too long ({len} bytes, max 65535)")]
    NameTooLong { len: usize },
    #[error("duplicate tensor name {name}")]
    DuplicateName { name: String },
    #[error("invalid dims {dims:?} for tensor {name}")]
    BadDims { name: String, dims: Vec<usize> },
    #[error("archive is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("archive tensor {name} does not exist in the target network")]
    UnexpectedTensor { name: String },
    #[error("tensor {name}: archive shape {archive:?} does not match network shape {net:?}")]
    ShapeMismatch {
        name: String,
        archive: Vec<usize>,
        net: Vec<usize>,
    },
    #[error("tensor {name}: archive dtype {archive} does not match network dtype {net}")]
    DtypeMismatch {
        name: String,
        archive: Dtype,
        net: Dtype,
    },
}

/// A stored tensor of either supported dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl ArchiveTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArchiveTensor::F32(_) => Dtype::Float32,
            ArchiveTensor::F64(_) => Dtype::Float64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArchiveTensor::F32(t) => t.shape(),
            ArchiveTensor::F64(t) => t.shape(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArchiveTensor::F32(t) => t.len(),
            ArchiveTensor::F64(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            ArchiveTensor::F32(t) => {
                for &v in t.data() {
                    v.write_le(out);
                }
            }
            ArchiveTensor::F64(t) => {
                for &v in t.data() {
                    v.write_le(out);
                }
            }
        }
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<(String, ArchiveTensor)>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, tensor: ArchiveTensor) -> Result<(), ArchiveError> {
        if name.len() > u16::MAX as usize {
            return Err(ArchiveError::NameTooLong { len: name.len() });
        }
        if self.get(&name).is_some() {
            return Err(ArchiveError::DuplicateName { name });
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, ArchiveTensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.dtype().tag());
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            tensor.write_payload(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(ArchiveError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::UnsupportedVersion { found: version });
        }
        let count = r.u32("tensor count")?;
        let mut archive = WeightArchive::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_bytes = r.take(name_len, "name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| ArchiveError::BadName)?
                .to_string();
            let tag = r.u8("dtype")?;
            let dtype = Dtype::from_tag(tag).ok_or(ArchiveError::BadDtypeTag { tag })?;
            let ndim = r.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dim")? as usize);
            }
            let count: usize = dims.iter().product();
            if dims.iter().any(|&d| d == 0) {
                return Err(ArchiveError::BadDims { name, dims });
            }
            let payload = r.take(count * dtype.size_bytes(), "payload")?;
            let tensor = match dtype {
                Dtype::Float32 => {
                    let data = payload.chunks_exact(4).map(f32::read_le).collect();
                    ArchiveTensor::F32(
                        Tensor::from_vec(dims.clone(), data)
                            .map_err(|_| ArchiveError::BadDims { name: name.clone(), dims })?,
                    )
                }
                Dtype::Float64 => {
                    let data = payload.chunks_exact(8).map(f64::read_le).collect();
                    ArchiveTensor::F64(
                        Tensor::from_vec(dims.clone(), data)
                            .map_err(|_| ArchiveError::BadDims { name: name.clone(), dims })?,
                    )
                }
            };
            archive.push(name, tensor)?;
        }
        if r.pos != bytes.len() {
            return Err(ArchiveError::TrailingData {
                extra: bytes.len() - r.pos,
            });
        }
        Ok(archive)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ArchiveError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, reading: &'static str) -> Result<&'a [u8], ArchiveError> {
        if self.pos + n > self.bytes.len() {
            return Err(ArchiveError::Truncated { reading });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, reading: &'static str) -> Result<u8, ArchiveError> {
        Ok(self.take(1, reading)?[0])
    }

    fn u16(&mut self, reading: &'static str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2, reading)?.try_into().unwrap()))
    }

    fn u32(&mut self, reading: &'static str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4, reading)?.try_into().unwrap()))
    }
}

/// Helper for wrapping a typed tensor.
pub trait IntoArchiveTensor: Element {
    fn wrap(tensor: Tensor<Self>) -> ArchiveTensor;
    fn unwrap_ref(tensor: &ArchiveTensor) -> Option<&Tensor<Self>>;
}

impl IntoArchiveTensor for f32 {
    fn wrap(tensor: Tensor<f32>) -> ArchiveTensor {
        ArchiveTensor::F32(tensor)
    }
    fn unwrap_ref(tensor: &ArchiveTensor) -> Option<&Tensor<f32>> {
        match tensor {
            ArchiveTensor::F32(t) => Some(t),
            _ => None,
        }
    }
}

impl IntoArchiveTensor for f64 {
    fn wrap(tensor: Tensor<f64>) -> ArchiveTensor {
        ArchiveTensor::F64(tensor)
    }
    fn unwrap_ref(tensor: &ArchiveTensor) -> Option<&Tensor<f64>> {
        match tensor {
            ArchiveTensor::F64(t) => Some(t),
            _ => None,
        }
    }
}

/// Snapshot every parameter of `net`, in layer order.
pub fn net_to_archive<T: IntoArchiveTensor>(net: &Network<T>) -> WeightArchive {
    let mut archive = WeightArchive::new();
    for (name, tensor) in net.named_params() {
        archive
            .push(name, T::wrap(tensor.clone()))
            .expect("network parameter names are unique");
    }
    archive
}

/// Copy archive tensors into `net`, matching strictly by name, shape, and
/// dtype. The network is untouched on error.
pub fn load_into_net<T: IntoArchiveTensor>(
    archive: &WeightArchive,
    net: &mut Network<T>,
) -> Result<(), ArchiveError> {
    let named = net.named_params();
    let mut staged: Vec<Tensor<T>> = Vec::with_capacity(named.len());
    for (name, current) in &named {
        let stored = archive
            .get(name)
            .ok_or_else(|| ArchiveError::MissingTensor { name: name.clone() })?;
        let typed = T::unwrap_ref(stored).ok_or_else(|| ArchiveError::DtypeMismatch {
            name: name.clone(),
            archive: stored.dtype(),
            net: T::DTYPE,
        })?;
        if typed.shape() != current.shape() {
            return Err(ArchiveError::ShapeMismatch {
                name: name.clone(),
                archive: typed.shape().to_vec(),
                net: current.shape().to_vec(),
            });
        }
        staged.push(typed.clone());
    }
    for (name, _) in archive.entries() {
        if !named.iter().any(|(n, _)| n == name) {
            return Err(ArchiveError::UnexpectedTensor { name: name.clone() });
        }
    }
    let mut staged = staged.into_iter();
    for layer in net.layers_mut() {
        for p in layer.params_mut() {
            p.value = staged.next().expect("staged tensor per parameter");
        }
    }
    Ok(())
}

/// Write every parameter of `net` to `path` in archive format.
pub fn save_weights<T: IntoArchiveTensor>(
    net: &Network<T>,
    path: &Path,
) -> Result<(), ArchiveError> {
    net_to_archive(net).write_file(path)
}

/// Read an archive from disk.
pub fn load_weights(path: &Path) -> Result<WeightArchive, ArchiveError> {
    WeightArchive::read_file(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_fill, Dist, SeededRng};
    use crate::vgg::{build_vgg_mini, replace_head};
    use proptest::prelude::*;

    fn sample_net() -> Network<f32> {
        let mut rng = SeededRng::new(42);
        let mut net = build_vgg_mini::<f32>(1, &mut rng).unwrap();
        replace_head(&mut net, 1, true, &mut rng).unwrap();
        net
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vggw");
        save_weights(&net, &path).unwrap();
        let archive = load_weights(&path).unwrap();
        for (name, tensor) in net.named_params() {
            let stored = archive.get(&name).unwrap();
            let typed = f32::unwrap_ref(stored).unwrap();
            assert_eq!(typed, tensor, "tensor {name}");
        }
    }

    #[test]
    fn roundtrip_is_idempotent_at_the_byte_level() {
        let net = sample_net();
        let bytes = net_to_archive(&net).to_bytes();
        let reread = WeightArchive::from_bytes(&bytes).unwrap().to_bytes();
        assert_eq!(bytes, reread);
    }

    #[test]
    fn wrong_magic_is_rejected_without_partial_load() {
        let net = sample_net();
        let mut bytes = net_to_archive(&net).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(ArchiveError::BadMagic { .. })
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let net = sample_net();
        let mut bytes = net_to_archive(&net).to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(ArchiveError::UnsupportedVersion { found: 9 })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = sample_net();
        let bytes = net_to_archive(&net).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            WeightArchive::from_bytes(cut),
            Err(ArchiveError::Truncated { .. })
        ));
    }

    #[test]
    fn missing_head_tensor_names_the_tensor() {
        let net = sample_net();
        let full = net_to_archive(&net);
        let head_name = full.entries().last().unwrap().0.clone();
        let mut partial = WeightArchive::new();
        for (name, tensor) in full.entries() {
            if *name != head_name {
                partial.push(name.clone(), tensor.clone()).unwrap();
            }
        }
        let mut target = sample_net();
        match load_into_net(&partial, &mut target) {
            Err(ArchiveError::MissingTensor { name }) => assert_eq!(name, head_name),
            other => panic!("expected missing-tensor error, got {other:?}"),
        }
    }

    #[test]
    fn dtype_mismatch_is_detected() {
        let mut archive = WeightArchive::new();
        archive
            .push(
                "layer0.weight".into(),
                ArchiveTensor::F64(Tensor::zeros(&[8, 3, 3, 3])),
            )
            .unwrap();
        let mut net = sample_net();
        assert!(matches!(
            load_into_net(&archive, &mut net),
            Err(ArchiveError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn load_into_net_replays_saved_weights() {
        let src = sample_net();
        let archive = net_to_archive(&src);
        let mut dst = {
            let mut rng = SeededRng::new(999);
            let mut net = build_vgg_mini::<f32>(1, &mut rng).unwrap();
            replace_head(&mut net, 1, true, &mut rng).unwrap();
            net
        };
        load_into_net(&archive, &mut dst).unwrap();
        for ((_, a), (_, b)) in src.named_params().iter().zip(dst.named_params().iter()) {
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_archive_roundtrip(seed in 0u64..5000, dims in proptest::collection::vec(1usize..5, 1..4)) {
            let mut rng = SeededRng::new(seed);
            let t: Tensor<f64> = rng_fill(&mut rng, &dims, Dist::normal(0.0, 2.0)).unwrap();
            let mut archive = WeightArchive::new();
            archive.push("t".into(), ArchiveTensor::F64(t.clone())).unwrap();
            let bytes = archive.to_bytes();
            let back = WeightArchive::from_bytes(&bytes).unwrap();
            let stored = f64::unwrap_ref(back.get("t").unwrap()).unwrap();
            prop_assert_eq!(stored, &t);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
