//! The AMX binary matrix container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "AMX1"
//! 4       4           dtype_code (u32, 1 = IEEE-754 binary32)
//! 8       4           ndim (u32, 1..=3)
//! 12      8 * ndim    dims (u64 each)
//! ..      4 * prod    row-major payload
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"AMX1";
pub const DTYPE_F32: u32 = 1;
const HEADER_FIXED: usize = 12;

/// An in-memory AMX array: dimensions plus row-major binary32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Amx {
    dims: Vec<u64>,
    data: Vec<f32>,
}

impl Amx {
    pub fn new(dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidInput(format!(
                "AMX supports 1 to 3 dimensions, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!("zero-length dimension in {dims:?}")));
        }
        let count = element_count(&dims)
            .ok_or_else(|| Error::InvalidInput(format!("dimension overflow for {dims:?}")))?;
        if count != data.len() as u64 {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {count} values, payload has {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| v.is_infinite()) {
            return Err(Error::InvalidInput(format!("infinite value {v} in payload")));
        }
        Ok(Self { dims, data })
    }

    /// Row-major 2-D array from a matrix, rounding each value to binary32.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(m[(r, c)] as f32);
            }
        }
        Self::new(vec![rows as u64, cols as u64], data)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(
            vec![values.len() as u64],
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Widens to an f64 matrix. 1-D arrays become a single column.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (rows, cols) = match self.dims.as_slice() {
            [n] => (*n as usize, 1),
            [r, c] => (*r as usize, *c as usize),
            other => {
                return Err(Error::Shape(format!(
                    "cannot view {}-D array {other:?} as a matrix",
                    other.len()
                )))
            }
        };
        Ok(DMatrix::from_row_iterator(
            rows,
            cols,
            self.data.iter().map(|&v| v as f64),
        ))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_FIXED + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an AMX byte buffer. `origin` is only used in error messages.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_FIXED {
            return Err(Error::format(origin, "truncated header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::format(
                origin,
                format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4])),
            ));
        }
        let dtype = read_u32(&bytes[4..8]);
        if dtype != DTYPE_F32 {
            return Err(Error::format(origin, format!("unsupported dtype_code {dtype}")));
        }
        let ndim = read_u32(&bytes[8..12]) as usize;
        if !(1..=3).contains(&ndim) {
            return Err(Error::format(origin, format!("unsupported ndim {ndim}")));
        }
        let payload_start = HEADER_FIXED + 8 * ndim;
        if bytes.len() < payload_start {
            return Err(Error::format(origin, "truncated dims"));
        }
        let dims: Vec<u64> = bytes[HEADER_FIXED..payload_start]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if dims.contains(&0) {
            return Err(Error::format(origin, format!("zero-length dimension in {dims:?}")));
        }
        let expected = element_count(&dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(origin, format!("dimension overflow for {dims:?}")))?;
        let payload = &bytes[payload_start..];
        if (payload.len() as u64) < expected {
            return Err(Error::format(
                origin,
                format!(
                    "truncated payload: dims {dims:?} need {expected} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        if payload.len() as u64 > expected {
            return Err(Error::format(
                origin,
                format!(
                    "trailing bytes: dims {dims:?} need {expected} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}

fn element_count(dims: &[u64]) -> Option<u64> {
    dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

pub fn write_amx(path: impl AsRef<Path>, amx: &Amx) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, amx.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_amx(path: impl AsRef<Path>) -> Result<Amx> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Amx::decode(&bytes, path)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_amx(path, &Amx::from_matrix(m)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_amx(path)?.to_matrix()
}

/// Replaces NaN entries with their column's mean over finite entries (0 for an
/// all-NaN column). Returns the number of imputed entries.
pub fn impute_nan_columns(m: &mut DMatrix<f64>) -> usize {
    let mut imputed = 0;
    for mut col in m.column_iter_mut() {
        let (sum, n) = col
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let fill = if n == 0 { 0.0 } else { sum / n as f64 };
        for v in col.iter_mut().filter(|v| v.is_nan()) {
            *v = fill;
            imputed += 1;
        }
    }
    if imputed > 0 {
        log::warn!("imputed {imputed} NaN target values with column means");
    }
    imputed
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_layout_is_44_bytes() {
        let amx = Amx::from_matrix(&DMatrix::identity(2, 2)).unwrap();
        let bytes = amx.encode();
        assert_eq!(bytes.len(), 44);
        assert_eq!(&bytes[0..4], b"AMX1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        let payload: Vec<f32> = bytes[28..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(payload, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_scalar_payload() {
        let amx = Amx::from_matrix(&DMatrix::zeros(1, 1)).unwrap();
        let bytes = amx.encode();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 16 + 4);
    }

    #[test]
    fn file_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eye.amx");
        write_matrix(&path, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = Amx::from_matrix(&DMatrix::identity(2, 2)).unwrap().encode();
        bytes[3] = b'9';
        let err = Amx::decode(&bytes, Path::new("x.amx")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AMX1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 20]);
        let err = Amx::decode(&bytes, Path::new("x.amx")).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn rejects_unsupported_dtype() {
        let mut bytes = Amx::from_slice(&[1.0]).unwrap().encode();
        bytes[4] = 2;
        let err = Amx::decode(&bytes, Path::new("x.amx")).unwrap_err();
        assert!(err.to_string().contains("dtype_code 2"), "{err}");
    }

    #[test]
    fn rejects_overflowing_dims() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AMX1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        assert!(Amx::decode(&bytes, Path::new("x.amx")).is_err());
        assert!(Amx::new(vec![u64::MAX, 3], vec![]).is_err());
    }

    #[test]
    fn three_dimensional_arrays_round_trip() {
        let amx = Amx::new(vec![2, 1, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let back = Amx::decode(&amx.encode(), Path::new("x")).unwrap();
        assert_eq!(back, amx);
        assert!(back.to_matrix().is_err());
    }

    #[test]
    fn nan_round_trips_and_imputes() {
        let mut m = DMatrix::from_row_slice(3, 2, &[1.0, f64::NAN, f64::NAN, 4.0, 3.0, 6.0]);
        let amx = Amx::from_matrix(&m).unwrap();
        let back = Amx::decode(&amx.encode(), Path::new("x")).unwrap();
        assert!(back.data()[1].is_nan());
        assert_eq!(impute_nan_columns(&mut m), 2);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 1)], 5.0);
    }

    #[test]
    fn random_matrices_round_trip_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let data: Vec<f32> = (0..21).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            let amx = Amx::new(vec![7, 3], data).unwrap();
            let back = Amx::decode(&amx.encode(), Path::new("x")).unwrap();
            let a: Vec<u32> = amx.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.dims(), &[7, 3]);
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(
            dims in prop::collection::vec(1u64..6, 1..=3),
            seed in any::<u32>(),
        ) {
            let n: u64 = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff))
                .collect();
            let amx = Amx::new(dims, data).unwrap();
            let back = Amx::decode(&amx.encode(), Path::new("x")).unwrap();
            prop_assert_eq!(back.dims(), amx.dims());
            let a: Vec<u32> = amx.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
