//! PCM1 matrix container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PCM1"
//! 4       4           u32 version (= 1)
//! 8       8           u64 rows
//! 16      8           u64 cols
//! 24      rows*cols*8 f64 values, row-major
//! ...                 rows × (u32 byte length + UTF-8 trial id)
//! ```
//!
//! Blocks can be concatenated in one file; [`read_block`] consumes exactly
//! one and leaves the reader at the next.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DatasetError, TrialMatrix};

pub const MAGIC: &[u8; 4] = b"PCM1";
pub const VERSION: u32 = 1;

const CHUNK_VALUES: usize = 8192;

pub fn write_block<W: Write>(
    writer: &mut W,
    trial_ids: &[String],
    values: &Array2<f64>,
) -> io::Result<()> {
    assert_eq!(trial_ids.len(), values.nrows(), "one id per row");
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&(values.nrows() as u64).to_le_bytes())?;
    writer.write_all(&(values.ncols() as u64).to_le_bytes())?;
    // Iteration follows logical (row-major) order regardless of memory layout.
    for v in values.iter() {
        writer.write_all(&v.to_le_bytes())?;
    }
    for id in trial_ids {
        let bytes = id.as_bytes();
        let len = u32::try_from(bytes.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "trial id too long"))?;
        writer.write_all(&len.to_le_bytes())?;
        writer.write_all(bytes)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), DatasetError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::Truncated { what },
        _ => DatasetError::Io {
            path: "<stream>".into(),
            source: e,
        },
    })
}

/// Read one block. Values are not validated beyond the container format.
pub fn read_block<R: Read>(reader: &mut R) -> Result<(Vec<String>, Array2<f64>), DatasetError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::UnrecognizedMatrixFile,
        _ => DatasetError::Io {
            path: "<stream>".into(),
            source: e,
        },
    })?;
    if &magic != MAGIC {
        return Err(DatasetError::UnrecognizedMatrixFile);
    }
    let mut u32buf = [0u8; 4];
    read_exact_or(reader, &mut u32buf, "header")?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let mut u64buf = [0u8; 8];
    read_exact_or(reader, &mut u64buf, "header")?;
    let rows = u64::from_le_bytes(u64buf);
    read_exact_or(reader, &mut u64buf, "header")?;
    let cols = u64::from_le_bytes(u64buf);

    let total = rows
        .checked_mul(cols)
        .filter(|t| t.checked_mul(8).is_some())
        .and_then(|t| usize::try_from(t).ok())
        .ok_or(DatasetError::DimensionOverflow { rows, cols })?;
    let (nrows, ncols) = (rows as usize, cols as usize);

    // Grow with the data actually present so a corrupt header cannot force
    // a huge up-front allocation.
    let mut values = Vec::with_capacity(total.min(1 << 20));
    let mut chunk = vec![0u8; CHUNK_VALUES * 8];
    let mut remaining = total;
    while remaining > 0 {
        let take = remaining.min(CHUNK_VALUES);
        let buf = &mut chunk[..take * 8];
        read_exact_or(reader, buf, "values")?;
        values.extend(
            buf.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))),
        );
        remaining -= take;
    }

    let mut ids = Vec::with_capacity(nrows.min(1 << 20));
    for index in 0..nrows {
        read_exact_or(reader, &mut u32buf, "trial ids")?;
        let len = u32::from_le_bytes(u32buf) as usize;
        let mut bytes = Vec::new();
        reader
            .by_ref()
            .take(len as u64)
            .read_to_end(&mut bytes)
            .map_err(|e| DatasetError::Io {
                path: "<stream>".into(),
                source: e,
            })?;
        if bytes.len() != len {
            return Err(DatasetError::Truncated { what: "trial ids" });
        }
        ids.push(String::from_utf8(bytes).map_err(|_| DatasetError::InvalidTrialId { index })?);
    }

    let values = Array2::from_shape_vec((nrows, ncols), values)
        .map_err(|_| DatasetError::DimensionOverflow { rows, cols })?;
    Ok((ids, values))
}

pub fn save_matrix_binary(matrix: &TrialMatrix, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_block(&mut w, matrix.trial_ids(), &matrix.values().to_owned()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_matrix_binary(path: impl AsRef<Path>) -> Result<TrialMatrix, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (ids, values) = read_block(&mut BufReader::new(file))?;
    TrialMatrix::new(ids, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(ids: &[String], values: &Array2<f64>) -> Vec<u8> {
        let mut out = Vec::new();
        write_block(&mut out, ids, values).unwrap();
        out
    }

    #[test]
    fn header_layout() {
        let ids = vec!["a".to_string()];
        let bytes = encode(&ids, &Array2::from_elem((1, 2), 1.5));
        assert_eq!(&bytes[0..4], b"PCM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.5);
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 1);
        assert_eq!(&bytes[44..], b"a");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&["a".into()], &Array2::zeros((1, 1)));
        bytes[..4].copy_from_slice(b"XXXX");
        let err = read_block(&mut bytes.as_slice()).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized matrix file");
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&10u64.to_le_bytes());
        bytes.extend_from_slice(&10u64.to_le_bytes());
        for i in 0..99 {
            bytes.extend_from_slice(&(i as f64).to_le_bytes());
        }
        let err = read_block(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, DatasetError::Truncated { what: "values" }), "{err}");
    }

    #[test]
    fn overflowing_dimensions() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        assert!(matches!(
            read_block(&mut bytes.as_slice()),
            Err(DatasetError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn concatenated_blocks() {
        let mut bytes = encode(&["x".into()], &Array2::from_elem((1, 3), 2.0));
        bytes.extend(encode(&["y".into(), "z".into()], &Array2::from_elem((2, 1), -1.0)));
        let mut r = bytes.as_slice();
        let (a, _) = read_block(&mut r).unwrap();
        let (b, vb) = read_block(&mut r).unwrap();
        assert_eq!(a, vec!["x"]);
        assert_eq!(b, vec!["y", "z"]);
        assert_eq!(vb.shape(), &[2, 1]);
        assert!(r.is_empty());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            bits in proptest::collection::vec(any::<u64>(), 36),
        ) {
            let values = Array2::from_shape_fn((rows, cols), |(i, j)| f64::from_bits(bits[i * 6 + j]));
            let ids: Vec<String> = (0..rows).map(|i| format!("trial-{i}-é")).collect();
            let bytes = encode(&ids, &values);
            let (ids2, values2) = read_block(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(ids2, ids);
            for (a, b) in values.iter().zip(values2.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
