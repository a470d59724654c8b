//! EMD-lite: a small, byte-exact container for microscopy datasets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMDLITE1"                      8 bytes
//! metadata JSON length            u32
//! metadata JSON                   UTF-8
//! dataset count                   u32
//! per dataset:
//!   name length                   u32
//!   name                          UTF-8
//!   dtype code                    u8
//!   ndim                          u8
//!   dims                          ndim x u64
//!   axis codes                    ndim x u8
//!   payload length                u64
//!   payload                       row-major, last axis fastest
//! SHA-256 of everything above     32 bytes
//! ```
//!
//! The digest is verified before anything else is parsed, so any corruption of
//! a stream that is long enough to carry a digest surfaces as
//! [`EmdError::Corruption`].

mod metadata;

use std::io::{self, Read, Seek, SeekFrom};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use metadata::{
    parse_iso8601, DetectorInfo, ExperimentMetadata, MetadataError, SampleInfo, SoftwareInfo,
    StagePosition,
};

pub const MAGIC: &[u8; 8] = b"EMDLITE1";
pub const DIGEST_LEN: usize = 32;
/// Bytes present in every encoding regardless of content: magic, JSON length,
/// dataset count and trailing digest.
pub const FIXED_OVERHEAD: usize = 8 + 4 + 4 + DIGEST_LEN;
pub const FILE_EXTENSION: &str = "emdl";

#[derive(Debug, thiserror::Error)]
pub enum EmdError {
    #[error("format error: {0}")]
    Format(String),
    #[error("digest mismatch: stream is corrupt")]
    Corruption,
    #[error("truncated stream: {0}")]
    Truncation(String),
    #[error("unsupported {what} code {code}")]
    Unsupported { what: &'static str, code: u8 },
    #[error("invalid file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F64 = 0,
    F32 = 1,
    U16 = 2,
    U8 = 3,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, EmdError> {
        Ok(match code {
            0 => DType::F64,
            1 => DType::F32,
            2 => DType::U16,
            3 => DType::U8,
            _ => return Err(EmdError::Unsupported { what: "dtype", code }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisKind {
    Width = 0,
    Height = 1,
    Energy = 2,
    Time = 3,
}

impl AxisKind {
    pub const HYPERSPECTRAL: [AxisKind; 3] = [AxisKind::Width, AxisKind::Height, AxisKind::Energy];
    pub const SPATIOTEMPORAL: [AxisKind; 3] = [AxisKind::Time, AxisKind::Height, AxisKind::Width];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, EmdError> {
        Ok(match code {
            0 => AxisKind::Width,
            1 => AxisKind::Height,
            2 => AxisKind::Energy,
            3 => AxisKind::Time,
            _ => return Err(EmdError::Unsupported { what: "axis", code }),
        })
    }
}

/// Dataset header as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub axes: Vec<AxisKind>,
    pub payload_len: u64,
}

impl DatasetDescriptor {
    pub fn element_count(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    pub fn expected_payload_len(&self) -> Option<u64> {
        self.element_count()?.checked_mul(self.dtype.width() as u64)
    }

    pub fn validate(&self) -> Result<(), EmdError> {
        if self.dims.is_empty() || self.dims.len() > u8::MAX as usize {
            return Err(EmdError::Invalid(format!(
                "dataset {:?}: ndim must be in 1..=255, got {}",
                self.name,
                self.dims.len()
            )));
        }
        if self.axes.len() != self.dims.len() {
            return Err(EmdError::Invalid(format!(
                "dataset {:?}: {} axes for {} dims",
                self.name,
                self.axes.len(),
                self.dims.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(EmdError::Invalid(format!(
                "dataset {:?}: every extent must be >= 1",
                self.name
            )));
        }
        match self.expected_payload_len() {
            Some(n) if n == self.payload_len => Ok(()),
            Some(n) => Err(EmdError::Invalid(format!(
                "dataset {:?}: payload is {} bytes but descriptor implies {}",
                self.name, self.payload_len, n
            ))),
            None => Err(EmdError::Invalid(format!(
                "dataset {:?}: extent product overflows",
                self.name
            ))),
        }
    }
}

/// One named N-dimensional array with its raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub axes: Vec<AxisKind>,
    pub data: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dtype: DType,
        dims: Vec<u64>,
        axes: Vec<AxisKind>,
        data: Vec<u8>,
    ) -> Result<Self, EmdError> {
        let ds = Self {
            name: name.into(),
            dtype,
            dims,
            axes,
            data,
        };
        ds.descriptor().validate()?;
        Ok(ds)
    }

    pub fn from_f64(
        name: impl Into<String>,
        dims: Vec<u64>,
        axes: Vec<AxisKind>,
        values: &[f64],
    ) -> Result<Self, EmdError> {
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Self::new(name, DType::F64, dims, axes, data)
    }

    pub fn from_u8(
        name: impl Into<String>,
        dims: Vec<u64>,
        axes: Vec<AxisKind>,
        values: Vec<u8>,
    ) -> Result<Self, EmdError> {
        Self::new(name, DType::U8, dims, axes, values)
    }

    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            name: self.name.clone(),
            dtype: self.dtype,
            dims: self.dims.clone(),
            axes: self.axes.clone(),
            payload_len: self.data.len() as u64,
        }
    }

    /// Element values widened to `f64`, in storage order.
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::U16 => self
                .data
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::U8 => self.data.iter().map(|&b| b as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmdLiteFile {
    pub metadata: ExperimentMetadata,
    pub datasets: Vec<Dataset>,
}

impl EmdLiteFile {
    pub fn dataset(&self, name: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// First dataset whose axis kinds equal `axes` exactly.
    pub fn find_by_axes(&self, axes: &[AxisKind]) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.axes == axes)
    }
}

/// Exact encoded size of `file`, or `None` if it would overflow.
pub fn encoded_len(file: &EmdLiteFile) -> Result<usize, EmdError> {
    let json = serde_json::to_vec(&file.metadata).map_err(|e| EmdError::Invalid(e.to_string()))?;
    let datasets: usize = file
        .datasets
        .iter()
        .map(|d| 14 + d.name.len() + 9 * d.dims.len() + d.data.len())
        .sum();
    Ok(FIXED_OVERHEAD + json.len() + datasets)
}

pub fn encode(file: &EmdLiteFile) -> Result<Vec<u8>, EmdError> {
    file.metadata
        .validate()
        .map_err(|e| EmdError::Invalid(format!("metadata {e}")))?;
    let json = serde_json::to_vec(&file.metadata).map_err(|e| EmdError::Invalid(e.to_string()))?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| EmdError::Invalid("metadata JSON exceeds 4 GiB".into()))?;
    let count = u32::try_from(file.datasets.len())
        .map_err(|_| EmdError::Invalid("too many datasets".into()))?;

    let mut out = Vec::with_capacity(encoded_len(file)?);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&count.to_le_bytes());
    for ds in &file.datasets {
        let desc = ds.descriptor();
        desc.validate()?;
        let name_len = u32::try_from(ds.name.len())
            .map_err(|_| EmdError::Invalid("dataset name exceeds 4 GiB".into()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(ds.name.as_bytes());
        out.push(ds.dtype.code());
        out.push(ds.dims.len() as u8);
        for d in &ds.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend(ds.axes.iter().map(|a| a.code()));
        out.extend_from_slice(&desc.payload_len.to_le_bytes());
        out.extend_from_slice(&ds.data);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmdError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                EmdError::Truncation(format!(
                    "{what}: need {n} bytes at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, EmdError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, EmdError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, EmdError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_metadata(json: &[u8]) -> Result<ExperimentMetadata, EmdError> {
    let md: ExperimentMetadata = serde_json::from_slice(json)
        .map_err(|e| EmdError::Format(format!("metadata JSON: {e}")))?;
    md.validate()
        .map_err(|e| EmdError::Format(format!("metadata {e}")))?;
    Ok(md)
}

fn parse_descriptor(cur: &mut Cursor<'_>, index: usize) -> Result<DatasetDescriptor, EmdError> {
    let name_len = cur.u32("dataset name length")? as usize;
    let name = std::str::from_utf8(cur.take(name_len, "dataset name")?)
        .map_err(|_| EmdError::Format(format!("dataset {index}: name is not UTF-8")))?
        .to_string();
    let dtype = DType::from_code(cur.u8("dtype")?)?;
    let ndim = cur.u8("ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.u64("dims")?);
    }
    let mut axes = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        axes.push(AxisKind::from_code(cur.u8("axis code")?)?);
    }
    let payload_len = cur.u64("payload length")?;
    let desc = DatasetDescriptor {
        name,
        dtype,
        dims,
        axes,
        payload_len,
    };
    desc.validate().map_err(|e| match e {
        EmdError::Invalid(msg) => EmdError::Format(msg),
        other => other,
    })?;
    Ok(desc)
}

pub fn decode(bytes: &[u8]) -> Result<EmdLiteFile, EmdError> {
    if bytes.len() < FIXED_OVERHEAD {
        let head = &bytes[..bytes.len().min(MAGIC.len())];
        if head != &MAGIC[..head.len()] {
            return Err(EmdError::Format("bad magic".into()));
        }
        return Err(EmdError::Truncation(format!(
            "{} bytes is shorter than the minimum {FIXED_OVERHEAD}",
            bytes.len()
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(EmdError::Corruption);
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(EmdError::Format("bad magic".into()));
    }

    let mut cur = Cursor {
        buf: body,
        pos: MAGIC.len(),
    };
    let json_len = cur.u32("metadata length")? as usize;
    let metadata = parse_metadata(cur.take(json_len, "metadata JSON")?)?;
    let count = cur.u32("dataset count")? as usize;
    let mut datasets = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let desc = parse_descriptor(&mut cur, index)?;
        let payload_len = usize::try_from(desc.payload_len)
            .map_err(|_| EmdError::Truncation("payload larger than address space".into()))?;
        let data = cur.take(payload_len, "payload")?.to_vec();
        datasets.push(Dataset {
            name: desc.name,
            dtype: desc.dtype,
            dims: desc.dims,
            axes: desc.axes,
            data,
        });
    }
    if cur.pos != body.len() {
        return Err(EmdError::Format(format!(
            "{} unexpected bytes after the last dataset",
            body.len() - cur.pos
        )));
    }
    Ok(EmdLiteFile { metadata, datasets })
}

/// Reads metadata and dataset descriptors without loading payloads or
/// verifying the digest. Used to classify a file cheaply.
pub fn read_header<R: Read + Seek>(
    mut reader: R,
) -> Result<(ExperimentMetadata, Vec<DatasetDescriptor>), EmdError> {
    fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>, EmdError> {
        let mut buf = Vec::new();
        r.take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(EmdError::Truncation(format!("{what}: stream ended early")));
        }
        Ok(buf)
    }

    let magic = read_exact(&mut reader, MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(EmdError::Format("bad magic".into()));
    }
    let json_len = u32::from_le_bytes(read_exact(&mut reader, 4, "metadata length")?.try_into().unwrap());
    let metadata = parse_metadata(&read_exact(&mut reader, json_len as usize, "metadata JSON")?)?;
    let count = u32::from_le_bytes(read_exact(&mut reader, 4, "dataset count")?.try_into().unwrap());
    let mut descriptors = Vec::new();
    for index in 0..count as usize {
        let name_len =
            u32::from_le_bytes(read_exact(&mut reader, 4, "name length")?.try_into().unwrap());
        let mut fixed = read_exact(&mut reader, name_len as usize + 2, "descriptor")?;
        let ndim = fixed[name_len as usize + 1] as usize;
        fixed.extend(read_exact(&mut reader, 9 * ndim + 8, "descriptor")?);

        let mut framed = (name_len).to_le_bytes().to_vec();
        framed.extend(fixed);
        let mut cur = Cursor { buf: &framed, pos: 0 };
        let desc = parse_descriptor(&mut cur, index)?;
        let skip = i64::try_from(desc.payload_len)
            .map_err(|_| EmdError::Format("payload length out of range".into()))?;
        reader.seek(SeekFrom::Current(skip))?;
        descriptors.push(desc);
    }
    Ok((metadata, descriptors))
}

/// Shape and dtype summary of one dataset inside a [`MetadataDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub axes: Vec<AxisKind>,
}

/// The publishable metadata document: every acquisition field plus a summary
/// of each dataset. Field order is fixed by this struct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataDocument {
    #[serde(flatten)]
    pub metadata: ExperimentMetadata,
    pub datasets: Vec<DatasetSummary>,
}

impl MetadataDocument {
    /// Parses a published document back, splitting off the dataset summaries.
    pub fn from_value(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let mut object = value.clone();
        let datasets = object
            .as_object_mut()
            .and_then(|o| o.remove("datasets"))
            .unwrap_or_else(|| serde_json::Value::Array(vec![]));
        Ok(Self {
            metadata: serde_json::from_value(object)?,
            datasets: serde_json::from_value(datasets)?,
        })
    }
}

pub fn extract_metadata(file: &EmdLiteFile) -> MetadataDocument {
    MetadataDocument {
        metadata: file.metadata.clone(),
        datasets: file
            .datasets
            .iter()
            .map(|d| DatasetSummary {
                name: d.name.clone(),
                dtype: d.dtype,
                dims: d.dims.clone(),
                axes: d.axes.clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> EmdLiteFile {
        EmdLiteFile {
            metadata: ExperimentMetadata::example("2023-05-01T10:00:00Z"),
            datasets: vec![],
        }
    }

    fn json_len(file: &EmdLiteFile) -> usize {
        serde_json::to_vec(&file.metadata).unwrap().len()
    }

    #[test]
    fn empty_file_has_fixed_structure() {
        let f = minimal();
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + json_len(&f) + 4 + 32);
        assert_eq!(&bytes[..8], b"EMDLITE1");
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn u8_payload_length_field() {
        let mut f = minimal();
        f.datasets.push(
            Dataset::from_u8("img", vec![2, 2], vec![AxisKind::Width, AxisKind::Height], vec![0, 1, 2, 3])
                .unwrap(),
        );
        let bytes = encode(&f).unwrap();
        let jl = json_len(&f);
        // magic, json len, json, count, name len, "img", dtype, ndim, 2 dims, 2 axes
        let off = 8 + 4 + jl + 4 + 4 + 3 + 1 + 1 + 16 + 2;
        assert_eq!(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()), 4);
        assert_eq!(&bytes[off + 8..off + 12], &[0, 1, 2, 3]);
    }

    #[test]
    fn f64_payload_length_field() {
        let mut f = minimal();
        let values = vec![0.5; 60];
        f.datasets.push(Dataset::from_f64("cube", vec![3, 4, 5], AxisKind::HYPERSPECTRAL.to_vec(), &values).unwrap());
        assert_eq!(f.datasets[0].descriptor().payload_len, 480);
        let bytes = encode(&f).unwrap();
        let jl = json_len(&f);
        let off = 8 + 4 + jl + 4 + 4 + 4 + 1 + 1 + 24 + 3;
        assert_eq!(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()), 480);
    }

    #[test]
    fn encode_rejects_length_mismatch() {
        let mut f = minimal();
        f.datasets.push(Dataset {
            name: "bad".into(),
            dtype: DType::F64,
            dims: vec![2, 2],
            axes: vec![AxisKind::Width, AxisKind::Height],
            data: vec![0; 31],
        });
        assert!(matches!(encode(&f), Err(EmdError::Invalid(_))));
        assert!(Dataset::new("bad", DType::U16, vec![3], vec![AxisKind::Energy], vec![0; 5]).is_err());
        assert!(Dataset::new("zero", DType::U8, vec![0], vec![AxisKind::Energy], vec![]).is_err());
        assert!(Dataset::new("axes", DType::U8, vec![1], vec![], vec![0]).is_err());
    }

    #[test]
    fn encode_rejects_invalid_metadata() {
        let mut f = minimal();
        f.metadata.beam_energy = f64::INFINITY;
        assert!(matches!(encode(&f), Err(EmdError::Invalid(_))));
    }

    fn reseal(mut body: Vec<u8>) -> Vec<u8> {
        body.truncate(body.len() - DIGEST_LEN);
        let d = Sha256::digest(&body);
        body.extend_from_slice(&d);
        body
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode(&minimal()).unwrap();
        bytes[..8].copy_from_slice(b"NOTEMDL1");
        let bytes = reseal(bytes);
        assert!(matches!(decode(&bytes), Err(EmdError::Format(_))));
        assert!(matches!(decode(b"NOTEMDL1"), Err(EmdError::Format(_))));
    }

    #[test]
    fn short_streams_are_truncations() {
        let bytes = encode(&minimal()).unwrap();
        for cut in [0, 4, 8, 20, 43] {
            assert!(matches!(decode(&bytes[..cut]), Err(EmdError::Truncation(_))), "cut {cut}");
        }
    }

    #[test]
    fn structural_truncation_behind_valid_digest() {
        let mut f = minimal();
        f.datasets.push(Dataset::from_u8("img", vec![4], vec![AxisKind::Energy], vec![1, 2, 3, 4]).unwrap());
        let mut bytes = encode(&f).unwrap();
        // drop the last payload byte and re-seal so only the structure is wrong
        bytes.remove(bytes.len() - DIGEST_LEN - 1);
        let bytes = reseal(bytes);
        assert!(matches!(decode(&bytes), Err(EmdError::Truncation(_))));
    }

    #[test]
    fn unknown_codes_are_unsupported() {
        let mut f = minimal();
        f.datasets.push(Dataset::from_u8("img", vec![1], vec![AxisKind::Energy], vec![9]).unwrap());
        let bytes = encode(&f).unwrap();
        let dtype_at = 8 + 4 + json_len(&f) + 4 + 4 + 3;

        let mut bad = bytes.clone();
        bad[dtype_at] = 7;
        assert!(matches!(decode(&reseal(bad)), Err(EmdError::Unsupported { what: "dtype", code: 7 })));

        let mut bad = bytes;
        bad[dtype_at + 2 + 8] = 9;
        assert!(matches!(decode(&reseal(bad)), Err(EmdError::Unsupported { what: "axis", code: 9 })));
    }

    #[test]
    fn trailing_garbage_is_format_error() {
        let mut bytes = encode(&minimal()).unwrap();
        let digest_at = bytes.len() - DIGEST_LEN;
        bytes.insert(digest_at, 0);
        assert!(matches!(decode(&reseal(bytes)), Err(EmdError::Format(_))));
    }

    #[test]
    fn header_reader_skips_payloads() {
        let mut f = minimal();
        f.datasets.push(Dataset::from_f64("cube", vec![2, 2, 3], AxisKind::HYPERSPECTRAL.to_vec(), &[1.0; 12]).unwrap());
        f.datasets.push(Dataset::from_f64("energy", vec![3], vec![AxisKind::Energy], &[1.0, 2.0, 3.0]).unwrap());
        let bytes = encode(&f).unwrap();
        let (md, descs) = read_header(std::io::Cursor::new(&bytes)).unwrap();
        assert_eq!(md, f.metadata);
        assert_eq!(descs, f.datasets.iter().map(Dataset::descriptor).collect::<Vec<_>>());
    }

    #[test]
    fn metadata_document_pass_through() {
        let mut f = minimal();
        f.metadata.sample.elements = vec!["Au".into(), "C".into()];
        f.datasets.push(Dataset::from_u8("a", vec![2, 2], vec![AxisKind::Width, AxisKind::Height], vec![0; 4]).unwrap());
        f.datasets.push(Dataset::from_u8("b", vec![3], vec![AxisKind::Energy], vec![0; 3]).unwrap());
        let doc = serde_json::to_value(extract_metadata(&f)).unwrap();
        assert_eq!(doc["acquisition_datetime"], "2023-05-01T10:00:00Z");
        assert_eq!(doc["sample"]["elements"], serde_json::json!(["Au", "C"]));
        assert_eq!(doc["datasets"].as_array().unwrap().len(), 2);
        assert_eq!(doc["datasets"][0]["dims"], serde_json::json!([2, 2]));
        assert_eq!(doc["datasets"][1]["dims"], serde_json::json!([3]));
        let first = serde_json::to_string(&extract_metadata(&f)).unwrap();
        assert_eq!(first, serde_json::to_string(&extract_metadata(&f)).unwrap());
        assert!(first.starts_with("{\"acquisition_datetime\""));
        let parsed = MetadataDocument::from_value(&doc).unwrap();
        assert_eq!(parsed, extract_metadata(&f));
    }

    #[test]
    fn widening_reads_every_dtype() {
        let ds = Dataset::new("u16", DType::U16, vec![2], vec![AxisKind::Energy], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(ds.to_f64(), vec![1.0, 256.0]);
        let mut f32s = Vec::new();
        f32s.extend_from_slice(&1.5f32.to_le_bytes());
        let ds = Dataset::new("f32", DType::F32, vec![1], vec![AxisKind::Energy], f32s).unwrap();
        assert_eq!(ds.to_f64(), vec![1.5]);
    }
}
