//! Image-processing kernels for the two flow kinds.
//!
//! Hyperspectral cubes are stored `(Width, Height, Energy)` with energy
//! fastest; spatiotemporal stacks are `(Time, Height, Width)` with width
//! fastest. Both follow the EMD-lite row-major convention.

mod detect;
mod render;

use serde::{Deserialize, Serialize};

use crate::emdlite::{AxisKind, EmdLiteFile};

pub use detect::{
    detect_blobs, iou, otsu_threshold, BlobDetector, DetectionBox, Detector, DetectorParams,
    Polarity, ThresholdMethod,
};
pub use render::{
    analyze_emdl, render_artifacts, render_artifacts_with, write_pgm, AnalysisOutput, Artifact,
    ArtifactKind, ArtifactManifest, FsInput, InputSource,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("corrupt input: {0}")]
    CorruptInput(#[from] crate::emdlite::EmdError),
    #[error("unrecognized axis signature")]
    UnrecognizedSignature,
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_finite(data: &[f64]) -> Result<(), AnalysisError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(AnalysisError::InvalidTensor(format!(
            "non-finite value at flat index {i}"
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    /// Channel energies in eV, when the file carries them.
    pub energy_axis: Option<Vec<f64>>,
}

impl HyperspectralTensor {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(AnalysisError::InvalidTensor("every extent must be >= 1".into()));
        }
        if data.len() != width * height * channels {
            return Err(AnalysisError::InvalidTensor(format!(
                "{} values for a {width}x{height}x{channels} cube",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            width,
            height,
            channels,
            data,
            energy_axis: None,
        })
    }

    pub fn with_energy_axis(mut self, energies: Vec<f64>) -> Result<Self, AnalysisError> {
        if energies.len() != self.channels {
            return Err(AnalysisError::InvalidTensor(format!(
                "{} energies for {} channels",
                energies.len(),
                self.channels
            )));
        }
        self.energy_axis = Some(energies);
        Ok(self)
    }

    /// Builds the cube from the first `(Width, Height, Energy)` dataset of
    /// `file`, picking up a 1-D `Energy` dataset of matching length as the
    /// energy axis.
    pub fn from_file(file: &EmdLiteFile) -> Option<Result<Self, AnalysisError>> {
        let ds = file.find_by_axes(&AxisKind::HYPERSPECTRAL)?;
        let dims: Vec<usize> = ds.dims.iter().map(|&d| d as usize).collect();
        let tensor = Self::new(dims[0], dims[1], dims[2], ds.to_f64()).and_then(|t| {
            let axis = file
                .datasets
                .iter()
                .find(|d| d.axes == [AxisKind::Energy] && d.dims[0] as usize == t.channels);
            match axis {
                Some(axis) => t.with_energy_axis(axis.to_f64()),
                None => Ok(t),
            }
        });
        Some(tensor)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, e: usize) -> f64 {
        self.data[(x * self.height + y) * self.channels + e]
    }

    fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (x * self.height + y) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.data.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatiotemporalTensor {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SpatiotemporalTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(AnalysisError::InvalidTensor("every extent must be >= 1".into()));
        }
        if data.len() != frames * height * width {
            return Err(AnalysisError::InvalidTensor(format!(
                "{} values for a {frames}x{height}x{width} stack",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_file(file: &EmdLiteFile) -> Option<Result<Self, AnalysisError>> {
        let ds = file.find_by_axes(&AxisKind::SPATIOTEMPORAL)?;
        let d: Vec<usize> = ds.dims.iter().map(|&d| d as usize).collect();
        Some(Self::new(d[0], d[1], d[2], ds.to_f64()))
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel sum over energy, indexed `[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl IntensityMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.height + y]
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.data.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }
}

pub fn intensity_map(t: &HyperspectralTensor) -> IntensityMap {
    let mut data = Vec::with_capacity(t.width * t.height);
    for x in 0..t.width {
        for y in 0..t.height {
            data.push(compensated_sum(t.pixel(x, y).iter().copied()));
        }
    }
    IntensityMap {
        width: t.width,
        height: t.height,
        data,
    }
}

pub fn spectrum(t: &HyperspectralTensor) -> Spectrum {
    let pixels = t.width * t.height;
    let values = (0..t.channels)
        .map(|e| compensated_sum((0..pixels).map(|p| t.data[p * t.channels + e])))
        .collect();
    Spectrum { values }
}

/// An 8-bit grayscale image, row-major (`y * width + x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "frame buffer size");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Linear min-max scaling to `0..=255` with half-away-from-zero rounding.
/// A constant input maps to all zeros.
pub fn scale_to_u8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || lo >= hi {
        return vec![0; values.len()];
    }
    let range = hi - lo;
    values
        .iter()
        .map(|&v| (255.0 * (v - lo) / range).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Casts the stack to 8 bits using one min-max range for the whole tensor,
/// so brightness is comparable across frames.
pub fn cast_u8(t: &SpatiotemporalTensor) -> Vec<Frame> {
    let scaled = scale_to_u8(&t.data);
    let frame_len = t.height * t.width;
    scaled
        .chunks_exact(frame_len)
        .map(|c| Frame::new(t.width, t.height, c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(w: usize, h: usize, e: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> HyperspectralTensor {
        let mut data = Vec::new();
        for x in 0..w {
            for y in 0..h {
                for k in 0..e {
                    data.push(f(x, y, k));
                }
            }
        }
        HyperspectralTensor::new(w, h, e, data).unwrap()
    }

    #[test]
    fn zero_cube_projects_to_zeros() {
        let t = cube(4, 4, 8, |_, _, _| 0.0);
        assert!(intensity_map(&t).data.iter().all(|&v| v == 0.0));
        assert!(spectrum(&t).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_cube_sums_channels() {
        let t = cube(4, 4, 8, |_, _, _| 1.0);
        let m = intensity_map(&t);
        assert_eq!((m.width, m.height), (4, 4));
        assert!(m.data.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn single_pixel_spectrum_is_identity() {
        let t = cube(1, 1, 6, |_, _, e| e as f64 * 1.5 - 2.0);
        assert_eq!(spectrum(&t).values, t.data().to_vec());
    }

    #[test]
    fn random_cube_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = cube(3, 3, 5, |_, _, _| rng.random_range(0.0..100.0));
        let map = intensity_map(&t);
        let spec = spectrum(&t);
        for x in 0..3 {
            for y in 0..3 {
                let mut s = 0.0;
                for e in 0..5 {
                    s += t.get(x, y, e);
                }
                assert!((map.get(x, y) - s).abs() <= 1e-12 * s.abs());
            }
        }
        for e in 0..5 {
            let mut s = 0.0;
            for x in 0..3 {
                for y in 0..3 {
                    s += t.get(x, y, e);
                }
            }
            assert!((spec.values[e] - s).abs() <= 1e-12 * s.abs());
        }
        let total: f64 = t.data().iter().sum();
        assert!((map.total() - total).abs() <= 1e-12 * total);
        assert!((spec.total() - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(HyperspectralTensor::new(0, 1, 1, vec![]).is_err());
        assert!(HyperspectralTensor::new(1, 1, 2, vec![1.0]).is_err());
        assert!(HyperspectralTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(SpatiotemporalTensor::new(1, 1, 1, vec![f64::INFINITY]).is_err());
        let t = cube(1, 1, 2, |_, _, _| 1.0);
        assert!(t.with_energy_axis(vec![1.0]).is_err());
    }

    #[test]
    fn cast_constant_is_zero() {
        let t = SpatiotemporalTensor::new(2, 2, 2, vec![7.25; 8]).unwrap();
        assert!(cast_u8(&t).iter().all(|f| f.pixels.iter().all(|&p| p == 0)));
    }

    #[test]
    fn cast_endpoints_and_half_rounding() {
        let t = SpatiotemporalTensor::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(cast_u8(&t)[0].pixels, vec![0, 255]);
        // 255 * 0.5 = 127.5 rounds away from zero to 128
        let t = SpatiotemporalTensor::new(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(cast_u8(&t)[0].pixels, vec![0, 128, 255]);
    }

    #[test]
    fn cast_uses_one_range_for_all_frames() {
        let t = SpatiotemporalTensor::new(2, 1, 2, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let frames = cast_u8(&t);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].pixels, vec![0, 128]);
        assert_eq!(frames[1].pixels, vec![128, 255]);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(values), 2.0);
    }
}
