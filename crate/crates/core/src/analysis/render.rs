use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    cast_u8, intensity_map, scale_to_u8, spectrum, AnalysisError, BlobDetector, DetectionBox,
    Detector, Frame, HyperspectralTensor, SpatiotemporalTensor,
};
use crate::emdlite::{self, EmdLiteFile, MetadataDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    IntensityMap,
    Spectrum,
    AnnotatedFrame,
    Detections,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    /// Forward-slash path, relative to whatever root the manifest is
    /// expressed against.
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactManifest {
    pub entries: Vec<Artifact>,
}

impl ArtifactManifest {
    fn push(&mut self, kind: ArtifactKind, path: impl Into<String>) {
        self.entries.push(Artifact {
            kind,
            path: path.into(),
        });
    }

    /// Prefixes every path with `prefix/`.
    pub fn rebase(&self, prefix: &str) -> Self {
        let prefix = prefix.trim_end_matches('/');
        let entries = self
            .entries
            .iter()
            .map(|a| Artifact {
                kind: a.kind,
                path: if prefix.is_empty() {
                    a.path.clone()
                } else {
                    format!("{prefix}/{}", a.path)
                },
            })
            .collect();
        Self { entries }
    }

    /// Looks an artifact up by its final path component.
    pub fn find_by_name(&self, name: &str) -> Option<&Artifact> {
        self.entries
            .iter()
            .find(|a| a.path.rsplit('/').next() == Some(name))
    }

    pub fn paths(&self) -> Vec<&str> {
        self.entries.iter().map(|a| a.path.as_str()).collect()
    }
}

/// Binary PGM (P5), 8-bit.
pub fn write_pgm(path: &Path, frame: &Frame) -> io::Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    bytes.extend_from_slice(&frame.pixels);
    fs::write(path, bytes)
}

fn spectrum_csv(values: &[f64], energies: Option<&[f64]>) -> String {
    let mut out = String::new();
    match energies {
        Some(energies) => {
            out.push_str("channel_index,energy_eV,counts\n");
            for (i, (v, e)) in values.iter().zip(energies).enumerate() {
                let _ = writeln!(out, "{i},{e},{v}");
            }
        }
        None => {
            out.push_str("channel_index,counts\n");
            for (i, v) in values.iter().enumerate() {
                let _ = writeln!(out, "{i},{v}");
            }
        }
    }
    out
}

fn draw_outline(frame: &mut Frame, b: &DetectionBox) {
    let (x0, y0) = (b.x as usize, b.y as usize);
    let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
    for x in x0..=x1 {
        frame.set(x, y0, 255);
        frame.set(x, y1, 255);
    }
    for y in y0..=y1 {
        frame.set(x0, y, 255);
        frame.set(x1, y, 255);
    }
}

fn render_hyperspectral(
    t: &HyperspectralTensor,
    out_dir: &Path,
) -> Result<ArtifactManifest, AnalysisError> {
    let map = intensity_map(t);
    // the map is stored [x][y]; images are row-major [y][x]
    let mut row_major = Vec::with_capacity(map.data.len());
    for y in 0..map.height {
        for x in 0..map.width {
            row_major.push(map.get(x, y));
        }
    }
    let image = Frame::new(map.width, map.height, scale_to_u8(&row_major));
    write_pgm(&out_dir.join("intensity.pgm"), &image)?;

    let spec = spectrum(t);
    let csv = spectrum_csv(&spec.values, t.energy_axis.as_deref());
    fs::write(out_dir.join("spectrum.csv"), csv)?;

    let mut manifest = ArtifactManifest::default();
    manifest.push(ArtifactKind::IntensityMap, "intensity.pgm");
    manifest.push(ArtifactKind::Spectrum, "spectrum.csv");
    Ok(manifest)
}

fn render_spatiotemporal(
    t: &SpatiotemporalTensor,
    out_dir: &Path,
    detector: &dyn Detector,
) -> Result<ArtifactManifest, AnalysisError> {
    let frames = cast_u8(t);
    let digits = frames.len().to_string().len().max(4);
    let mut manifest = ArtifactManifest::default();
    let mut detections = Vec::new();
    for (i, mut frame) in frames.into_iter().enumerate() {
        let boxes = detector.detect(i, &frame);
        for b in &boxes {
            draw_outline(&mut frame, b);
        }
        let name = format!("frame_{i:0digits$}.pgm");
        write_pgm(&out_dir.join(&name), &frame)?;
        manifest.push(ArtifactKind::AnnotatedFrame, name);
        detections.extend(boxes);
    }
    let json = serde_json::to_vec_pretty(&detections).map_err(io::Error::other)?;
    fs::write(out_dir.join("detections.json"), json)?;
    manifest.push(ArtifactKind::Detections, "detections.json");
    Ok(manifest)
}

/// Writes the analysis products for `file` into `out_dir` using the default
/// blob detector. Manifest paths are relative to `out_dir`.
pub fn render_artifacts(file: &EmdLiteFile, out_dir: &Path) -> Result<ArtifactManifest, AnalysisError> {
    render_artifacts_with(file, out_dir, &BlobDetector::default())
}

pub fn render_artifacts_with(
    file: &EmdLiteFile,
    out_dir: &Path,
    detector: &dyn Detector,
) -> Result<ArtifactManifest, AnalysisError> {
    if let Some(t) = HyperspectralTensor::from_file(file) {
        let t = t?;
        fs::create_dir_all(out_dir)?;
        return render_hyperspectral(&t, out_dir);
    }
    if let Some(t) = SpatiotemporalTensor::from_file(file) {
        let t = t?;
        fs::create_dir_all(out_dir)?;
        return render_spatiotemporal(&t, out_dir, detector);
    }
    Err(AnalysisError::UnrecognizedSignature)
}

/// Where `analyze_emdl` reads its input from.
pub trait InputSource {
    fn open(&self, path: &Path) -> io::Result<Box<dyn Read + '_>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FsInput;

impl InputSource for FsInput {
    fn open(&self, path: &Path) -> io::Result<Box<dyn Read + '_>> {
        Ok(Box::new(fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisOutput {
    pub manifest: ArtifactManifest,
    pub metadata: MetadataDocument,
}

/// The combined task: one read of the input, then metadata extraction and
/// artifact rendering from the same decoded file.
pub fn analyze_emdl(
    source: &dyn InputSource,
    input: &Path,
    out_dir: &Path,
) -> Result<AnalysisOutput, AnalysisError> {
    let mut bytes = Vec::new();
    source.open(input)?.read_to_end(&mut bytes)?;
    let file = emdlite::decode(&bytes)?;
    drop(bytes);
    let metadata = emdlite::extract_metadata(&file);
    let manifest = render_artifacts(&file, out_dir)?;
    Ok(AnalysisOutput { manifest, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emdlite::{AxisKind, Dataset, ExperimentMetadata};
    use std::cell::Cell;

    fn hyperspectral_file(w: u64, h: u64, e: u64, with_energies: bool) -> EmdLiteFile {
        let n = (w * h * e) as usize;
        let values: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let mut datasets = vec![Dataset::from_f64("cube", vec![w, h, e], AxisKind::HYPERSPECTRAL.to_vec(), &values).unwrap()];
        if with_energies {
            let energies: Vec<f64> = (0..e).map(|i| 100.0 * i as f64).collect();
            datasets.push(Dataset::from_f64("energy", vec![e], vec![AxisKind::Energy], &energies).unwrap());
        }
        EmdLiteFile {
            metadata: ExperimentMetadata::example("2023-05-01T10:00:00Z"),
            datasets,
        }
    }

    fn spatiotemporal_file(t: u64) -> EmdLiteFile {
        let (h, w) = (16u64, 16u64);
        let mut values = vec![0.0; (t * h * w) as usize];
        for f in 0..t as usize {
            for y in 4..8 {
                for x in 4..8 {
                    values[(f * 16 + y) * 16 + x] = 1.0;
                }
            }
        }
        EmdLiteFile {
            metadata: ExperimentMetadata::example("2023-05-01T10:00:00Z"),
            datasets: vec![Dataset::from_f64("frames", vec![t, h, w], AxisKind::SPATIOTEMPORAL.to_vec(), &values).unwrap()],
        }
    }

    #[test]
    fn hyperspectral_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = render_artifacts(&hyperspectral_file(4, 4, 8, false), dir.path()).unwrap();
        assert_eq!(m.paths(), vec!["intensity.pgm", "spectrum.csv"]);
        let pgm = fs::read(dir.path().join("intensity.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), 11 + 16);
    }

    #[test]
    fn spectrum_rows_match_channels() {
        let dir = tempfile::tempdir().unwrap();
        for (e, energies) in [(1u64, false), (5, true), (13, false), (32, true)] {
            render_artifacts(&hyperspectral_file(2, 3, e, energies), dir.path()).unwrap();
            let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
            assert_eq!(csv.lines().count() as u64, e + 1);
            assert!(!csv.contains('\r'));
            let header = csv.lines().next().unwrap();
            if energies {
                assert_eq!(header, "channel_index,energy_eV,counts");
            } else {
                assert_eq!(header, "channel_index,counts");
            }
        }
    }

    #[test]
    fn spatiotemporal_manifest_and_outlines() {
        let dir = tempfile::tempdir().unwrap();
        let m = render_artifacts(&spatiotemporal_file(3), dir.path()).unwrap();
        assert_eq!(
            m.paths(),
            vec!["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm", "detections.json"]
        );
        let boxes: Vec<DetectionBox> =
            serde_json::from_slice(&fs::read(dir.path().join("detections.json")).unwrap()).unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes.iter().map(|b| b.frame_index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(boxes.iter().all(|b| (b.x, b.y, b.w, b.h) == (4, 4, 4, 4)));
        let frame = fs::read(dir.path().join("frame_0001.pgm")).unwrap();
        let pixels = &frame[frame.len() - 256..];
        assert_eq!(pixels[4 * 16 + 4], 255);
        assert_eq!(pixels[0], 0);
    }

    #[test]
    fn unrecognized_signature() {
        let dir = tempfile::tempdir().unwrap();
        let file = EmdLiteFile {
            metadata: ExperimentMetadata::example("2023-05-01T10:00:00Z"),
            datasets: vec![Dataset::from_u8("odd", vec![2, 2], vec![AxisKind::Height, AxisKind::Width], vec![0; 4]).unwrap()],
        };
        let err = render_artifacts(&file, dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized axis signature");
    }

    #[test]
    fn render_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let file = spatiotemporal_file(2);
        let ma = render_artifacts(&file, a.path()).unwrap();
        let mb = render_artifacts(&file, b.path()).unwrap();
        assert_eq!(ma, mb);
        for p in ma.paths() {
            assert_eq!(fs::read(a.path().join(p)).unwrap(), fs::read(b.path().join(p)).unwrap());
        }
    }

    #[test]
    fn manifest_helpers() {
        let mut m = ArtifactManifest::default();
        m.push(ArtifactKind::Spectrum, "spectrum.csv");
        let r = m.rebase("results/abc/");
        assert_eq!(r.paths(), vec!["results/abc/spectrum.csv"]);
        assert_eq!(r.find_by_name("spectrum.csv").unwrap().kind, ArtifactKind::Spectrum);
        assert!(r.find_by_name("abc").is_none());
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"[{"kind":"spectrum","path":"spectrum.csv"}]"#);
    }

    struct CountingInput<'a> {
        bytes: Vec<u8>,
        opens: &'a Cell<usize>,
    }

    impl InputSource for CountingInput<'_> {
        fn open(&self, _: &Path) -> io::Result<Box<dyn Read + '_>> {
            self.opens.set(self.opens.get() + 1);
            Ok(Box::new(io::Cursor::new(self.bytes.clone())))
        }
    }

    #[test]
    fn analyze_reads_input_once() {
        let dir = tempfile::tempdir().unwrap();
        let opens = Cell::new(0);
        let source = CountingInput {
            bytes: emdlite::encode(&hyperspectral_file(3, 3, 4, true)).unwrap(),
            opens: &opens,
        };
        let out = analyze_emdl(&source, Path::new("x.emdl"), dir.path()).unwrap();
        assert_eq!(opens.get(), 1);
        assert_eq!(out.manifest.paths(), vec!["intensity.pgm", "spectrum.csv"]);
        assert_eq!(out.metadata.datasets.len(), 2);
    }

    #[test]
    fn analyze_truncated_is_corrupt_input() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = emdlite::encode(&hyperspectral_file(3, 3, 4, false)).unwrap();
        let opens = Cell::new(0);
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let source = CountingInput {
                bytes: bytes[..cut].to_vec(),
                opens: &opens,
            };
            let err = analyze_emdl(&source, Path::new("x.emdl"), dir.path()).unwrap_err();
            assert!(err.to_string().starts_with("corrupt input"), "{err}");
        }
    }
}
