//! Deterministic synthetic EMD-lite inputs.
//!
//! Spatiotemporal files carry bright discs that random-walk over a noisy
//! background; hyperspectral files carry Gaussian emission peaks whose
//! strength varies across the field of view. The same config always yields
//! the same bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::DetectionBox;
use crate::emdlite::{AxisKind, Dataset, EmdError, EmdLiteFile, ExperimentMetadata};

pub const DEFAULT_DATETIME: &str = "2023-01-01T00:00:00Z";
pub const DEFAULT_BLOBS: usize = 8;

const BACKGROUND: f64 = 30.0;
const BLOB_LEVEL: f64 = 200.0;
const NOISE_SIGMA: f64 = 6.0;
/// Minimum free pixels between two disc edges, enough that 8-connectivity
/// never joins them.
const BLOB_GAP: i64 = 3;
const EV_PER_CHANNEL: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Hyperspectral,
    Spatiotemporal,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hyperspectral" => Ok(SynthKind::Hyperspectral),
            "spatiotemporal" => Ok(SynthKind::Spatiotemporal),
            other => Err(format!("unknown kind {other:?} (expected hyperspectral or spatiotemporal)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub kind: SynthKind,
    /// `W,H,E` for hyperspectral, `T,H,W` for spatiotemporal.
    pub shape: [usize; 3],
    pub seed: u64,
    pub blobs: usize,
    pub acquisition_datetime: String,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, shape: [usize; 3], seed: u64) -> Self {
        Self {
            kind,
            shape,
            seed,
            blobs: DEFAULT_BLOBS,
            acquisition_datetime: DEFAULT_DATETIME.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("cannot place {0} separated blobs in the frame")]
    Crowded(usize),
    #[error(transparent)]
    Encode(#[from] EmdError),
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub file: EmdLiteFile,
    /// Tight boxes of the planted discs, per frame. Empty for hyperspectral.
    pub ground_truth: Vec<Vec<DetectionBox>>,
}

pub fn synthesize(config: &SynthConfig) -> Result<Synthesis, SynthError> {
    if config.shape.contains(&0) {
        return Err(SynthError::Shape(format!("{:?} has a zero dimension", config.shape)));
    }
    let mut metadata = ExperimentMetadata::example(&config.acquisition_datetime);
    metadata
        .validate()
        .map_err(|e| SynthError::Shape(format!("metadata: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.kind {
        SynthKind::Hyperspectral => {
            metadata.sample.description = "synthetic hyperspectral map".into();
            metadata.sample.elements = vec!["Au".into(), "Cu".into(), "O".into()];
            hyperspectral(config.shape, metadata, &mut rng)
        }
        SynthKind::Spatiotemporal => {
            metadata.sample.description = "synthetic moving nanoparticles".into();
            metadata.sample.elements = vec!["Au".into()];
            spatiotemporal(config.shape, config.blobs, metadata, &mut rng)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    cx: i64,
    cy: i64,
    r: i64,
}

impl Disc {
    fn fits(&self, w: i64, h: i64) -> bool {
        self.cx - self.r >= 0 && self.cy - self.r >= 0 && self.cx + self.r < w && self.cy + self.r < h
    }

    fn clear_of(&self, other: &Disc) -> bool {
        // Chebyshev distance between bounding boxes keeps the discs apart
        // under 8-connectivity, not just Euclidean separation.
        let gap_x = (self.cx - other.cx).abs() - self.r - other.r - 1;
        let gap_y = (self.cy - other.cy).abs() - self.r - other.r - 1;
        gap_x.max(gap_y) >= BLOB_GAP
    }

    fn contains(&self, x: i64, y: i64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.r * self.r
    }

    fn tight_box(&self, frame_index: usize) -> DetectionBox {
        DetectionBox {
            frame_index,
            x: (self.cx - self.r) as u32,
            y: (self.cy - self.r) as u32,
            w: (2 * self.r + 1) as u32,
            h: (2 * self.r + 1) as u32,
            confidence: 1.0,
        }
    }
}

fn spatiotemporal(
    [t, h, w]: [usize; 3],
    k: usize,
    metadata: ExperimentMetadata,
    rng: &mut ChaCha8Rng,
) -> Result<Synthesis, SynthError> {
    let (wi, hi) = (w as i64, h as i64);
    let r_max = (w.min(h) as i64 / 24).clamp(3, 8);
    let mut discs: Vec<Disc> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut placed = false;
        for _attempt in 0..10_000 {
            let r = rng.random_range(3..=r_max);
            if wi <= 2 * r || hi <= 2 * r {
                break;
            }
            let d = Disc {
                cx: rng.random_range(r..wi - r),
                cy: rng.random_range(r..hi - r),
                r,
            };
            if d.fits(wi, hi) && discs.iter().all(|o| d.clear_of(o)) {
                discs.push(d);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::Crowded(k));
        }
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("finite sigma");
    let mut data = Vec::with_capacity(t * h * w);
    let mut truth = Vec::with_capacity(t);
    for frame in 0..t {
        if frame > 0 {
            for i in 0..discs.len() {
                let step = Disc {
                    cx: discs[i].cx + rng.random_range(-1..=1),
                    cy: discs[i].cy + rng.random_range(-1..=1),
                    ..discs[i]
                };
                let ok = step.fits(wi, hi)
                    && discs.iter().enumerate().all(|(j, o)| j == i || step.clear_of(o));
                if ok {
                    discs[i] = step;
                }
            }
        }
        let mut level = vec![BACKGROUND; h * w];
        for d in &discs {
            for y in (d.cy - d.r)..=(d.cy + d.r) {
                for x in (d.cx - d.r)..=(d.cx + d.r) {
                    if d.contains(x, y) {
                        level[y as usize * w + x as usize] = BLOB_LEVEL;
                    }
                }
            }
        }
        data.extend(
            level
                .into_iter()
                .map(|base| (base + noise.sample(rng)).round().clamp(0.0, 255.0) as u8),
        );
        truth.push(discs.iter().map(|d| d.tight_box(frame)).collect());
    }

    let ds = Dataset::from_u8(
        "frames",
        vec![t as u64, h as u64, w as u64],
        AxisKind::SPATIOTEMPORAL.to_vec(),
        data,
    )?;
    Ok(Synthesis {
        file: EmdLiteFile {
            metadata,
            datasets: vec![ds],
        },
        ground_truth: truth,
    })
}

/// Element lines in eV with relative strengths, chosen to land inside small
/// energy ranges as well as large ones.
const LINES: [(f64, f64); 3] = [(0.18, 1.0), (0.45, 0.6), (0.75, 0.35)];

fn hyperspectral(
    [w, h, e]: [usize; 3],
    metadata: ExperimentMetadata,
    rng: &mut ChaCha8Rng,
) -> Result<Synthesis, SynthError> {
    let span = e as f64 * EV_PER_CHANNEL;
    let sigma = (span * 0.015).max(EV_PER_CHANNEL);
    let energies: Vec<f64> = (0..e).map(|i| i as f64 * EV_PER_CHANNEL).collect();

    // Each line gets its own spatial hot spot so the intensity map has texture.
    let spots: Vec<(f64, f64, f64)> = LINES
        .iter()
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                (w.max(h) as f64 / 3.0).max(1.0),
            )
        })
        .collect();
    let profiles: Vec<Vec<f64>> = LINES
        .iter()
        .map(|&(frac, amp)| {
            let centre = frac * span;
            energies
                .iter()
                .map(|&ev| 100.0 * amp * (-0.5 * ((ev - centre) / sigma).powi(2)).exp())
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("finite sigma");
    let mut data = Vec::with_capacity(w * h * e);
    for x in 0..w {
        for y in 0..h {
            let weights: Vec<f64> = spots
                .iter()
                .map(|&(sx, sy, s)| {
                    let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
                    0.2 + (-0.5 * d2 / (s * s)).exp()
                })
                .collect();
            for c in 0..e {
                let mut v = 2.0;
                for (p, wgt) in profiles.iter().zip(&weights) {
                    v += p[c] * wgt;
                }
                data.push((v + v.sqrt() * noise.sample(rng)).max(0.0));
            }
        }
    }

    let cube = Dataset::from_f64(
        "spectrum_image",
        vec![w as u64, h as u64, e as u64],
        AxisKind::HYPERSPECTRAL.to_vec(),
        &data,
    )?;
    let axis = Dataset::from_f64("energy", vec![e as u64], vec![AxisKind::Energy], &energies)?;
    Ok(Synthesis {
        file: EmdLiteFile {
            metadata,
            datasets: vec![cube, axis],
        },
        ground_truth: Vec::new(),
    })
}

/// Parses `"a,b,c"` into a shape triple.
pub fn parse_shape(text: &str) -> Result<[usize; 3], SynthError> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| SynthError::Shape(format!("{text:?}: {e}")))?;
    <[usize; 3]>::try_from(parts)
        .map_err(|p| SynthError::Shape(format!("{text:?}: expected 3 dimensions, got {}", p.len())))
}
