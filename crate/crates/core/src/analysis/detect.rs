use serde::{Deserialize, Serialize};

use super::Frame;

/// Axis-aligned box in frame pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub frame_index: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

/// Intersection over union of two boxes; frame indices are ignored.
pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x)) as u64;
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y)) as u64;
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Polarity {
    #[default]
    BrightOnDark,
    DarkOnBright,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum ThresholdMethod {
    #[default]
    Otsu,
    /// Threshold at the `q`-quantile of pixel values, `q` in (0, 1).
    FixedQuantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub polarity: Polarity,
    pub min_area: u32,
    pub threshold_method: ThresholdMethod,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            polarity: Polarity::BrightOnDark,
            min_area: 4,
            threshold_method: ThresholdMethod::Otsu,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_area < 1 {
            return Err("min_area must be >= 1".into());
        }
        if let ThresholdMethod::FixedQuantile(q) = self.threshold_method {
            if !(q > 0.0 && q < 1.0) {
                return Err(format!("quantile {q} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Anything that turns a frame into boxes. The classical blob detector is the
/// default; a learned model can sit behind the same trait.
pub trait Detector: Send + Sync {
    fn detect(&self, frame_index: usize, frame: &Frame) -> Vec<DetectionBox>;
}

#[derive(Debug, Clone, Default)]
pub struct BlobDetector {
    pub params: DetectorParams,
}

impl Detector for BlobDetector {
    fn detect(&self, frame_index: usize, frame: &Frame) -> Vec<DetectionBox> {
        let mut boxes = detect_blobs(frame, &self.params);
        for b in &mut boxes {
            b.frame_index = frame_index;
        }
        boxes
    }
}

/// Otsu's threshold over a 256-bin histogram. Foreground is `v > t`. Returns
/// `None` when the image has a single gray level.
pub fn otsu_threshold(pixels: &[u8]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    let total = pixels.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<(u8, f64)> = None;
    let mut weight_bg = 0.0;
    let mut sum_bg = 0.0;
    for (t, &count) in hist.iter().enumerate() {
        weight_bg += count as f64;
        sum_bg += t as f64 * count as f64;
        let weight_fg = total - weight_bg;
        if weight_bg == 0.0 {
            continue;
        }
        if weight_fg == 0.0 {
            break;
        }
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg).powi(2);
        if best.is_none_or(|(_, v)| between > v) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

fn quantile_threshold(pixels: &[u8], q: f64) -> u8 {
    let mut sorted = pixels.to_vec();
    sorted.sort_unstable();
    let rank = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[rank]
}

struct Component {
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
    area: u64,
    intensity: u64,
}

/// Threshold, 8-connected labeling, area filter, tight boxes.
///
/// Boxes come back sorted by descending confidence, then by `y`, then by `x`.
/// `frame_index` is left at 0; [`BlobDetector`] fills it in.
pub fn detect_blobs(frame: &Frame, params: &DetectorParams) -> Vec<DetectionBox> {
    if frame.pixels.is_empty() {
        return Vec::new();
    }
    let values: Vec<u8> = match params.polarity {
        Polarity::BrightOnDark => frame.pixels.clone(),
        Polarity::DarkOnBright => frame.pixels.iter().map(|&p| 255 - p).collect(),
    };
    let threshold = match params.threshold_method {
        ThresholdMethod::Otsu => match otsu_threshold(&values) {
            Some(t) => t,
            None => return Vec::new(),
        },
        ThresholdMethod::FixedQuantile(q) => quantile_threshold(&values, q),
    };

    let (w, h) = (frame.width, frame.height);
    let mut visited = vec![false; values.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..values.len() {
        if visited[start] || values[start] <= threshold {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut c = Component {
            min_x: usize::MAX,
            min_y: usize::MAX,
            max_x: 0,
            max_y: 0,
            area: 0,
            intensity: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            c.min_x = c.min_x.min(x);
            c.max_x = c.max_x.max(x);
            c.min_y = c.min_y.min(y);
            c.max_y = c.max_y.max(y);
            c.area += 1;
            c.intensity += values[i] as u64;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !visited[j] && values[j] > threshold {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        components.push(c);
    }

    let t = threshold as f64;
    let mut boxes: Vec<DetectionBox> = components
        .into_iter()
        .filter(|c| c.area >= params.min_area as u64)
        .map(|c| {
            let mean = c.intensity as f64 / c.area as f64;
            DetectionBox {
                frame_index: 0,
                x: c.min_x as u32,
                y: c.min_y as u32,
                w: (c.max_x - c.min_x + 1) as u32,
                h: (c.max_y - c.min_y + 1) as u32,
                confidence: ((mean - t) / (255.0 - t)).clamp(0.0, 1.0),
            }
        })
        .collect();
    boxes.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> DetectionBox {
        DetectionBox {
            frame_index: 0,
            x,
            y,
            w,
            h,
            confidence: 1.0,
        }
    }

    fn frame_with_blocks(w: usize, h: usize, blocks: &[(usize, usize, usize, usize, u8)]) -> Frame {
        let mut f = Frame::new(w, h, vec![0; w * h]);
        for &(bx, by, bw, bh, v) in blocks {
            for y in by..by + bh {
                for x in bx..bx + bw {
                    f.set(x, y, v);
                }
            }
        }
        f
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(3, 4, 5, 6), &b(3, 4, 5, 6)), 1.0);
        assert_eq!(iou(&b(0, 0, 2, 2), &b(5, 5, 2, 2)), 0.0);
        assert_eq!(iou(&b(0, 0, 2, 2), &b(2, 0, 2, 2)), 0.0);
        assert!((iou(&b(0, 0, 2, 2), &b(1, 1, 2, 2)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_frame_has_no_boxes() {
        let f = Frame::new(16, 16, vec![0; 256]);
        assert!(detect_blobs(&f, &DetectorParams::default()).is_empty());
        let quantile = DetectorParams {
            threshold_method: ThresholdMethod::FixedQuantile(0.5),
            ..Default::default()
        };
        assert!(detect_blobs(&f, &quantile).is_empty());
    }

    #[test]
    fn uniform_frame_with_otsu_is_empty() {
        let f = Frame::new(8, 8, vec![200; 64]);
        assert!(detect_blobs(&f, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn single_block() {
        let f = frame_with_blocks(32, 32, &[(5, 5, 10, 10, 255)]);
        let params = DetectorParams {
            min_area: 4,
            ..Default::default()
        };
        let boxes = detect_blobs(&f, &params);
        assert_eq!(boxes, vec![b(5, 5, 10, 10)]);
    }

    #[test]
    fn two_blocks_exact_boxes() {
        let f = frame_with_blocks(40, 30, &[(2, 3, 6, 4, 255), (20, 10, 5, 9, 255)]);
        let boxes = detect_blobs(&f, &DetectorParams::default());
        assert_eq!(boxes.len(), 2);
        let truth = [b(2, 3, 6, 4), b(20, 10, 5, 9)];
        for t in &truth {
            assert!(boxes.iter().any(|d| iou(d, t) == 1.0));
        }
        assert_eq!(iou(&boxes[0], &boxes[1]), 0.0);
    }

    #[test]
    fn ordering_by_confidence_then_position() {
        let f = frame_with_blocks(40, 40, &[(30, 1, 3, 3, 255), (1, 30, 3, 3, 255), (10, 10, 3, 3, 120)]);
        let params = DetectorParams {
            threshold_method: ThresholdMethod::FixedQuantile(0.5),
            ..Default::default()
        };
        let boxes = detect_blobs(&f, &params);
        assert_eq!(boxes.len(), 3);
        assert_eq!((boxes[0].x, boxes[0].y), (30, 1));
        assert_eq!((boxes[1].x, boxes[1].y), (1, 30));
        assert_eq!((boxes[2].x, boxes[2].y), (10, 10));
        assert!(boxes[2].confidence < boxes[1].confidence);
    }

    #[test]
    fn min_area_filters_specks() {
        let f = frame_with_blocks(20, 20, &[(1, 1, 1, 1, 255), (10, 10, 3, 3, 255)]);
        let boxes = detect_blobs(&f, &DetectorParams::default());
        assert_eq!(boxes, vec![b(10, 10, 3, 3)]);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut f = Frame::new(6, 6, vec![0; 36]);
        for i in 0..4 {
            f.set(i + 1, i + 1, 255);
        }
        let boxes = detect_blobs(&f, &DetectorParams::default());
        assert_eq!(boxes, vec![b(1, 1, 4, 4)]);
    }

    #[test]
    fn dark_on_bright_inverts() {
        let mut f = frame_with_blocks(20, 20, &[(0, 0, 20, 20, 255)]);
        for y in 4..8 {
            for x in 6..9 {
                f.set(x, y, 0);
            }
        }
        let params = DetectorParams {
            polarity: Polarity::DarkOnBright,
            ..Default::default()
        };
        assert_eq!(detect_blobs(&f, &params), vec![b(6, 4, 3, 4)]);
        assert!(detect_blobs(&f, &DetectorParams::default()).len() <= 1);
    }

    #[test]
    fn params_validation() {
        assert!(DetectorParams::default().validate().is_ok());
        let bad = DetectorParams {
            min_area: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        for q in [0.0, 1.0, -0.5, f64::NAN] {
            let p = DetectorParams {
                threshold_method: ThresholdMethod::FixedQuantile(q),
                ..Default::default()
            };
            assert!(p.validate().is_err(), "{q}");
        }
    }

    fn arb_box() -> impl Strategy<Value = DetectionBox> {
        (0u32..50, 0u32..50, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn disjoint_blocks_recovered(seed_blocks in proptest::collection::vec((0usize..6, 0usize..6, 2usize..6, 2usize..6), 1..10)) {
            // lay blocks on a coarse 6x6 grid of 8-pixel cells so they never touch
            let mut cells = std::collections::BTreeMap::new();
            for (cx, cy, w, h) in seed_blocks {
                cells.insert((cx, cy), (w, h));
            }
            let blocks: Vec<_> = cells.iter().map(|(&(cx, cy), &(w, h))| (cx * 8 + 1, cy * 8 + 1, w, h, 255u8)).collect();
            let f = frame_with_blocks(48, 48, &blocks);
            let boxes = detect_blobs(&f, &DetectorParams::default());
            prop_assert_eq!(boxes.len(), blocks.len());
            for &(x, y, w, h, _) in &blocks {
                let truth = b(x as u32, y as u32, w as u32, h as u32);
                prop_assert!(boxes.iter().any(|d| iou(d, &truth) == 1.0));
            }
        }
    }
}
