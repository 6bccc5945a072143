//! Shared domain types: raster images, segmentation maps and their
//! range/shape conversions.
//!
//! Pixel values are real `[0, 1]` everywhere inside the pipeline; 8-bit
//! quantization happens only at file I/O boundaries. Model-facing tensors
//! use the `[-1, 1]` range (see [`ModelRangeImage`]).

use ndarray::{Array2, Array3};

use crate::error::{Result, SpicError};

/// Downscale factor between the full-resolution image and the coarse image.
pub const DOWNSCALE_FACTOR: usize = 4;

/// Number of color channels. The pipeline is RGB-only.
pub const CHANNELS: usize = 3;

/// Full-resolution RGB image, channel-first `[3, H, W]`, values in `[0, 1]`.
///
/// Sides must be divisible by [`DOWNSCALE_FACTOR`]; odd-sized inputs are
/// rejected rather than padded.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != CHANNELS {
            return Err(SpicError::InvalidImage(format!(
                "expected {CHANNELS} channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(SpicError::InvalidImage("empty image".into()));
        }
        if h % DOWNSCALE_FACTOR != 0 || w % DOWNSCALE_FACTOR != 0 {
            return Err(SpicError::NotDivisible {
                height: h,
                width: w,
                factor: DOWNSCALE_FACTOR,
            });
        }
        validate_unit_range(&data)?;
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Low-resolution RGB image produced by [`crate::encoder::downscale_average`];
/// dimensions are exactly the source dimensions divided by the factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseImage {
    data: Array3<f64>,
}

impl CoarseImage {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != CHANNELS {
            return Err(SpicError::InvalidImage(format!(
                "expected {CHANNELS} channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(SpicError::InvalidImage("empty coarse image".into()));
        }
        validate_unit_range(&data)?;
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Image (full or coarse) mapped to the model range `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRangeImage {
    data: Array3<f64>,
}

impl ModelRangeImage {
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Wraps raw model-space data without range checks; sampler outputs may
    /// overshoot `[-1, 1]` and are clipped by [`from_model_range`].
    pub fn from_raw(data: Array3<f64>) -> Self {
        Self { data }
    }
}

/// Per-pixel class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    labels: Array2<u8>,
    n_classes: u8,
}

impl SegmentationMap {
    pub fn new(labels: Array2<u8>, n_classes: u8) -> Result<Self> {
        if n_classes == 0 {
            return Err(SpicError::InvalidImage("n_classes must be positive".into()));
        }
        if labels.is_empty() {
            return Err(SpicError::InvalidImage("empty segmentation map".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(SpicError::LabelOutOfRange {
                label: bad,
                n_classes,
            });
        }
        Ok(Self { labels, n_classes })
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }

    pub fn width(&self) -> usize {
        self.labels.dim().1
    }

    pub fn n_classes(&self) -> u8 {
        self.n_classes
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }
}

/// One indicator plane per class, `[n_classes, H, W]`, exactly one 1 per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMap {
    planes: Array3<f64>,
}

impl OneHotMap {
    pub fn n_classes(&self) -> usize {
        self.planes.dim().0
    }

    pub fn planes(&self) -> &Array3<f64> {
        &self.planes
    }
}

fn validate_unit_range(data: &Array3<f64>) -> Result<()> {
    if let Some(&bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(SpicError::InvalidImage(format!(
            "pixel value {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Maps `[0, 1]` pixel values to the model range via `2v - 1`.
pub fn to_model_range(data: &Array3<f64>) -> Result<ModelRangeImage> {
    validate_unit_range(data)?;
    Ok(ModelRangeImage {
        data: data.mapv(|v| 2.0 * v - 1.0),
    })
}

/// Maps model-range values back to `[0, 1]` via `(v + 1) / 2`, clipping
/// sampler overshoot into range. Clipping is the contract, not an error.
pub fn from_model_range(m: &ModelRangeImage) -> Result<Image> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(SpicError::InvalidImage(
            "non-finite value in model-range image".into(),
        ));
    }
    Image::new(m.data.mapv(|v| ((v.clamp(-1.0, 1.0)) + 1.0) / 2.0))
}

/// Same as [`from_model_range`] but without the `Image` shape constraints,
/// for coarse-sized tensors.
pub fn from_model_range_coarse(m: &ModelRangeImage) -> Result<CoarseImage> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(SpicError::InvalidImage(
            "non-finite value in model-range image".into(),
        ));
    }
    CoarseImage::new(m.data.mapv(|v| ((v.clamp(-1.0, 1.0)) + 1.0) / 2.0))
}

/// Expands a segmentation map into indicator planes.
pub fn one_hot(s: &SegmentationMap) -> OneHotMap {
    let (h, w) = s.labels.dim();
    let n = s.n_classes as usize;
    let mut planes = Array3::<f64>::zeros((n, h, w));
    for ((y, x), &label) in s.labels.indexed_iter() {
        planes[[label as usize, y, x]] = 1.0;
    }
    OneHotMap { planes }
}

/// Recovers the segmentation map from indicator planes (argmax per pixel).
pub fn one_hot_argmax(m: &OneHotMap) -> Result<SegmentationMap> {
    let (n, h, w) = m.planes.dim();
    let mut labels = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_v = m.planes[[0, y, x]];
            for k in 1..n {
                let v = m.planes[[k, y, x]];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            labels[[y, x]] = best as u8;
        }
    }
    SegmentationMap::new(labels, n as u8)
}

/// Nearest-neighbor label resampling. Labels are categorical, so this is the
/// only legal resizing; the output label set is a subset of the input's.
pub fn resize_labels_nearest(s: &SegmentationMap, h: usize, w: usize) -> Result<SegmentationMap> {
    if h == 0 || w == 0 {
        return Err(SpicError::InvalidImage("target dims must be >= 1".into()));
    }
    let (sh, sw) = s.labels.dim();
    if (h, w) == (sh, sw) {
        return Ok(s.clone());
    }
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        let sy = nearest_source_index(y, h, sh);
        for x in 0..w {
            let sx = nearest_source_index(x, w, sw);
            out[[y, x]] = s.labels[[sy, sx]];
        }
    }
    SegmentationMap::new(out, s.n_classes)
}

/// Source index whose pixel center is nearest to the center of destination
/// pixel `d` when resampling a length-`src` axis to length `dst`.
pub(crate) fn nearest_source_index(d: usize, dst: usize, src: usize) -> usize {
    // dst center (d + 0.5)/dst mapped into source coordinates, then rounded
    // half-down so the rule is exhaustive at exact midpoints.
    let u = (d as f64 + 0.5) * (src as f64) / (dst as f64) - 0.5;
    let i = (u + 0.5).floor() as isize;
    i.clamp(0, src as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_image(rng: &mut ChaCha12Rng, h: usize, w: usize) -> Image {
        let data = Array3::from_shape_fn((3, h, w), |_| rng.gen::<f64>());
        Image::new(data).unwrap()
    }

    #[test]
    fn model_range_midpoint_maps_to_zero() {
        let data = Array3::from_elem((3, 4, 4), 0.5);
        let m = to_model_range(&data).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_range_endpoints() {
        let zero = Array3::from_elem((3, 4, 4), 0.0);
        let one = Array3::from_elem((3, 4, 4), 1.0);
        assert!(to_model_range(&zero).unwrap().data().iter().all(|&v| v == -1.0));
        assert!(to_model_range(&one).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn model_range_round_trip_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 8, 12);
        let back = from_model_range(&to_model_range(img.data()).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-12, "round trip drifted: {a} vs {b}");
        }
    }

    #[test]
    fn from_model_range_clips_overshoot() {
        let m = ModelRangeImage::from_raw(Array3::from_elem((3, 4, 4), 1.2));
        let img = from_model_range(&m).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
        let m = ModelRangeImage::from_raw(Array3::from_elem((3, 4, 4), -7.0));
        let img = from_model_range(&m).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn to_model_range_rejects_out_of_range() {
        let data = Array3::from_elem((3, 4, 4), 1.5);
        assert!(to_model_range(&data).is_err());
    }

    #[test]
    fn image_rejects_non_divisible_dims() {
        let data = Array3::from_elem((3, 5, 8), 0.3);
        assert!(matches!(
            Image::new(data),
            Err(SpicError::NotDivisible { .. })
        ));
    }

    #[test]
    fn one_hot_single_pixel() {
        let s = SegmentationMap::new(arr2(&[[2u8]]), 3).unwrap();
        let oh = one_hot(&s);
        assert_eq!(oh.planes().as_slice().unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_is_a_bijection() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n_c = rng.gen_range(2..=6) as u8;
            let labels = Array2::from_shape_fn((9, 13), |_| rng.gen_range(0..n_c));
            let s = SegmentationMap::new(labels, n_c).unwrap();
            let recovered = one_hot_argmax(&one_hot(&s)).unwrap();
            assert_eq!(recovered.labels(), s.labels());
        }
    }

    #[test]
    fn one_hot_planes_partition_unity() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let labels = Array2::from_shape_fn((6, 7), |_| rng.gen_range(0..4u8));
        let s = SegmentationMap::new(labels, 4).unwrap();
        let oh = one_hot(&s);
        let sums = oh.planes().sum_axis(ndarray::Axis(0));
        assert!(sums.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn segmentation_map_rejects_out_of_range_label() {
        let labels = arr2(&[[0u8, 3], [1, 2]]);
        assert!(matches!(
            SegmentationMap::new(labels, 3),
            Err(SpicError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn resize_labels_identity() {
        let labels = arr2(&[[0u8, 1], [2, 3]]);
        let s = SegmentationMap::new(labels, 4).unwrap();
        let r = resize_labels_nearest(&s, 2, 2).unwrap();
        assert_eq!(r.labels(), s.labels());
    }

    #[test]
    fn resize_labels_constant_any_size() {
        let s = SegmentationMap::new(Array2::from_elem((3, 5), 2u8), 4).unwrap();
        for (h, w) in [(1, 1), (2, 9), (10, 3)] {
            let r = resize_labels_nearest(&s, h, w).unwrap();
            assert!(r.labels().iter().all(|&l| l == 2));
        }
    }

    #[test]
    fn resize_labels_checkerboard_matches_enumerated_rule() {
        // 4x4 checkerboard of {0,1} down to 2x2; expected labels come from
        // evaluating the nearest-source-coordinate rule cell by cell.
        let labels = arr2(&[
            [0u8, 1, 0, 1],
            [1, 0, 1, 0],
            [0, 1, 0, 1],
            [1, 0, 1, 0],
        ]);
        let s = SegmentationMap::new(labels.clone(), 2).unwrap();
        let r = resize_labels_nearest(&s, 2, 2).unwrap();
        let mut expected = Array2::<u8>::zeros((2, 2));
        for y in 0..2 {
            for x in 0..2 {
                let sy = nearest_source_index(y, 2, 4);
                let sx = nearest_source_index(x, 2, 4);
                expected[[y, x]] = labels[[sy, sx]];
            }
        }
        assert_eq!(r.labels(), &expected);
    }

    #[test]
    fn resize_labels_never_invents_labels() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let labels = Array2::from_shape_fn((7, 9), |_| rng.gen_range(0..5u8) * 2 % 5);
            let s = SegmentationMap::new(labels, 5).unwrap();
            let present: std::collections::BTreeSet<u8> = s.labels().iter().copied().collect();
            let r = resize_labels_nearest(&s, 15, 4).unwrap();
            assert!(r.labels().iter().all(|l| present.contains(l)));
        }
    }
}
