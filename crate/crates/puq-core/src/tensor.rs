//! Dense image tensors, flattening conventions and patch tiling.
//!
//! Layout is row-major with the channel index fastest ("channel-last"):
//! element `(row, col, ch)` of an `h×w×c` image lives at
//! `(row * w + col) * c + ch`. Every module of this crate relies on that
//! ordering when moving between images and flat vectors.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("data length {got} does not match {h}x{w}x{c} = {expected}")]
    DataLength { h: usize, w: usize, c: usize, got: usize, expected: usize },
    #[error("patch {ph}x{pw} does not tile image {h}x{w}")]
    NonDivisible { h: usize, w: usize, ph: usize, pw: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero-sized dimension")]
    ZeroDim,
}

/// Flat vector in R^d; the common currency between samplers, bases and losses.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector {
    data: Vec<f64>,
}

impl FlatVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: alloc::vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl From<Vec<f64>> for FlatVector {
    fn from(data: Vec<f64>) -> Self {
        Self::new(data)
    }
}

impl core::ops::Index<usize> for FlatVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Dense `h×w×c` image, row-major, channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ShapeError::ZeroDim);
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ShapeError::DataLength { h: height, w: width, c: channels, got: data.len(), expected });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self, ShapeError> {
        Self::new(height, width, channels, alloc::vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total dimension d = h·w·c.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Flattens an image into a vector of length h·w·c. With the channel-last
/// layout this is the identity on the underlying storage.
pub fn flatten(image: &ImageTensor) -> FlatVector {
    FlatVector::new(image.data.clone())
}

/// Inverse of [`flatten`] for a given shape.
pub fn unflatten(v: &FlatVector, height: usize, width: usize, channels: usize) -> Result<ImageTensor, ShapeError> {
    ImageTensor::new(height, width, channels, v.as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    /// Non-overlapping tiles of the given size; they must tile the image exactly.
    Local,
    /// One patch spanning the whole image.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_h: usize,
    pub patch_w: usize,
    pub mode: PatchMode,
}

impl PatchSpec {
    pub fn local(patch_h: usize, patch_w: usize) -> Self {
        Self { patch_h, patch_w, mode: PatchMode::Local }
    }

    pub fn global() -> Self {
        Self { patch_h: 0, patch_w: 0, mode: PatchMode::Global }
    }

    /// Effective tile size for an image of the given extent.
    pub fn tile_size(&self, height: usize, width: usize) -> (usize, usize) {
        match self.mode {
            PatchMode::Local => (self.patch_h, self.patch_w),
            PatchMode::Global => (height, width),
        }
    }

    /// Tile grid `(rows, cols)` for an image of the given extent.
    pub fn tile_grid(&self, height: usize, width: usize) -> Result<(usize, usize), ShapeError> {
        let (ph, pw) = self.tile_size(height, width);
        if ph == 0 || pw == 0 {
            return Err(ShapeError::ZeroDim);
        }
        if height % ph != 0 || width % pw != 0 {
            return Err(ShapeError::NonDivisible { h: height, w: width, ph, pw });
        }
        Ok((height / ph, width / pw))
    }
}

/// Splits an image into flattened non-overlapping tiles, in row-major tile
/// order. [`reassemble`] inverts this exactly.
pub fn extract_patches(image: &ImageTensor, spec: &PatchSpec) -> Result<Vec<FlatVector>, ShapeError> {
    let (rows, cols) = spec.tile_grid(image.height, image.width)?;
    let (ph, pw) = spec.tile_size(image.height, image.width);
    let c = image.channels;
    let mut out = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        for tc in 0..cols {
            let mut patch = Vec::with_capacity(ph * pw * c);
            for r in 0..ph {
                let row = tr * ph + r;
                let start = (row * image.width + tc * pw) * c;
                patch.extend_from_slice(&image.data[start..start + pw * c]);
            }
            out.push(FlatVector::new(patch));
        }
    }
    Ok(out)
}

/// Rebuilds an image from tiles produced by [`extract_patches`].
pub fn reassemble(
    patches: &[FlatVector],
    height: usize,
    width: usize,
    channels: usize,
    spec: &PatchSpec,
) -> Result<ImageTensor, ShapeError> {
    let (rows, cols) = spec.tile_grid(height, width)?;
    let (ph, pw) = spec.tile_size(height, width);
    if patches.len() != rows * cols {
        return Err(ShapeError::DimMismatch { expected: rows * cols, got: patches.len() });
    }
    let mut image = ImageTensor::zeros(height, width, channels)?;
    for (t, patch) in patches.iter().enumerate() {
        if patch.dim() != ph * pw * channels {
            return Err(ShapeError::DimMismatch { expected: ph * pw * channels, got: patch.dim() });
        }
        let (tr, tc) = (t / cols, t % cols);
        for r in 0..ph {
            let row = tr * ph + r;
            let dst = (row * width + tc * pw) * channels;
            let src = r * pw * channels;
            image.data[dst..dst + pw * channels].copy_from_slice(&patch.as_slice()[src..src + pw * channels]);
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_is_identity_layout() {
        let img = ImageTensor::new(1, 1, 3, alloc::vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(flatten(&img).as_slice(), &[0.1, 0.2, 0.3]);

        let img = ImageTensor::new(2, 1, 1, alloc::vec![7.0, 9.0]).unwrap();
        assert_eq!(flatten(&img).as_slice(), &[7.0, 9.0]);
    }

    #[test]
    fn flatten_row_major() {
        // rows ((1,2),(3,4)) enumerate to (1,2,3,4)
        let img = ImageTensor::new(2, 2, 1, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten(&img).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(img.get(0, 1, 0), 2.0);
        assert_eq!(img.get(1, 0, 0), 3.0);
    }

    #[test]
    fn bad_data_length_rejected() {
        assert!(matches!(
            ImageTensor::new(2, 2, 1, alloc::vec![1.0; 5]),
            Err(ShapeError::DataLength { .. })
        ));
        assert!(matches!(ImageTensor::new(0, 2, 1, alloc::vec![]), Err(ShapeError::ZeroDim)));
    }

    #[test]
    fn unit_patches_enumerate_pixels() {
        let img = ImageTensor::new(2, 2, 1, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let patches = extract_patches(&img, &PatchSpec::local(1, 1)).unwrap();
        assert_eq!(patches.len(), 4);
        let flat: Vec<f64> = patches.iter().map(|p| p[0]).collect();
        assert_eq!(flat, alloc::vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn whole_image_patch_equals_flatten() {
        let img = ImageTensor::new(2, 2, 1, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let patches = extract_patches(&img, &PatchSpec::local(2, 2)).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0], flatten(&img));
        let global = extract_patches(&img, &PatchSpec::global()).unwrap();
        assert_eq!(global[0], flatten(&img));
    }

    #[test]
    fn patch_counts_and_dims() {
        let img = ImageTensor::zeros(4, 4, 3).unwrap();
        let patches = extract_patches(&img, &PatchSpec::local(2, 2)).unwrap();
        assert_eq!(patches.len(), 4);
        assert!(patches.iter().all(|p| p.dim() == 12));
    }

    #[test]
    fn non_divisible_patch_is_error() {
        let img = ImageTensor::zeros(4, 4, 1).unwrap();
        assert!(matches!(
            extract_patches(&img, &PatchSpec::local(3, 2)),
            Err(ShapeError::NonDivisible { .. })
        ));
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(h in 1usize..6, w in 1usize..6, c in 1usize..4,
                                       seed in any::<u64>()) {
            let n = h * w * c;
            let data: Vec<f64> = (0..n).map(|i| {
                let x = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(i as u64);
                (x % 1000) as f64 / 1000.0
            }).collect();
            let img = ImageTensor::new(h, w, c, data).unwrap();
            let back = unflatten(&flatten(&img), h, w, c).unwrap();
            prop_assert_eq!(img, back);
        }

        #[test]
        fn patch_partition_roundtrip(th in 1usize..4, tw in 1usize..4,
                                     rows in 1usize..4, cols in 1usize..4,
                                     c in 1usize..3, seed in any::<u64>()) {
            let (h, w) = (th * rows, tw * cols);
            let n = h * w * c;
            let data: Vec<f64> = (0..n).map(|i| {
                let x = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(i as u64);
                (x % 4096) as f64 / 4096.0
            }).collect();
            let img = ImageTensor::new(h, w, c, data).unwrap();
            let spec = PatchSpec::local(th, tw);
            let patches = extract_patches(&img, &spec).unwrap();
            let back = reassemble(&patches, h, w, c, &spec).unwrap();
            prop_assert_eq!(img, back);
        }
    }
}
