//! Raster containers and the classic image kernels the pipeline relies on.
//!
//! All kernels are pure functions over borrowed rasters. Convolutions use
//! clamp-to-edge replication at the borders.

mod components;
mod filters;
mod kmeans;
mod watershed;

pub use components::{connected_components, Components, Connectivity};
pub use filters::{gaussian_kernel, gaussian_smooth, sobel_edges, structural_edges};
pub use kmeans::{kmeans_colors, within_cluster_ss, KMeansResult};
pub use watershed::watershed;

use crate::error::{Error, Result};

/// Dense row-major pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit grayscale ink image: 0 is a black stroke, 255 the white page.
pub type GrayImage = Raster<u8>;
/// 8-bit interleaved RGB.
pub type RgbImage = Raster<u8>;
/// Single-channel label raster; 0 is background.
pub type LabelMap = Raster<u32>;
/// Single-channel floating raster.
pub type FloatImage = Raster<f64>;

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("raster must have at least one channel"));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(format!(
                "raster data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Sample of a single-channel raster.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[(y * self.width + x) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = (y * self.width + x) * self.channels;
        self.data[i] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Clamp-to-edge access for signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn require_single_channel(&self, what: &str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "{what} expects a single-channel raster, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }
}

impl Raster<u8> {
    /// Rec. 601 luma of an RGB image; single-channel input is returned as is.
    pub fn to_gray(&self) -> GrayImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| {
                let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                l.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let p = self.pixel(x, y);
        if p.len() >= 3 {
            [p[0], p[1], p[2]]
        } else {
            [p[0], p[0], p[0]]
        }
    }
}

/// Per-pixel edge magnitude, non-negative everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, magnitude: Vec<f64>) -> Result<Self> {
        if magnitude.len() != width * height {
            return Err(Error::dims(format!(
                "edge map length {} != {}x{}",
                magnitude.len(),
                width,
                height
            )));
        }
        if let Some(v) = magnitude.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!("edge magnitude must be >= 0, got {v}")));
        }
        Ok(Self {
            width,
            height,
            magnitude,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            magnitude: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    /// Value below which `q` of the nonzero magnitudes fall (nearest rank).
    /// Returns 0 when there are no nonzero magnitudes.
    pub fn nonzero_percentile(&self, q: f64) -> f64 {
        let mut nz: Vec<f64> = self.magnitude.iter().copied().filter(|&v| v > 0.0).collect();
        if nz.is_empty() {
            return 0.0;
        }
        nz.sort_by(f64::total_cmp);
        let rank = ((q.clamp(0.0, 1.0) * nz.len() as f64).ceil() as usize).clamp(1, nz.len());
        nz[rank - 1]
    }
}

/// Euclidean distance between two RGB triples.
#[inline]
pub fn rgb_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length() {
        assert!(Raster::new(3, 3, 1, vec![0u8; 8]).is_err());
        assert!(Raster::new(3, 3, 3, vec![0u8; 27]).is_ok());
    }

    #[test]
    fn gray_conversion() {
        let img = Raster::new(2, 1, 3, vec![255u8, 255, 255, 0, 0, 0]).unwrap();
        assert_eq!(img.to_gray().data(), &[255, 0]);
    }

    #[test]
    fn percentile_ignores_zeros() {
        let e = EdgeMap::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.nonzero_percentile(0.5), 2.0);
        assert_eq!(e.nonzero_percentile(1.0), 4.0);
        assert_eq!(EdgeMap::zeros(2, 2).nonzero_percentile(0.6), 0.0);
    }

    #[test]
    fn edge_map_rejects_negative() {
        assert!(EdgeMap::new(1, 1, vec![-1.0]).is_err());
    }
}
