use super::{EdgeMap, FloatImage, Raster};
use crate::error::{Error, Result};

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_smooth<T>(img: &Raster<T>, sigma: f64) -> Result<FloatImage>
where
    T: Copy + Into<f64>,
{
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    img.require_single_channel("gaussian_smooth")?;
    let (w, h) = img.dims();
    if img.is_empty() {
        return Ok(Raster::filled(w, h, 1, 0.0));
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;

    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                acc += t * img.get_clamped(sx, y as isize).into();
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * horiz[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Raster::new(w, h, 1, out)
}

/// Gradient magnitude from the 3x3 Sobel pair, clamp-to-edge borders.
pub fn sobel_edges<T>(img: &Raster<T>) -> Result<EdgeMap>
where
    T: Copy + Into<f64>,
{
    img.require_single_channel("sobel_edges")?;
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!(
            "sobel needs at least a 3x3 image, got {w}x{h}"
        )));
    }
    let at = |x: isize, y: isize| -> f64 { img.get_clamped(x, y).into() };
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    EdgeMap::new(w, h, mag)
}

/// Gaussian smoothing followed by Sobel magnitude: the structural edge map
/// used for patch merging and watershed refinement.
pub fn structural_edges(img: &Raster<u8>, sigma: f64) -> Result<EdgeMap> {
    let smooth = gaussian_smooth(img, sigma)?;
    sobel_edges(&smooth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_oracle(img: &FloatImage, sigma: f64) -> Vec<f64> {
        // Full 2-D kernel evaluated directly, no separability.
        let taps = gaussian_kernel(sigma);
        let r = (taps.len() / 2) as isize;
        let (w, h) = img.dims();
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let k = taps[(dy + r) as usize] * taps[(dx + r) as usize];
                        acc += k * img.get_clamped(x + dx, y + dy);
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_stays_constant() {
        let img = Raster::filled(9, 7, 1, 128u8);
        let out = gaussian_smooth(&img, 1.5).unwrap();
        assert!(out.data().iter().all(|v| (v - 128.0).abs() < 1e-9));
    }

    #[test]
    fn impulse_center_is_max() {
        let mut img = Raster::filled(9, 9, 1, 0u8);
        img.set(4, 4, 255);
        let out = gaussian_smooth(&img, 1.0).unwrap();
        let center = out.get(4, 4);
        assert!(out.data().iter().all(|&v| v <= center));
    }

    #[test]
    fn ramp_matches_dense_convolution() {
        let img: FloatImage = Raster::from_fn(5, 5, |x, y| (x + 5 * y) as f64);
        let out = gaussian_smooth(&img, 0.8).unwrap();
        let oracle = dense_oracle(&img, 0.8);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn sigma_and_channels_validated() {
        let img = Raster::filled(4, 4, 1, 0u8);
        assert!(gaussian_smooth(&img, 0.0).is_err());
        assert!(gaussian_smooth(&img, -1.0).is_err());
        let rgb = Raster::filled(4, 4, 3, 0u8);
        assert!(gaussian_smooth(&rgb, 1.0).is_err());
        assert!(sobel_edges(&Raster::filled(2, 5, 1, 0u8)).is_err());
    }

    #[test]
    fn sobel_constant_is_zero() {
        let e = sobel_edges(&Raster::filled(6, 6, 1, 77u8)).unwrap();
        assert!(e.magnitude().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_vertical_step() {
        // Columns 0..4 are 0, columns 4..8 are 10.
        let img: FloatImage = Raster::from_fn(8, 6, |x, _| if x >= 4 { 10.0 } else { 0.0 });
        let e = sobel_edges(&img).unwrap();
        for y in 0..6 {
            assert_eq!(e.get(3, y), 40.0);
            assert_eq!(e.get(4, y), 40.0);
            assert_eq!(e.get(1, y), 0.0);
            assert_eq!(e.get(6, y), 0.0);
        }
        let max = e.magnitude().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 40.0);
    }

    #[test]
    fn sobel_horizontal_step_is_transpose() {
        let v: FloatImage = Raster::from_fn(8, 8, |x, _| if x >= 4 { 10.0 } else { 0.0 });
        let hz: FloatImage = Raster::from_fn(8, 8, |_, y| if y >= 4 { 10.0 } else { 0.0 });
        let ev = sobel_edges(&v).unwrap();
        let eh = sobel_edges(&hz).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(ev.get(x, y), eh.get(y, x));
            }
        }
    }

    #[test]
    fn interior_shift_equivariance() {
        let img: FloatImage =
            Raster::from_fn(16, 16, |x, y| (((x * 7 + y * 13) % 11) as f64) * 20.0);
        let shifted: FloatImage = Raster::from_fn(16, 16, |x, y| img.get_clamped(x as isize - 1, y as isize));
        let a = gaussian_smooth(&img, 1.0).unwrap();
        let b = gaussian_smooth(&shifted, 1.0).unwrap();
        let ea = sobel_edges(&a).unwrap();
        let eb = sobel_edges(&b).unwrap();
        // Kernel radius 3 plus Sobel radius 1 stays clear of the borders.
        for y in 5..11 {
            for x in 5..11 {
                assert!((a.get(x, y) - b.get(x + 1, y)).abs() < 1e-9);
                assert!((ea.get(x, y) - eb.get(x + 1, y)).abs() < 1e-9);
            }
        }
    }
}
