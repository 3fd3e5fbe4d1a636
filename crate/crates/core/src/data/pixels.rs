use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pixels {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Pixels {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(Pixels {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Pixels {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f32 {
        self.data[(y as usize * self.width as usize + x as usize) * 3 + c]
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Pixels {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width, self.height, raw).expect("buffer size checked")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped to the
    /// inclusive pixel window `[x_lo, x_hi] x [y_lo, y_hi]`.
    pub(crate) fn sample_clamped(
        &self,
        x: f64,
        y: f64,
        window: (u32, u32, u32, u32),
    ) -> [f32; 3] {
        let (x_lo, y_lo, x_hi, y_hi) = window;
        let x = x.clamp(f64::from(x_lo), f64::from(x_hi));
        let y = y.clamp(f64::from(y_lo), f64::from(y_hi));
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(x_hi);
        let y1 = (y0 + 1).min(y_hi);
        let fx = (x - f64::from(x0)) as f32;
        let fy = (y - f64::from(y0)) as f32;
        let mut out = [0.0f32; 3];
        let (a, b, c, d) = (self.rgb(x0, y0), self.rgb(x1, y0), self.rgb(x0, y1), self.rgb(x1, y1));
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bottom = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = top + (bottom - top) * fy;
        }
        out
    }

    /// Resamples the continuous region starting at `(x0, y0)` with extent
    /// `w x h` into an `out_w x out_h` image. Sample positions are clamped to
    /// `window`, which replicates its border pixels outside of it. When
    /// shrinking, each output pixel averages a grid of bilinear samples.
    pub(crate) fn resample_region(
        &self,
        region: (f64, f64, f64, f64),
        out_w: u32,
        out_h: u32,
        window: (u32, u32, u32, u32),
    ) -> Pixels {
        let (x0, y0, w, h) = region;
        let sx = w / f64::from(out_w);
        let sy = h / f64::from(out_h);
        let kx = sx.ceil().max(1.0) as u32;
        let ky = sy.ceil().max(1.0) as u32;
        let norm = 1.0 / (kx * ky) as f32;
        let mut data = Vec::with_capacity(out_w as usize * out_h as usize * 3);
        for j in 0..out_h {
            for i in 0..out_w {
                let mut acc = [0.0f32; 3];
                for b in 0..ky {
                    let y = y0 + (f64::from(j) + (f64::from(b) + 0.5) / f64::from(ky)) * sy - 0.5;
                    for a in 0..kx {
                        let x =
                            x0 + (f64::from(i) + (f64::from(a) + 0.5) / f64::from(kx)) * sx - 0.5;
                        let v = self.sample_clamped(x, y, window);
                        acc[0] += v[0];
                        acc[1] += v[1];
                        acc[2] += v[2];
                    }
                }
                data.extend(acc.iter().map(|v| v * norm));
            }
        }
        Pixels {
            width: out_w,
            height: out_h,
            data,
        }
    }

    /// Resamples the whole image to `width x height`.
    pub fn resize(&self, width: u32, height: u32) -> Pixels {
        self.resample_region(
            (0.0, 0.0, f64::from(self.width), f64::from(self.height)),
            width,
            height,
            (0, 0, self.width - 1, self.height - 1),
        )
    }
}
