use super::{Pixels, Roi};
use crate::error::{Error, Result};

/// Default classifier input edge.
pub const DEFAULT_CROP_SIDE: u32 = 224;

/// Cuts the ROI out of `image` as a `side x side` RGB patch.
///
/// The tight box is grown to a square of edge `max(width, height)` around the
/// ROI center. Parts of the square outside the image replicate the nearest
/// in-bounds pixel, then the square is resampled to `side x side`.
pub fn extract_crop(image: &Pixels, roi: &Roi, side: u32) -> Result<Pixels> {
    roi.validate()?;
    if side == 0 {
        return Err(Error::InvalidInput("crop side must be positive".into()));
    }
    let edge = roi.width.max(roi.height);
    let sx0 = roi.x_center - edge / 2.0;
    let sy0 = roi.y_center - edge / 2.0;

    let (w, h) = (f64::from(image.width()), f64::from(image.height()));
    let ix0 = sx0.max(0.0);
    let iy0 = sy0.max(0.0);
    let ix1 = (sx0 + edge).min(w);
    let iy1 = (sy0 + edge).min(h);
    if ix1 <= ix0 || iy1 <= iy0 {
        return Err(Error::EmptyIntersection);
    }
    // Pixels overlapping the clamped square.
    let window = (
        ix0.floor() as u32,
        iy0.floor() as u32,
        (ix1.ceil() as u32 - 1).min(image.width() - 1),
        (iy1.ceil() as u32 - 1).min(image.height() - 1),
    );
    Ok(image.resample_region((sx0, sy0, edge, edge), side, side, window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: u32, height: u32) -> Pixels {
        let mut data = Vec::new();
        for y in 0..height {
            for x in 0..width {
                data.extend([x as f32 / width as f32, y as f32 / height as f32, 0.5]);
            }
        }
        Pixels::new(width, height, data).unwrap()
    }

    #[test]
    fn inside_square_crop_is_plain_resample() {
        let img = gradient(100, 100);
        let roi = Roi::new(50.0, 50.0, 20.0, 20.0);
        let crop = extract_crop(&img, &roi, 20).unwrap();
        assert_eq!((crop.width(), crop.height()), (20, 20));
        // 1:1 scale reproduces the source pixels exactly.
        for j in 0..20 {
            for i in 0..20 {
                assert_eq!(crop.rgb(i, j), img.rgb(40 + i, 40 + j));
            }
        }
    }

    #[test]
    fn corner_crop_replicates_edges() {
        let img = gradient(100, 100);
        // Square [-5, 15]^2 clamps to [0, 15]^2.
        let roi = Roi::new(5.0, 5.0, 20.0, 20.0);
        let crop = extract_crop(&img, &roi, 20).unwrap();
        for j in 0..20u32 {
            for i in 0..20u32 {
                let sx = (i as i64 - 5).clamp(0, 14) as u32;
                let sy = (j as i64 - 5).clamp(0, 14) as u32;
                assert_eq!(crop.rgb(i, j), img.rgb(sx, sy), "at {i},{j}");
            }
        }
    }

    #[test]
    fn output_shape_is_fixed_for_any_aspect() {
        let img = gradient(64, 48);
        for (w, h) in [(3.0, 40.0), (60.0, 2.0), (10.0, 10.0), (200.0, 200.0)] {
            let crop = extract_crop(&img, &Roi::new(30.0, 20.0, w, h), 17).unwrap();
            assert_eq!((crop.width(), crop.height()), (17, 17));
            assert_eq!(crop.data().len(), 17 * 17 * 3);
        }
    }

    #[test]
    fn outside_roi_is_error() {
        let img = gradient(10, 10);
        let roi = Roi::new(30.0, 30.0, 4.0, 4.0);
        assert!(matches!(extract_crop(&img, &roi, 8), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn deterministic() {
        let img = gradient(50, 70);
        let roi = Roi::new(13.3, 41.7, 17.2, 9.1);
        assert_eq!(
            extract_crop(&img, &roi, 33).unwrap(),
            extract_crop(&img, &roi, 33).unwrap()
        );
    }
}
