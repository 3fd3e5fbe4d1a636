//! Hand-built per-cell features for the grid detector.
//!
//! The image is reduced to a stride-4 grid of cells. Each cell carries its
//! color deviation from the image's median (skin) color, the magnitude of
//! that deviation, a darkness score and a local texture measure. A cell's
//! feature vector adds box-smoothed neighbourhoods, rays of the deviation
//! magnitude in the four axis directions, run lengths of "lesion-like" cells
//! and its position in the frame.

use crate::data::Pixels;

pub const STRIDE: u32 = 4;
const CHANNELS: usize = 6;
const DIST: usize = 3;
const SMOOTH_RADII: [usize; 3] = [1, 2, 4];
const RAY_OFFSETS: [i64; 11] = [1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 20];
const DIRECTIONS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const RUN_CAP: usize = 32;
const ABS_THRESHOLD: f32 = 0.1;

pub const FEATURE_DIM: usize =
    CHANNELS * (1 + SMOOTH_RADII.len()) + DIRECTIONS.len() * RAY_OFFSETS.len() + 2 * DIRECTIONS.len() + 4;

/// Cell-level summary of one image.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub cols: usize,
    pub rows: usize,
    pub width: u32,
    pub height: u32,
    base: Vec<[f32; CHANNELS]>,
    integral: Vec<[f64; CHANNELS]>,
    /// Deviation magnitude smoothed over a 3x3 cell window.
    dist: Vec<f32>,
}

fn median(values: &mut [f32]) -> f32 {
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, f32::total_cmp).1
}

impl CellGrid {
    pub fn new(image: &Pixels) -> Self {
        let (w, h) = (image.width(), image.height());
        let n = (w * h) as usize;
        let mut skin = [0.0f32; 3];
        let mut scratch = vec![0.0f32; n];
        for (c, s) in skin.iter_mut().enumerate() {
            for (i, v) in scratch.iter_mut().enumerate() {
                *v = image.data()[i * 3 + c];
            }
            *s = median(&mut scratch);
        }

        let cols = w.div_ceil(STRIDE) as usize;
        let rows = h.div_ceil(STRIDE) as usize;
        let mut base = vec![[0.0f32; CHANNELS]; cols * rows];
        for row in 0..rows {
            for col in 0..cols {
                let x0 = col as u32 * STRIDE;
                let y0 = row as u32 * STRIDE;
                let (mut acc, mut count) = ([0.0f32; 5], 0.0f32);
                let mut lums = [0.0f32; (STRIDE * STRIDE) as usize];
                for y in y0..(y0 + STRIDE).min(h) {
                    for x in x0..(x0 + STRIDE).min(w) {
                        let p = image.rgb(x, y);
                        let d = [p[0] - skin[0], p[1] - skin[1], p[2] - skin[2]];
                        acc[0] += d[0];
                        acc[1] += d[1];
                        acc[2] += d[2];
                        acc[3] += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                        acc[4] -= (d[0] + d[1] + d[2]) / 3.0;
                        lums[count as usize] = (p[0] + p[1] + p[2]) / 3.0;
                        count += 1.0;
                    }
                }
                let cell = &mut base[row * cols + col];
                for k in 0..5 {
                    cell[k] = acc[k] / count;
                }
                let lums = &lums[..count as usize];
                let mean = lums.iter().sum::<f32>() / count;
                cell[5] = (lums.iter().map(|l| (l - mean) * (l - mean)).sum::<f32>() / count).sqrt();
            }
        }

        let mut integral = vec![[0.0f64; CHANNELS]; (cols + 1) * (rows + 1)];
        for row in 0..rows {
            for col in 0..cols {
                let mut v = [0.0f64; CHANNELS];
                for k in 0..CHANNELS {
                    v[k] = f64::from(base[row * cols + col][k])
                        + integral[row * (cols + 1) + col + 1][k]
                        + integral[(row + 1) * (cols + 1) + col][k]
                        - integral[row * (cols + 1) + col][k];
                }
                integral[(row + 1) * (cols + 1) + col + 1] = v;
            }
        }

        let mut grid = CellGrid {
            cols,
            rows,
            width: w,
            height: h,
            base,
            integral,
            dist: Vec::new(),
        };
        grid.dist = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c, r)))
            .map(|(c, r)| grid.box_mean(c, r, 1)[DIST])
            .collect();
        grid
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel coordinates of a cell's center (the anchor position).
    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        let half = f64::from(STRIDE) / 2.0;
        (
            col as f64 * f64::from(STRIDE) + half,
            row as f64 * f64::from(STRIDE) + half,
        )
    }

    /// Mean of each channel over the `(2r+1)^2` window, clipped to the grid.
    fn box_mean(&self, col: usize, row: usize, r: usize) -> [f32; CHANNELS] {
        let c0 = col.saturating_sub(r);
        let r0 = row.saturating_sub(r);
        let c1 = (col + r + 1).min(self.cols);
        let r1 = (row + r + 1).min(self.rows);
        let stride = self.cols + 1;
        let area = ((c1 - c0) * (r1 - r0)) as f64;
        let mut out = [0.0f32; CHANNELS];
        for (k, o) in out.iter_mut().enumerate() {
            let s = self.integral[r1 * stride + c1][k] - self.integral[r0 * stride + c1][k]
                - self.integral[r1 * stride + c0][k]
                + self.integral[r0 * stride + c0][k];
            *o = (s / area) as f32;
        }
        out
    }

    fn dist_at(&self, col: i64, row: i64) -> Option<f32> {
        if col < 0 || row < 0 || col >= self.cols as i64 || row >= self.rows as i64 {
            return None;
        }
        Some(self.dist[row as usize * self.cols + col as usize])
    }

    fn run_length(&self, col: usize, row: usize, dir: (i64, i64), threshold: f32) -> f32 {
        let mut k = 0;
        while k < RUN_CAP {
            let c = col as i64 + dir.0 * (k as i64 + 1);
            let r = row as i64 + dir.1 * (k as i64 + 1);
            match self.dist_at(c, r) {
                Some(v) if v >= threshold => k += 1,
                _ => break,
            }
        }
        k as f32 / 16.0
    }

    /// Writes the raw (unstandardized) feature vector of a cell into `out`.
    pub fn features(&self, col: usize, row: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), FEATURE_DIM);
        let mut i = 0;
        let mut push = |v: f32| {
            out[i] = v;
            i += 1;
        };
        for v in self.base[row * self.cols + col] {
            push(v);
        }
        for r in SMOOTH_RADII {
            for v in self.box_mean(col, row, r) {
                push(v);
            }
        }
        for dir in DIRECTIONS {
            for off in RAY_OFFSETS {
                let v = self.dist_at(col as i64 + dir.0 * off, row as i64 + dir.1 * off);
                push(v.unwrap_or(0.0));
            }
        }
        let here = self.dist[row * self.cols + col];
        for dir in DIRECTIONS {
            push(self.run_length(col, row, dir, 0.5 * here));
            push(self.run_length(col, row, dir, ABS_THRESHOLD));
        }
        let (cx, cy) = self.center(col, row);
        push((cx / f64::from(self.width)) as f32);
        push((cy / f64::from(self.height)) as f32);
        push(self.cols as f32 / 48.0);
        push(self.rows as f32 / 48.0);
    }
}
