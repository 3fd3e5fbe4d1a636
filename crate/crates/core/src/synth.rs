//! Seeded synthetic dermatology images with exact lesion boxes and
//! label-correlated clinical covariates.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clinical::{write_covariates, CategoricalFeature, CovariateRow, CovariateSchema};
use crate::data::{Capture, DatasetManifest, ImageRecord, LesionLabel, Pixels, Roi, SkinTone};
use crate::error::{Error, Result};
use crate::nn::standard_normal;

/// Lesion proportions of the discovery cohort, in taxonomy order.
pub const DISCOVERY_COUNTS: [usize; 8] = [596, 1343, 1627, 2473, 974, 97, 106, 1027];

pub fn discovery_priors() -> [f64; 8] {
    let total: usize = DISCOVERY_COUNTS.iter().sum();
    DISCOVERY_COUNTS.map(|c| c as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub images: usize,
    /// Inclusive range of image edge lengths.
    pub image_size: (u32, u32),
    /// Inclusive range of lesions on a wide-field image.
    pub lesions_per_image: (usize, usize),
    /// Lesion radius range on wide-field images, in pixels.
    pub lesion_radius: (f64, f64),
    /// Share of single-lesion dermoscopy images.
    pub dermoscopy_fraction: f64,
    pub priors: [f64; 8],
    /// Border irregularity amplitude of malignant lesions.
    pub irregularity: f64,
    /// Darkening depth of the multi-tone malignant fill.
    pub contrast: f64,
    /// Shift of the latent clinical risk between benign and malignant images.
    pub covariate_strength: f64,
    /// Average images per patient.
    pub images_per_patient: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            images: 1000,
            image_size: (128, 176),
            lesions_per_image: (1, 3),
            lesion_radius: (6.0, 20.0),
            dermoscopy_fraction: 0.2,
            priors: discovery_priors(),
            irregularity: 0.28,
            contrast: 0.5,
            covariate_strength: 1.0,
            images_per_patient: 1.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::Config("image count must be positive".into()));
        }
        let (lo, hi) = self.image_size;
        if lo < 16 || hi < lo {
            return Err(Error::Config(format!("invalid image size range {lo}..={hi}")));
        }
        let (a, b) = self.lesions_per_image;
        if a == 0 || b < a {
            return Err(Error::Config(format!("invalid lesions-per-image range {a}..={b}")));
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 > 0.0 && r1 >= r0) {
            return Err(Error::Config("invalid lesion radius range".into()));
        }
        // Irregular borders can reach (1 + irregularity) times the radius.
        if 2.0 * r1 * (1.0 + self.irregularity) + 4.0 > f64::from(lo) {
            return Err(Error::Config(format!(
                "lesions of radius {r1} do not fit in {lo}px images"
            )));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.priors.iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!("priors must be non-negative and sum to 1, got {sum}")));
        }
        if !(0.0..=1.0).contains(&self.dermoscopy_fraction) {
            return Err(Error::Config("dermoscopy_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.irregularity) || !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::Config("irregularity must lie in [0, 1) and contrast in [0, 1]".into()));
        }
        if !(self.images_per_patient >= 1.0) {
            return Err(Error::Config("images_per_patient must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shape of one planted lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionPlan {
    pub label: LesionLabel,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
    /// Border harmonics `(order, amplitude, phase)`.
    pub harmonics: Vec<(f64, f64, f64)>,
    /// Multi-tone blotch field `(kx, ky, phase)`.
    pub blotches: Vec<(f64, f64, f64)>,
}

impl LesionPlan {
    /// Normalized radial distance: `<= 1` inside the lesion.
    fn radial(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        let rho = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let border = 1.0
            + self
                .harmonics
                .iter()
                .map(|(k, a, p)| a * (k * phi + p).sin())
                .sum::<f64>();
        rho / border
    }

    fn max_extent(&self) -> f64 {
        let amp: f64 = self.harmonics.iter().map(|h| h.1.abs()).sum();
        self.rx.max(self.ry) * (1.0 + amp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlan {
    pub image_id: String,
    pub patient_id: String,
    pub capture: Capture,
    pub skin_tone: SkinTone,
    pub width: u32,
    pub height: u32,
    pub lesions: Vec<LesionPlan>,
    pub texture: Vec<(f64, f64, f64, f64)>,
    pub noise_seed: u64,
}

impl ImagePlan {
    pub fn image_label(&self) -> u8 {
        u8::from(self.lesions.iter().any(|l| l.label.is_malignant()))
    }
}

fn skin_color(tone: SkinTone) -> [f64; 3] {
    match tone {
        SkinTone::Light | SkinTone::Unknown => [0.93, 0.78, 0.68],
        SkinTone::Medium => [0.80, 0.60, 0.46],
        SkinTone::Dark => [0.58, 0.42, 0.32],
    }
}

/// Per-type tint applied to the surrounding skin color, so lesions keep
/// their contrast on every skin tone.
fn lesion_tint(label: LesionLabel) -> [f64; 3] {
    match label {
        LesionLabel::Mel => [0.30, 0.22, 0.22],
        LesionLabel::Bcc => [0.62, 0.42, 0.52],
        LesionLabel::Akiec => [0.68, 0.36, 0.30],
        LesionLabel::Nv => [0.62, 0.50, 0.42],
        LesionLabel::Bkl => [0.82, 0.72, 0.50],
        LesionLabel::Df => [0.74, 0.58, 0.68],
        LesionLabel::Vasc => [0.92, 0.32, 0.38],
        LesionLabel::Ob => [0.84, 0.76, 0.70],
    }
}

fn sample_tone<R: Rng>(rng: &mut R) -> SkinTone {
    match rng.gen_range(0.0..1.0) {
        x if x < 0.80 => SkinTone::Light,
        x if x < 0.95 => SkinTone::Medium,
        _ => SkinTone::Dark,
    }
}

fn plan_lesion<R: Rng>(rng: &mut R, cfg: &SynthConfig, label: LesionLabel, cx: f64, cy: f64, radius: f64) -> LesionPlan {
    let aspect = rng.gen_range(0.7..1.0);
    let malignant = label.is_malignant();
    let amplitude = if malignant { cfg.irregularity } else { 0.03 };
    let harmonics = [3.0, 5.0, 7.0]
        .iter()
        .map(|&k| (k, amplitude / 3.0 * rng.gen_range(0.6..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let blotches = if malignant {
        (0..3)
            .map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect()
    } else {
        Vec::new()
    };
    LesionPlan {
        label,
        cx,
        cy,
        rx: radius,
        ry: radius * aspect,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        harmonics,
        blotches,
    }
}

/// Draws every image's layout without rendering pixels.
pub fn plan_dataset(cfg: &SynthConfig) -> Result<Vec<ImagePlan>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = WeightedIndex::new(cfg.priors).map_err(|e| Error::Config(e.to_string()))?;
    let mut plans = Vec::with_capacity(cfg.images);
    let mut patient = 0usize;
    let mut left_for_patient = 0usize;
    let mut patient_tone = SkinTone::Light;
    for i in 0..cfg.images {
        if left_for_patient == 0 {
            patient += 1;
            // Geometric number of images with the configured mean.
            let p = 1.0 / cfg.images_per_patient;
            left_for_patient = 1;
            while rng.gen_range(0.0..1.0) > p {
                left_for_patient += 1;
            }
            patient_tone = sample_tone(&mut rng);
        }
        left_for_patient -= 1;

        let width = rng.gen_range(cfg.image_size.0..=cfg.image_size.1);
        let height = rng.gen_range(cfg.image_size.0..=cfg.image_size.1);
        let (w, h) = (f64::from(width), f64::from(height));
        let dermoscopy = rng.gen_range(0.0..1.0) < cfg.dermoscopy_fraction;
        let mut lesions: Vec<LesionPlan> = Vec::new();
        if dermoscopy {
            let label = LesionLabel::ALL[labels.sample(&mut rng)];
            let radius = w.min(h) * rng.gen_range(0.22..0.30);
            let cx = w / 2.0 + rng.gen_range(-0.05..0.05) * w;
            let cy = h / 2.0 + rng.gen_range(-0.05..0.05) * h;
            lesions.push(plan_lesion(&mut rng, cfg, label, cx, cy, radius));
        } else {
            let count = rng.gen_range(cfg.lesions_per_image.0..=cfg.lesions_per_image.1);
            for _ in 0..count {
                let label = LesionLabel::ALL[labels.sample(&mut rng)];
                for _attempt in 0..50 {
                    let radius = rng.gen_range(cfg.lesion_radius.0..=cfg.lesion_radius.1);
                    let extent = radius * (1.0 + cfg.irregularity) + 2.0;
                    let cx = rng.gen_range(extent..w - extent);
                    let cy = rng.gen_range(extent..h - extent);
                    let candidate = plan_lesion(&mut rng, cfg, label, cx, cy, radius);
                    let clear = lesions.iter().all(|o| {
                        let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                        d > o.max_extent() + candidate.max_extent() + 8.0
                    });
                    if clear {
                        lesions.push(candidate);
                        break;
                    }
                }
            }
        }
        let texture = (0..4)
            .map(|_| {
                (
                    rng.gen_range(0.01..0.08),
                    rng.gen_range(0.01..0.08),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.004..0.012),
                )
            })
            .collect();
        plans.push(ImagePlan {
            image_id: format!("synth_{i:05}"),
            patient_id: format!("patient_{patient:05}"),
            capture: if dermoscopy { Capture::Dermoscopy } else { Capture::WideField },
            skin_tone: patient_tone,
            width,
            height,
            lesions,
            texture,
            noise_seed: rng.gen(),
        });
    }
    Ok(plans)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders a planned image and returns it with the exact bounding box of
/// each lesion.
pub fn render(plan: &ImagePlan, contrast: f64) -> (Pixels, Vec<Roi>) {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.noise_seed);
    let skin = skin_color(plan.skin_tone);
    let mut pixels = Pixels::filled(plan.width, plan.height, [0.0; 3]);
    let mut bounds: Vec<Option<(u32, u32, u32, u32)>> = vec![None; plan.lesions.len()];
    for y in 0..plan.height {
        for x in 0..plan.width {
            let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let shade: f64 = plan
                .texture
                .iter()
                .map(|(kx, ky, p, a)| a * (kx * fx + ky * fy + p).sin())
                .sum();
            let noise = f64::from(standard_normal(&mut rng)) * 0.012;
            let mut rgb = skin.map(|c| c * (1.0 + shade) + noise);
            for (li, lesion) in plan.lesions.iter().enumerate() {
                let d = lesion.radial(fx, fy);
                if d > 1.0 {
                    continue;
                }
                let b = bounds[li].get_or_insert((x, y, x, y));
                *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
                let alpha = 1.0 - smoothstep(0.85, 1.0, d) * 0.6;
                let tint = lesion_tint(lesion.label);
                let mut color = [skin[0] * tint[0], skin[1] * tint[1], skin[2] * tint[2]];
                if !lesion.blotches.is_empty() {
                    let field: f64 = lesion
                        .blotches
                        .iter()
                        .map(|(kx, ky, p)| (kx * (fx - lesion.cx) + ky * (fy - lesion.cy) + p).sin())
                        .sum::<f64>()
                        / lesion.blotches.len() as f64;
                    let depth = 1.0 - contrast * (0.5 + 0.5 * field);
                    color = color.map(|c| c * depth);
                }
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - alpha) + (color[c] + noise) * alpha;
                }
            }
            pixels.set_rgb(x, y, rgb.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    let rois = plan
        .lesions
        .iter()
        .zip(bounds)
        .filter_map(|(lesion, b)| {
            b.map(|(x0, y0, x1, y1)| {
                Roi::from_corners(f64::from(x0), f64::from(y0), f64::from(x1 + 1), f64::from(y1 + 1))
                    .with_label(lesion.label)
            })
        })
        .collect();
    (pixels, rois)
}

/// Covariate schema emitted by the generator.
pub fn covariate_schema() -> CovariateSchema {
    let cat = |name: &str, levels: &[&str]| CategoricalFeature {
        name: name.into(),
        levels: levels.iter().map(|s| s.to_string()).collect(),
    };
    CovariateSchema {
        continuous: vec!["age".into(), "prior_visits".into()],
        categorical: vec![
            cat("sex", &["F", "M"]),
            cat("race", &["white", "black", "asian"]),
            cat("location", &["head_neck", "trunk", "upper_extremity", "lower_extremity"]),
            cat("immunosuppressed", &["no", "yes"]),
        ],
    }
}

fn covariates_for<R: Rng>(rng: &mut R, image_id: &str, malignant: bool, strength: f64) -> CovariateRow {
    let sign = if malignant { 1.0 } else { -1.0 };
    let risk = strength * sign + f64::from(standard_normal(rng));
    let age = (60.0 + 10.0 * risk).clamp(18.0, 95.0).round();
    let visits = (3.0 + 1.5 * (0.5 * risk + f64::from(standard_normal(rng)))).max(0.0).round();
    let sex = if rng.gen_bool(0.5) { "F" } else { "M" };
    let race = ["white", "black", "asian"][WeightedIndex::new([0.8, 0.12, 0.08]).unwrap().sample(rng)];
    let head = (0.25 + 0.15 * sign * strength.min(1.0)).clamp(0.05, 0.9);
    let rest = (1.0 - head) / 3.0;
    let location = ["head_neck", "trunk", "upper_extremity", "lower_extremity"]
        [WeightedIndex::new([head, rest, rest, rest]).unwrap().sample(rng)];
    let immuno_p = (0.1 + 0.1 * sign * strength.min(1.0)).clamp(0.01, 0.9);
    let immuno = if rng.gen_bool(immuno_p) { "yes" } else { "no" };
    let values: BTreeMap<String, Option<String>> = [
        ("age", age.to_string()),
        ("prior_visits", visits.to_string()),
        ("sex", sex.to_string()),
        ("race", race.to_string()),
        ("location", location.to_string()),
        ("immunosuppressed", immuno.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), Some(v)))
    .collect();
    CovariateRow {
        image_id: image_id.to_string(),
        values,
    }
}

/// What [`generate_dataset`] wrote.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub covariates: Vec<CovariateRow>,
    pub schema: CovariateSchema,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const SCHEMA_FILE: &str = "covariate_schema.json";

/// Renders the dataset into `out_dir`: `images/*.png`, `manifest.json`,
/// `covariates.csv` and `covariate_schema.json`.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let plans = plan_dataset(cfg)?;
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir)
        .map_err(|e| Error::io(format!("creating {}", image_dir.display()), e))?;
    let mut cov_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0_7a_71a7e5);
    let mut records = Vec::with_capacity(plans.len());
    let mut rows = Vec::with_capacity(plans.len());
    for plan in &plans {
        let (pixels, rois) = render(plan, cfg.contrast);
        let rel = Path::new("images").join(format!("{}.png", plan.image_id));
        pixels.save_png(&out_dir.join(&rel))?;
        let record = ImageRecord {
            image_id: plan.image_id.clone(),
            patient_id: plan.patient_id.clone(),
            path: rel,
            capture: plan.capture,
            skin_tone: plan.skin_tone,
            width: Some(plan.width),
            height: Some(plan.height),
            rois,
        };
        rows.push(covariates_for(
            &mut cov_rng,
            &record.image_id,
            record.image_label() == 1,
            cfg.covariate_strength,
        ));
        records.push(record);
    }
    let manifest = DatasetManifest::from_records(records, out_dir)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let schema = covariate_schema();
    schema.save(&out_dir.join(SCHEMA_FILE))?;
    write_covariates(&out_dir.join(COVARIATES_FILE), &schema, &rows)?;
    Ok(SynthOutput {
        manifest,
        covariates: rows,
        schema,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discovery_priors_sum_to_one() {
        let p = discovery_priors();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 596.0 / 8243.0).abs() < 1e-15);
    }

    #[test]
    fn oversized_lesions_rejected() {
        let cfg = SynthConfig {
            image_size: (32, 40),
            lesion_radius: (5.0, 30.0),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rendered_boxes_inside_and_labelled() {
        let cfg = SynthConfig {
            images: 12,
            ..Default::default()
        };
        for plan in plan_dataset(&cfg).unwrap() {
            let (pixels, rois) = render(&plan, cfg.contrast);
            assert_eq!(rois.len(), plan.lesions.len());
            for roi in &rois {
                let (x0, y0, x1, y1) = roi.corners();
                assert!(x0 >= 0.0 && y0 >= 0.0);
                assert!(x1 <= f64::from(pixels.width()) && y1 <= f64::from(pixels.height()));
            }
            let derived = u8::from(rois.iter().any(Roi::is_malignant));
            assert_eq!(derived, plan.image_label());
        }
    }
}
