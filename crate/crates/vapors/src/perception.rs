//! Mask-space perception: everything needed to turn a binary plate mask into
//! a continuously parameterized action.
//!
//! All operations are pure functions of their inputs. Argmax/argmin ties are
//! broken by smallest `(v, u)` in lexicographic order so downstream planning
//! is deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PerceptionConfig;
use crate::grid::{Calibration, GrayGrid, ObsGrid};
use crate::platesim::{LowLevelAction, PrimitiveKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PerceptionError {
    /// The mask (or blurred density map) carries no food pixels; the caller
    /// treats the plate as cleared.
    #[error("no food pixels in view")]
    EmptyPlate,
    /// Dense and far points coincide, so no push direction exists.
    #[error("degenerate push: dense and far points coincide")]
    DegeneratePush,
    /// The crop has no principal axis (too few pixels or isotropic).
    #[error("crop has no principal axis")]
    IsotropicCrop,
    #[error("grid dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("pixel ({0}, {1}) outside a {2}x{3} grid")]
    OutOfBounds(usize, usize, usize, usize),
}

/// Binary mask crop centered on the densest pixel, used for orientation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationCrop {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl OrientationCrop {
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Square crop of `size` pixels around `(cu, cv)`, clipped at mask borders.
pub fn extract_crop(mask: &ObsGrid, cu: usize, cv: usize, size: usize) -> OrientationCrop {
    let half = size / 2;
    let u0 = cu.saturating_sub(half);
    let v0 = cv.saturating_sub(half);
    let u1 = (cu + half + 1).min(mask.width);
    let v1 = (cv + half + 1).min(mask.height);
    let (w, h) = (u1 - u0, v1 - v0);
    let mut data = Vec::with_capacity(w * h);
    for v in v0..v1 {
        for u in u0..u1 {
            data.push(mask.get(u, v));
        }
    }
    OrientationCrop {
        width: w,
        height: h,
        data,
    }
}

/// Discrete Gaussian convolution with kernel radius `ceil(3 sigma)` and
/// zero-padded borders. The kernel is normalized to unit mass, so an
/// all-ones input maps to values at most 1.
pub fn gaussian_blur(mask: &ObsGrid, sigma: f64) -> GrayGrid {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let size = (2 * radius + 1) as usize;
    let mut kernel = vec![0.0f64; size * size];
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            kernel[((dy + radius) as usize) * size + (dx + radius) as usize] = w;
            total += w;
        }
    }
    for w in &mut kernel {
        *w /= total;
    }

    let (width, height) = (mask.width, mask.height);
    let mut out = GrayGrid::zeros(width, height);
    for v in 0..height as i64 {
        for u in 0..width as i64 {
            let mut acc = 0.0;
            for dy in -radius..=radius {
                let sv = v + dy;
                if sv < 0 || sv >= height as i64 {
                    continue;
                }
                for dx in -radius..=radius {
                    let su = u + dx;
                    if su < 0 || su >= width as i64 {
                        continue;
                    }
                    if mask.get(su as usize, sv as usize) != 0 {
                        acc += kernel[((dy + radius) as usize) * size + (dx + radius) as usize];
                    }
                }
            }
            out.set(u as usize, v as usize, acc);
        }
    }
    out
}

/// Pixel attaining the global maximum of a density map; ties go to the
/// smallest `(v, u)`. An all-zero map signals [`PerceptionError::EmptyPlate`].
pub fn densest_pixel(blurred: &GrayGrid) -> Result<(usize, usize), PerceptionError> {
    let mut best: Option<((usize, usize), f64)> = None;
    for v in 0..blurred.height {
        for u in 0..blurred.width {
            let value = blurred.get(u, v);
            if best.map_or(true, |(_, b)| value > b) {
                best = Some(((u, v), value));
            }
        }
    }
    match best {
        Some((_, value)) if value <= 0.0 => Err(PerceptionError::EmptyPlate),
        Some((pixel, _)) => Ok(pixel),
        None => Err(PerceptionError::EmptyPlate),
    }
}

/// Lowest-intensity pixel of the density map restricted to food-bearing mask
/// pixels; same tie rule as [`densest_pixel`].
pub fn furthest_pixel(
    blurred: &GrayGrid,
    mask: &ObsGrid,
) -> Result<(usize, usize), PerceptionError> {
    if blurred.width != mask.width || blurred.height != mask.height {
        return Err(PerceptionError::DimensionMismatch(
            blurred.width,
            blurred.height,
            mask.width,
            mask.height,
        ));
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for v in 0..mask.height {
        for u in 0..mask.width {
            if mask.get(u, v) == 0 {
                continue;
            }
            let value = blurred.get(u, v);
            if best.map_or(true, |(_, b)| value < b) {
                best = Some(((u, v), value));
            }
        }
    }
    best.map(|(pixel, _)| pixel)
        .ok_or(PerceptionError::EmptyPlate)
}

/// Push direction from the dense point toward the far point, degrees in
/// [0, 360).
pub fn push_angle(dense: (f64, f64), far: (f64, f64)) -> Result<f64, PerceptionError> {
    let dy = far.1 - dense.1;
    let dx = far.0 - dense.0;
    if dx == 0.0 && dy == 0.0 {
        return Err(PerceptionError::DegeneratePush);
    }
    let deg = dy.atan2(dx).to_degrees();
    Ok(deg.rem_euclid(360.0))
}

/// Inverse calibration applied to the center of an integer pixel; z is the
/// plate-surface height.
pub fn deproject(
    u: usize,
    v: usize,
    width: usize,
    height: usize,
    calib: &Calibration,
) -> Result<[f64; 3], PerceptionError> {
    if u >= width || v >= height {
        return Err(PerceptionError::OutOfBounds(u, v, width, height));
    }
    let (x, y) = calib.pixel_to_plate(u as f64 + 0.5, v as f64 + 0.5);
    Ok([x, y, calib.surface_z])
}

/// Self-supervised labeling: a pixel is foreground iff the absolute
/// difference between the current and empty-plate renders strictly exceeds
/// the threshold.
pub fn background_subtract_label(
    empty: &GrayGrid,
    current: &GrayGrid,
    thresh: f64,
) -> Result<ObsGrid, PerceptionError> {
    if empty.width != current.width || empty.height != current.height {
        return Err(PerceptionError::DimensionMismatch(
            empty.width,
            empty.height,
            current.width,
            current.height,
        ));
    }
    let mut mask = ObsGrid::zeros(empty.width, empty.height);
    for v in 0..empty.height {
        for u in 0..empty.width {
            if (current.get(u, v) - empty.get(u, v)).abs() > thresh {
                mask.set(u, v, 1);
            }
        }
    }
    Ok(mask)
}

/// Dice loss `1 - 2TP / (2TP + FN + FP)` from pixelwise counts. Two empty
/// masks agree vacuously and score 0.
pub fn dice_loss(pred: &ObsGrid, gt: &ObsGrid) -> Result<f64, PerceptionError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(PerceptionError::DimensionMismatch(
            pred.width,
            pred.height,
            gt.width,
            gt.height,
        ));
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fn_ + fp;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - (2 * tp) as f64 / denom as f64)
}

/// Utensil roll orthogonal to the crop's principal axis, degrees in
/// [0, 180).
///
/// The principal axis comes from the second moments of the set-pixel
/// coordinates via `theta = atan2(2 c_uv, c_uu - c_vv) / 2`.
pub fn principal_axis_orientation(crop: &OrientationCrop) -> Result<f64, PerceptionError> {
    let pixels: Vec<(f64, f64)> = crop
        .set_pixels()
        .map(|(u, v)| (u as f64, v as f64))
        .collect();
    if pixels.len() < 2 {
        return Err(PerceptionError::IsotropicCrop);
    }
    let n = pixels.len() as f64;
    let mu = pixels.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pixels.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cuu = 0.0;
    let mut cvv = 0.0;
    let mut cuv = 0.0;
    for (u, v) in &pixels {
        cuu += (u - mu) * (u - mu);
        cvv += (v - mv) * (v - mv);
        cuv += (u - mu) * (v - mv);
    }
    cuu /= n;
    cvv /= n;
    cuv /= n;
    // Eigenvalue gap of the 2x2 covariance; zero means no unique axis.
    let gap = ((cuu - cvv).powi(2) + 4.0 * cuv * cuv).sqrt();
    if gap < 1e-12 {
        return Err(PerceptionError::IsotropicCrop);
    }
    let axis_deg = (0.5 * (2.0 * cuv).atan2(cuu - cvv)).to_degrees();
    Ok((axis_deg + 90.0).rem_euclid(180.0))
}

/// Compose blur, extraction, deprojection, and orientation to produce a
/// valid action of the requested kind.
///
/// When the push endpoints coincide, or the orientation crop has no
/// principal axis, the roll defaults to 0 degrees.
pub fn instantiate_action(
    mask: &ObsGrid,
    kind: PrimitiveKind,
    calib: &Calibration,
    cfg: &PerceptionConfig,
    acquire_pitch_deg: f64,
) -> Result<LowLevelAction, PerceptionError> {
    let blurred = gaussian_blur(mask, cfg.blur_sigma);
    let (du, dv) = densest_pixel(&blurred)?;
    let dense = deproject(du, dv, mask.width, mask.height, calib)?;
    match kind {
        PrimitiveKind::Acquire => {
            let crop = extract_crop(mask, du, dv, cfg.crop_size);
            let roll = principal_axis_orientation(&crop).unwrap_or(0.0);
            Ok(LowLevelAction::acquire(dense, roll, acquire_pitch_deg))
        }
        PrimitiveKind::Rearrange => {
            let (fu, fv) = furthest_pixel(&blurred, mask)?;
            let far = deproject(fu, fv, mask.width, mask.height, calib)?;
            let roll =
                push_angle((dense[0], dense[1]), (far[0], far[1])).unwrap_or(0.0);
            Ok(LowLevelAction::rearrange(dense, far, roll))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(width: usize, height: usize, set: &[(usize, usize)]) -> ObsGrid {
        let mut g = ObsGrid::zeros(width, height);
        for &(u, v) in set {
            g.set(u, v, 1);
        }
        g
    }

    /// Direct-convolution oracle, written straight from the definition.
    fn blur_oracle(mask: &ObsGrid, sigma: f64) -> GrayGrid {
        let radius = (3.0 * sigma).ceil() as i64;
        let mut total = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                total += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let mut out = GrayGrid::zeros(mask.width, mask.height);
        for v in 0..mask.height as i64 {
            for u in 0..mask.width as i64 {
                let mut acc = 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (su, sv) = (u + dx, v + dy);
                        if su >= 0
                            && sv >= 0
                            && (su as usize) < mask.width
                            && (sv as usize) < mask.height
                            && mask.get(su as usize, sv as usize) != 0
                        {
                            acc += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()
                                / total;
                        }
                    }
                }
                out.set(u as usize, v as usize, acc);
            }
        }
        out
    }

    #[test]
    fn blur_of_zero_mask_is_zero() {
        let out = gaussian_blur(&ObsGrid::zeros(16, 16), 2.0);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blur_peaks_at_block_center() {
        // 5x5 block centered at (8, 8) in a 17x17 grid.
        let set: Vec<(usize, usize)> = (6..11)
            .flat_map(|v| (6..11).map(move |u| (u, v)))
            .collect();
        let mask = grid_with(17, 17, &set);
        let blurred = gaussian_blur(&mask, 2.0);
        let oracle = blur_oracle(&mask, 2.0);
        let (mu, mv) = densest_pixel(&blurred).unwrap();
        assert_eq!((mu, mv), (8, 8));
        for v in 0..17 {
            for u in 0..17 {
                assert!((blurred.get(u, v) - oracle.get(u, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_is_additive_over_disjoint_far_supports() {
        let a = grid_with(40, 40, &[(5, 5), (6, 5), (5, 6)]);
        let b = grid_with(40, 40, &[(34, 34), (33, 34)]);
        let mut both = a.clone();
        for (i, &v) in b.data().iter().enumerate() {
            if v != 0 {
                both.set(i % 40, i / 40, 1);
            }
        }
        let sigma = 2.0;
        let blur_a = gaussian_blur(&a, sigma);
        let blur_b = gaussian_blur(&b, sigma);
        let blur_both = gaussian_blur(&both, sigma);
        for i in 0..40 * 40 {
            let sum = blur_a.data()[i] + blur_b.data()[i];
            assert!((blur_both.data()[i] - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_preserves_mass_away_from_borders() {
        let set: Vec<(usize, usize)> = (30..34)
            .flat_map(|v| (29..36).map(move |u| (u, v)))
            .collect();
        let mask = grid_with(64, 64, &set);
        let blurred = gaussian_blur(&mask, 2.0);
        let mass: f64 = blurred.data().iter().sum();
        let expected = mask.count_ones() as f64;
        assert!(((mass - expected) / expected).abs() < 1e-6);
    }

    #[test]
    fn all_ones_blur_stays_at_most_one() {
        let mask = ObsGrid::from_data(32, 32, vec![1; 32 * 32]);
        let blurred = gaussian_blur(&mask, 3.0);
        assert!(blurred.data().iter().all(|&v| v <= 1.0 + 1e-12));
    }

    #[test]
    fn densest_pixel_prefers_lexicographic_on_uniform() {
        let g = GrayGrid::from_data(8, 8, vec![0.5; 64]);
        assert_eq!(densest_pixel(&g).unwrap(), (0, 0));
    }

    #[test]
    fn densest_pixel_on_zero_grid_is_empty_plate() {
        assert_eq!(
            densest_pixel(&GrayGrid::zeros(8, 8)),
            Err(PerceptionError::EmptyPlate)
        );
    }

    #[test]
    fn densest_pixel_tie_breaks_between_equal_blobs() {
        let mask = grid_with(30, 30, &[(5, 5), (20, 20)]);
        let blurred = gaussian_blur(&mask, 1.5);
        assert_eq!(densest_pixel(&blurred).unwrap(), (5, 5));
    }

    #[test]
    fn furthest_pixel_finds_isolated_food() {
        let mut set: Vec<(usize, usize)> = (10..15)
            .flat_map(|v| (10..15).map(move |u| (u, v)))
            .collect();
        set.push((30, 3));
        let mask = grid_with(36, 36, &set);
        let blurred = gaussian_blur(&mask, 2.0);
        assert_eq!(furthest_pixel(&blurred, &mask).unwrap(), (30, 3));
    }

    #[test]
    fn furthest_pixel_of_single_set_pixel_is_itself() {
        let mask = grid_with(12, 12, &[(7, 4)]);
        let blurred = gaussian_blur(&mask, 1.0);
        assert_eq!(furthest_pixel(&blurred, &mask).unwrap(), (7, 4));
    }

    #[test]
    fn furthest_pixel_of_empty_mask_is_empty_plate() {
        let mask = ObsGrid::zeros(8, 8);
        let blurred = GrayGrid::zeros(8, 8);
        assert_eq!(
            furthest_pixel(&blurred, &mask),
            Err(PerceptionError::EmptyPlate)
        );
    }

    #[test]
    fn furthest_pixel_symmetric_mask_takes_lexicographic_min() {
        // Two mirrored single pixels; both see the same intensity.
        let mask = grid_with(21, 21, &[(4, 4), (16, 16)]);
        let blurred = gaussian_blur(&mask, 1.0);
        assert_eq!(furthest_pixel(&blurred, &mask).unwrap(), (4, 4));
    }

    #[test]
    fn push_angle_quadrants() {
        assert_eq!(push_angle((0.0, 0.0), (1.0, 1.0)).unwrap(), 45.0);
        assert_eq!(push_angle((0.0, 0.0), (-1.0, 0.0)).unwrap(), 180.0);
        assert_eq!(push_angle((0.0, 0.0), (0.0, -1.0)).unwrap(), 270.0);
        assert_eq!(
            push_angle((0.0, 0.0), (0.0, 0.0)),
            Err(PerceptionError::DegeneratePush)
        );
    }

    #[test]
    fn push_angle_reverses_by_half_turn() {
        let d = (0.3, -0.2);
        let f = (-0.7, 0.9);
        let a = push_angle(d, f).unwrap();
        let b = push_angle(f, d).unwrap();
        let diff = (a - b).rem_euclid(360.0);
        assert!((diff - 180.0).abs() < 1e-9);
    }

    #[test]
    fn deproject_round_trips_through_projection() {
        let calib = Calibration::centered(64, 64, (0.0, 0.0), 0.1, 0.015);
        let p = deproject(10, 50, 64, 64, &calib).unwrap();
        assert_eq!(p[2], 0.015);
        let (uf, vf) = calib.plate_to_pixel(p[0], p[1]);
        assert!((uf - 10.5).abs() < 1e-9 && (vf - 50.5).abs() < 1e-9);
        let (x, y) = calib.pixel_to_plate(uf, vf);
        assert!((x - p[0]).abs() < 1e-9 && (y - p[1]).abs() < 1e-9);
    }

    #[test]
    fn deproject_center_pixel_of_odd_grid_is_plate_center() {
        let calib = Calibration::centered(9, 9, (0.0, 0.0), 0.1, 0.0);
        let p = deproject(4, 4, 9, 9, &calib).unwrap();
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn deproject_corner_matches_hand_affine() {
        // 2x3 affine by hand: scale 2R/64 = 0.003125, offset -0.1.
        let calib = Calibration::centered(64, 64, (0.0, 0.0), 0.1, 0.0);
        let p = deproject(0, 63, 64, 64, &calib).unwrap();
        assert!((p[0] - (0.5 * 0.003125 - 0.1)).abs() < 1e-12);
        assert!((p[1] - (63.5 * 0.003125 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn deproject_rejects_out_of_bounds() {
        let calib = Calibration::centered(8, 8, (0.0, 0.0), 0.1, 0.0);
        assert!(deproject(8, 0, 8, 8, &calib).is_err());
    }

    #[test]
    fn label_of_identical_grids_is_empty() {
        let g = GrayGrid::from_data(4, 4, (0..16).map(|i| i as f64).collect());
        let mask = background_subtract_label(&g, &g, 20.0).unwrap();
        assert!(mask.is_empty());
    }

    #[test]
    fn label_threshold_is_strict() {
        let empty = GrayGrid::zeros(3, 1);
        let mut current = GrayGrid::zeros(3, 1);
        current.set(0, 0, 25.0);
        current.set(1, 0, 20.0); // exactly at threshold: NOT set
        current.set(2, 0, -25.0 + 255.0); // |diff| = 230
        let mask = background_subtract_label(&empty, &current, 20.0).unwrap();
        assert_eq!(mask.get(0, 0), 1);
        assert_eq!(mask.get(1, 0), 0);
        assert_eq!(mask.get(2, 0), 1);
    }

    #[test]
    fn label_is_symmetric_in_absolute_difference() {
        let a = GrayGrid::from_data(5, 2, (0..10).map(|i| (i * 13 % 200) as f64).collect());
        let b = GrayGrid::from_data(5, 2, (0..10).map(|i| (i * 31 % 220) as f64).collect());
        let ab = background_subtract_label(&a, &b, 20.0).unwrap();
        let ba = background_subtract_label(&b, &a, 20.0).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn label_rejects_dimension_mismatch() {
        let a = GrayGrid::zeros(4, 4);
        let b = GrayGrid::zeros(4, 5);
        assert!(background_subtract_label(&a, &b, 20.0).is_err());
    }

    #[test]
    fn dice_of_equal_nonempty_masks_is_zero() {
        let m = grid_with(6, 6, &[(1, 1), (2, 2), (3, 3)]);
        assert_eq!(dice_loss(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn dice_of_disjoint_masks_is_one() {
        let a = grid_with(6, 6, &[(0, 0)]);
        let b = grid_with(6, 6, &[(5, 5)]);
        assert_eq!(dice_loss(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn dice_matches_formula() {
        // TP=2, FP=1, FN=1 => 1 - 4/6 = 1/3.
        let pred = grid_with(4, 1, &[(0, 0), (1, 0), (2, 0)]);
        let gt = grid_with(4, 1, &[(0, 0), (1, 0), (3, 0)]);
        let loss = dice_loss(&pred, &gt).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dice_of_two_empty_masks_is_zero() {
        let e = ObsGrid::zeros(4, 4);
        assert_eq!(dice_loss(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let a = grid_with(8, 8, &[(1, 1), (2, 3), (5, 5), (6, 1)]);
        let b = grid_with(8, 8, &[(1, 1), (2, 3), (4, 4)]);
        assert_eq!(dice_loss(&a, &b).unwrap(), dice_loss(&b, &a).unwrap());
    }

    fn crop_from(points: &[(usize, usize)], w: usize, h: usize) -> OrientationCrop {
        let mask = grid_with(w, h, points);
        extract_crop(&mask, w / 2, h / 2, w.max(h))
    }

    #[test]
    fn horizontal_bar_orients_to_ninety() {
        let pts: Vec<(usize, usize)> = (2..14).map(|u| (u, 7)).collect();
        let angle = principal_axis_orientation(&crop_from(&pts, 16, 16)).unwrap();
        assert!((angle - 90.0).abs() < 1e-9);
    }

    #[test]
    fn vertical_bar_orients_to_zero() {
        let pts: Vec<(usize, usize)> = (2..14).map(|v| (7, v)).collect();
        let angle = principal_axis_orientation(&crop_from(&pts, 16, 16)).unwrap();
        assert!(angle.abs() < 1e-9 || (angle - 180.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_bar_orients_to_135() {
        // Covariance of {(i, i)} has principal axis at 45 degrees.
        let pts: Vec<(usize, usize)> = (2..14).map(|i| (i, i)).collect();
        let angle = principal_axis_orientation(&crop_from(&pts, 16, 16)).unwrap();
        assert!((angle - 135.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_or_tiny_crops_are_rejected() {
        assert_eq!(
            principal_axis_orientation(&crop_from(&[(7, 7)], 16, 16)),
            Err(PerceptionError::IsotropicCrop)
        );
        // A perfect square block has equal eigenvalues.
        let square: Vec<(usize, usize)> = (6..10)
            .flat_map(|v| (6..10).map(move |u| (u, v)))
            .collect();
        assert_eq!(
            principal_axis_orientation(&crop_from(&square, 16, 16)),
            Err(PerceptionError::IsotropicCrop)
        );
    }

    #[test]
    fn orientation_is_translation_and_half_turn_invariant() {
        let base: Vec<(usize, usize)> = (0..10).map(|i| (3 + i, 4 + i / 2)).collect();
        let shifted: Vec<(usize, usize)> = base.iter().map(|&(u, v)| (u + 5, v + 8)).collect();
        let a = principal_axis_orientation(&crop_from(&base, 32, 32)).unwrap();
        let b = principal_axis_orientation(&crop_from(&shifted, 32, 32)).unwrap();
        assert!((a - b).abs() < 1.0);
        // 180-degree rotation about the crop center.
        let rotated: Vec<(usize, usize)> = base.iter().map(|&(u, v)| (31 - u, 31 - v)).collect();
        let c = principal_axis_orientation(&crop_from(&rotated, 32, 32)).unwrap();
        assert!((a - c).abs() < 1.0 || (180.0 - (a - c).abs()) < 1.0);
    }

    #[test]
    fn instantiate_acquire_targets_blob_center() {
        let set: Vec<(usize, usize)> = (20..25)
            .flat_map(|v| (14..31).map(move |u| (u, v)))
            .collect();
        let mask = grid_with(64, 64, &set);
        let calib = Calibration::centered(64, 64, (0.0, 0.0), 0.1, 0.0);
        let cfg = PerceptionConfig::default();
        let action =
            instantiate_action(&mask, PrimitiveKind::Acquire, &calib, &cfg, 80.0).unwrap();
        assert_eq!(action.kind, PrimitiveKind::Acquire);
        assert!(action.far_point.is_none());
        assert_eq!(action.pitch_deg, 80.0);
        // The blob is a horizontal bar; the roll is orthogonal to it.
        assert!((action.roll_deg - 90.0).abs() < 5.0);
        let expected = deproject(22, 22, 64, 64, &calib).unwrap();
        assert!((action.dense_point[0] - expected[0]).abs() < 0.01);
        assert!((action.dense_point[1] - expected[1]).abs() < 0.01);
    }

    #[test]
    fn instantiate_rearrange_pushes_sparse_into_dense() {
        let mut set: Vec<(usize, usize)> = (38..46)
            .flat_map(|v| (38..46).map(move |u| (u, v)))
            .collect();
        set.push((10, 10));
        let mask = grid_with(64, 64, &set);
        let calib = Calibration::centered(64, 64, (0.0, 0.0), 0.1, 0.0);
        let cfg = PerceptionConfig::default();
        let action =
            instantiate_action(&mask, PrimitiveKind::Rearrange, &calib, &cfg, 80.0).unwrap();
        assert_eq!(action.kind, PrimitiveKind::Rearrange);
        assert_eq!(action.pitch_deg, 0.0);
        let far = action.far_point.expect("rearrange carries far point");
        // Dense point in the big blob (positive plate coords), far point at
        // the isolated pixel (negative plate coords).
        assert!(action.dense_point[0] > 0.0 && action.dense_point[1] > 0.0);
        assert!(far[0] < 0.0 && far[1] < 0.0);
        let expect_roll = push_angle(
            (action.dense_point[0], action.dense_point[1]),
            (far[0], far[1]),
        )
        .unwrap();
        assert_eq!(action.roll_deg, expect_roll);
    }

    #[test]
    fn instantiate_on_empty_mask_is_empty_plate() {
        let calib = Calibration::centered(64, 64, (0.0, 0.0), 0.1, 0.0);
        let cfg = PerceptionConfig::default();
        assert_eq!(
            instantiate_action(
                &ObsGrid::zeros(64, 64),
                PrimitiveKind::Acquire,
                &calib,
                &cfg,
                80.0
            )
            .unwrap_err(),
            PerceptionError::EmptyPlate
        );
    }

    #[test]
    fn densest_pixel_stays_within_dilated_support() {
        let mask = grid_with(40, 40, &[(12, 9), (13, 9), (12, 10), (30, 31)]);
        let sigma = 2.5f64;
        let radius = (3.0 * sigma).ceil() as i64;
        let blurred = gaussian_blur(&mask, sigma);
        let (u, v) = densest_pixel(&blurred).unwrap();
        let near_support = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0)
            .any(|(i, _)| {
                let (su, sv) = ((i % 40) as i64, (i / 40) as i64);
                (su - u as i64).abs() <= radius && (sv - v as i64).abs() <= radius
            });
        assert!(near_support);
    }
}
