//! Euclidean distance maps from binary vessel masks.
//!
//! Convention: foreground pixels carry the distance to the nearest
//! background pixel; background pixels are 0. A mask with no background at
//! all saturates to the image diagonal. `edt_exact` is the separable
//! lower-envelope-of-parabolas algorithm on squared distances;
//! `edt_bruteforce` is the independent all-pairs oracle.

use crate::error::{Error, Result};

/// Row-major binary image; 1 = vessel/foreground, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "mask must be nonempty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Dim(format!(
                "mask {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::InvalidInput(format!(
                "mask pixels must be 0 or 1, found {bad}"
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y) as u8);
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }

    pub fn transposed(&self) -> BinaryMask {
        let mut pixels = vec![0u8; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                pixels[x * self.height + y] = self.get(x, y);
            }
        }
        BinaryMask {
            width: self.height,
            height: self.width,
            pixels,
        }
    }

    fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    UnitMax,
}

/// Per-pixel Euclidean distances (pixels as unit) derived from a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    normalization: Normalization,
}

impl DistanceMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn from_values(
        width: usize,
        height: usize,
        values: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dim(format!(
                "distance map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DistanceMap {
            width,
            height,
            values,
            normalization,
        })
    }

    pub fn transposed(&self) -> DistanceMap {
        let mut values = vec![0.0; self.values.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                values[x * self.height + y] = self.get(x, y);
            }
        }
        DistanceMap {
            width: self.height,
            height: self.width,
            values,
            normalization: self.normalization,
        }
    }
}

/// Exact Euclidean distance transform via two separable passes of the
/// lower-envelope-of-parabolas algorithm on squared distances.
pub fn edt_exact(mask: &BinaryMask) -> DistanceMap {
    let (w, h) = (mask.width, mask.height);
    if mask.foreground_count() == w * h {
        // No background anywhere: saturate to the image diagonal.
        return DistanceMap {
            width: w,
            height: h,
            values: vec![mask.diagonal(); w * h],
            normalization: Normalization::Raw,
        };
    }
    // Finite stand-in for "no background in this row"; must exceed any
    // achievable squared distance so it never wins the envelope minimum.
    let big = ((w * w + h * h) as f64) * 4.0 + 4.0;

    // Pass 1: per row, squared distance to the nearest background in that row.
    let mut g = vec![big; w * h];
    for y in 0..h {
        let row = y * w;
        let mut dist = f64::INFINITY;
        for x in 0..w {
            if mask.pixels[row + x] == 0 {
                dist = 0.0;
            } else {
                dist += 1.0;
            }
            g[row + x] = dist.min(big.sqrt());
        }
        dist = f64::INFINITY;
        for x in (0..w).rev() {
            if mask.pixels[row + x] == 0 {
                dist = 0.0;
            } else {
                dist += 1.0;
            }
            g[row + x] = g[row + x].min(dist.min(big.sqrt()));
        }
        for x in 0..w {
            g[row + x] = g[row + x] * g[row + x];
        }
    }

    // Pass 2: per column, lower envelope of parabolas over the row results.
    let mut values = vec![0.0; w * h];
    let mut f = vec![0.0; h];
    let mut d = vec![0.0; h];
    let mut v = vec![0usize; h];
    let mut z = vec![0.0; h + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = g[y * w + x];
        }
        dt1d(&f, &mut d, &mut v, &mut z);
        for y in 0..h {
            values[y * w + x] = d[y].sqrt();
        }
    }
    DistanceMap {
        width: w,
        height: h,
        values,
        normalization: Normalization::Raw,
    }
}

/// 1-D squared-distance transform: d[q] = min_p (f[p] + (q-p)^2).
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                debug_assert!(k > 0);
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        d[q] = (qf - p) * (qf - p) + f[v[k]];
    }
}

pub const DEFAULT_ORACLE_CAP: usize = 16384;

/// All-pairs distance-transform oracle. Same contract as [`edt_exact`],
/// deliberately kept independent of it.
pub fn edt_bruteforce(mask: &BinaryMask) -> Result<DistanceMap> {
    edt_bruteforce_with_cap(mask, DEFAULT_ORACLE_CAP)
}

pub fn edt_bruteforce_with_cap(mask: &BinaryMask, cap: usize) -> Result<DistanceMap> {
    let (w, h) = (mask.width, mask.height);
    if w * h > cap {
        return Err(Error::OracleTooLarge {
            pixels: w * h,
            cap,
        });
    }
    let background: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y) == 0)
        .collect();
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) == 0 {
                continue;
            }
            if background.is_empty() {
                values[y * w + x] = mask.diagonal();
                continue;
            }
            let mut best = f64::INFINITY;
            for &(bx, by) in &background {
                let dx = bx as f64 - x as f64;
                let dy = by as f64 - y as f64;
                best = best.min(dx * dx + dy * dy);
            }
            values[y * w + x] = best.sqrt();
        }
    }
    Ok(DistanceMap {
        width: w,
        height: h,
        values,
        normalization: Normalization::Raw,
    })
}

/// Scale a raw map so its maximum is 1. All-zero maps pass through.
pub fn normalize_dt(map: &DistanceMap) -> DistanceMap {
    let max = map.values.iter().cloned().fold(0.0, f64::max);
    let values = if max > 0.0 {
        map.values.iter().map(|&v| v / max).collect()
    } else {
        map.values.clone()
    };
    DistanceMap {
        width: map.width,
        height: map.height,
        values,
        normalization: Normalization::UnitMax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn mask(w: usize, h: usize, fg: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| fg.contains(&(x, y))).unwrap()
    }

    fn random_mask(rng: &mut ChaCha20Rng, w: usize, h: usize, density: f64) -> BinaryMask {
        let pixels = (0..w * h).map(|_| rng.gen_bool(density) as u8).collect();
        BinaryMask::new(w, h, pixels).unwrap()
    }

    #[test]
    fn all_background_is_all_zero() {
        let m = BinaryMask::new(5, 5, vec![0; 25]).unwrap();
        assert!(edt_exact(&m).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_center_foreground_pixel() {
        let m = mask(5, 5, &[(2, 2)]);
        let d = edt_exact(&m);
        assert_eq!(d.get(2, 2), 1.0);
        let others: f64 = d.values().iter().sum();
        assert_eq!(others, 1.0);
    }

    #[test]
    fn central_3x3_block() {
        let fg: Vec<(usize, usize)> = (1..4).flat_map(|y| (1..4).map(move |x| (x, y))).collect();
        let m = mask(5, 5, &fg);
        let d = edt_exact(&m);
        assert!((d.get(2, 2) - 2.0).abs() < 1e-12);
        for &(x, y) in &[(2, 1), (1, 2), (3, 2), (2, 3), (1, 1), (3, 1), (1, 3), (3, 3)] {
            assert!((d.get(x, y) - 1.0).abs() < 1e-12, "at ({x},{y})");
        }
        let oracle = edt_bruteforce(&m).unwrap();
        for (a, b) in d.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn all_foreground_saturates_to_diagonal() {
        let m = BinaryMask::new(4, 4, vec![1; 16]).unwrap();
        for d in [edt_exact(&m), edt_bruteforce(&m).unwrap()] {
            for &v in d.values() {
                assert!((v - 32f64.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_row_adjacent_background() {
        let m = BinaryMask::new(7, 1, vec![0, 0, 0, 1, 0, 0, 0]).unwrap();
        let d = edt_bruteforce(&m).unwrap();
        assert_eq!(d.get(3, 0), 1.0);
        assert_eq!(d.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn oracle_cap_enforced() {
        let m = BinaryMask::new(10, 10, vec![0; 100]).unwrap();
        assert!(matches!(
            edt_bruteforce_with_cap(&m, 50),
            Err(crate::error::Error::OracleTooLarge { pixels: 100, cap: 50 })
        ));
    }

    #[test]
    fn zero_sized_mask_rejected() {
        assert!(BinaryMask::new(0, 5, vec![]).is_err());
    }

    #[test]
    fn exact_matches_oracle_on_random_masks() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for case in 0..40 {
            let w = rng.gen_range(1..=32);
            let h = rng.gen_range(1..=32);
            let density: f64 = rng.gen_range(0.05..0.95);
            let m = random_mask(&mut rng, w, h, density);
            let a = edt_exact(&m);
            let b = edt_bruteforce(&m).unwrap();
            for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
                assert!(
                    (x - y).abs() < 1e-5,
                    "case {case} pixel {i}: exact {x} vs oracle {y}"
                );
            }
        }
    }

    #[test]
    fn checkerboard_matches_oracle() {
        let m = BinaryMask::from_fn(16, 16, |x, y| (x + y) % 2 == 0).unwrap();
        let a = edt_exact(&m);
        let b = edt_bruteforce(&m).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn transpose_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m = random_mask(&mut rng, 13, 9, 0.4);
            let d = edt_exact(&m);
            let dt_of_t = edt_exact(&m.transposed());
            assert_eq!(d.transposed().values(), dt_of_t.values());
        }
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        // Foreground confined to an interior block, then shifted by (2, 1).
        let block = random_mask(&mut rng, 5, 5, 0.7);
        let m = BinaryMask::from_fn(20, 20, |x, y| {
            (4..9).contains(&x) && (4..9).contains(&y) && block.get(x - 4, y - 4) == 1
        })
        .unwrap();
        let shifted = BinaryMask::from_fn(20, 20, |x, y| {
            x >= 2 && y >= 1 && m.get(x - 2, y - 1) == 1
        })
        .unwrap();
        let d = edt_exact(&m);
        let ds = edt_exact(&shifted);
        for y in 0..19 {
            for x in 0..18 {
                assert_eq!(d.get(x, y), ds.get(x + 2, y + 1));
            }
        }
    }

    #[test]
    fn lipschitz_bound_on_adjacent_pixels() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let m = random_mask(&mut rng, 32, 32, 0.6);
        let d = edt_exact(&m);
        let lim = 2f64.sqrt() + 1e-6;
        for y in 0..32 {
            for x in 0..32 {
                if x + 1 < 32 {
                    assert!((d.get(x, y) - d.get(x + 1, y)).abs() <= lim);
                }
                if y + 1 < 32 {
                    assert!((d.get(x, y) - d.get(x, y + 1)).abs() <= lim);
                }
            }
        }
    }

    #[test]
    fn foreground_values_at_least_one_in_raw_mode() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let m = random_mask(&mut rng, 24, 24, 0.5);
        let d = edt_exact(&m);
        for y in 0..24 {
            for x in 0..24 {
                if m.get(x, y) == 1 {
                    assert!(d.get(x, y) >= 1.0);
                } else {
                    assert_eq!(d.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn normalize_scales_to_unit_max_and_is_idempotent() {
        let m = mask(5, 5, &[(2, 2), (3, 2)]);
        let raw = edt_exact(&m);
        let n1 = normalize_dt(&raw);
        assert_eq!(n1.normalization(), Normalization::UnitMax);
        let max = n1.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        let n2 = normalize_dt(&n1);
        assert_eq!(n1.values(), n2.values());
    }

    #[test]
    fn normalize_passes_all_zero_through() {
        let m = BinaryMask::new(3, 3, vec![0; 9]).unwrap();
        let n = normalize_dt(&edt_exact(&m));
        assert!(n.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_divides_by_max() {
        let d = DistanceMap::from_values(2, 1, vec![4.0, 2.0], Normalization::Raw).unwrap();
        let n = normalize_dt(&d);
        assert_eq!(n.values(), &[1.0, 0.5]);
    }
}
