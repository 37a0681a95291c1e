use super::BinaryMask;
use crate::dataset::Image;

/// Otsu's threshold over the 256-bin histogram.
///
/// Returns the level maximizing between-class variance, with the classes
/// `<= level` and `> level`. The comparison is done in exact integer
/// arithmetic, so ties go to the smallest level. A constant image has no
/// valid split and returns its own intensity.
///
/// The mask marks pixels above the level (the bright brain tissue in these
/// slices); `invert` flips that.
pub fn otsu_threshold(img: &Image, invert: bool) -> (u8, BinaryMask) {
    let level = otsu_level(img);
    let bits = img
        .pixels()
        .iter()
        .map(|&p| (p > level) != invert)
        .collect();
    (level, BinaryMask::from_bits(img.width(), img.height(), bits))
}

pub fn otsu_level(img: &Image) -> u8 {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    // sigma_between ∝ (s0*n1 - s1*n0)^2 / (n0*n1); compared as cross products
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..=255usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = (s0 as i128) * (n1 as i128) - (s1 as i128) * (n0 as i128);
        let num = diff.unsigned_abs() * diff.unsigned_abs();
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    match best {
        Some((t, _, _)) => t,
        None => img.pixels()[0],
    }
}
