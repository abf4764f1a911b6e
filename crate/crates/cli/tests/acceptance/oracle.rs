//! Brute-force reference implementations the library is checked against.
//! None of them call into the code under test beyond reading masks.

use earseg::LabelMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn count_pixels(gt: &LabelMask, pred: &LabelMask) -> Counts {
    let mut c = Counts::default();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (gt.is_ear(x, y), pred.is_ear(x, y)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// `[accuracy, iou, precision, recall, overlap]` straight from set sizes.
pub fn scores(gt: &LabelMask, pred: &LabelMask) -> [f64; 5] {
    let c = count_pixels(gt, pred);
    let g = (0..gt.height())
        .flat_map(|y| (0..gt.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| gt.is_ear(x, y))
        .count() as u64;
    let r = (0..pred.height())
        .flat_map(|y| (0..pred.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| pred.is_ear(x, y))
        .count() as u64;
    [
        ratio(c.tp + c.tn, c.tp + c.fp + c.fn_ + c.tn, 0.0),
        ratio(c.tp, c.tp + c.fp + c.fn_, 1.0),
        ratio(c.tp, c.tp + c.fp, 0.0),
        ratio(c.tp, c.tp + c.fn_, 0.0),
        ratio(2 * c.tp, g + r, 1.0),
    ]
}

/// Regions found by depth-first flood fill, in raster order of their first
/// pixel. Each region is its list of pixels.
pub fn flood_fill_regions(mask: &LabelMask, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.is_ear(x0, y0) || seen[y0 * w + x0] {
                continue;
            }
            let mut region = Vec::new();
            let mut stack = vec![(x0, y0)];
            seen[y0 * w + x0] = true;
            while let Some((x, y)) = stack.pop() {
                region.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.is_ear(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            regions.push(region);
        }
    }
    regions
}

/// Keeps the two largest flood-fill regions; equal sizes favor the region
/// found first in raster order.
pub fn top_two(mask: &LabelMask, eight: bool) -> LabelMask {
    let regions = flood_fill_regions(mask, eight);
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| regions[b].len().cmp(&regions[a].len()).then(a.cmp(&b)));
    let mut out = LabelMask::new(mask.width(), mask.height());
    for &k in order.iter().take(2) {
        for &(x, y) in &regions[k] {
            out.set(x, y, true);
        }
    }
    out
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation, zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Central-difference derivative of `f` at every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest element-wise relative error. Values whose magnitudes are both
/// below `floor` are compared against `floor` instead.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
