//! Reference implementations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use forensics_forest::features::{Image, SPECTRUM_BINS};
use forensics_forest::hybrid::HeadPair;
use forensics_forest::matrix::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive search: every feature, every midpoint, strict improvement in
/// (feature, threshold) order.
pub fn brute_force_split(x: &Matrix, y: &[u8]) -> Option<(usize, f64, f64)> {
    let n = y.len();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.cols() {
        let mut vals: Vec<f64> = (0..n).map(|i| x.get(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (mut nl, mut pl, mut nr, mut pr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let pos = f64::from(y[i]);
                if x.get(i, f) <= t {
                    nl += 1.0;
                    pl += pos;
                } else {
                    nr += 1.0;
                    pr += pos;
                }
            }
            let g = |m: f64, p: f64| {
                let q = p / m;
                2.0 * q * (1.0 - q)
            };
            let score = nl / n as f64 * g(nl, pl) + nr / n as f64 * g(nr, pr);
            if best.is_none_or(|b| score < b.2) {
                best = Some((f, t, score));
            }
        }
    }
    best
}

pub fn random_dataset(rng: &mut ChaCha8Rng) -> (Matrix, Vec<u8>) {
    let n = rng.random_range(1..=50);
    let d = rng.random_range(1..=5);
    // Small integer grids force plenty of ties.
    let data = (0..n * d).map(|_| f64::from(rng.random_range(0..6u8))).collect();
    let y = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    (Matrix::from_vec(n, d, data), y)
}

/// Azimuthal bin where a horizontal sinusoid of the given period peaks,
/// computed with a direct DFT of one row and a separate ring average.
pub fn sinusoid_peak_bin(size: usize, period: f64) -> usize {
    let row: Vec<f64> = (0..size)
        .map(|x| 128.0 + 100.0 * (2.0 * std::f64::consts::PI * x as f64 / period).sin())
        .collect();
    // Every row is identical, so F(u, v) = size * X(u) when v == 0, else 0.
    let power_u: Vec<f64> = (0..size)
        .map(|u| {
            let (mut re, mut im) = (0.0, 0.0);
            for (x, &v) in row.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (u * x) as f64 / size as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im) * (size * size) as f64
        })
        .collect();
    let radii = size / 2;
    let mut sum = vec![0.0; radii];
    let mut count = vec![0.0; radii];
    let half = size as i64 / 2;
    for fy in -half..half {
        for fx in -half..half {
            let r = ((fx * fx + fy * fy) as f64).sqrt().round() as usize;
            if r >= radii {
                continue;
            }
            count[r] += 1.0;
            if fy == 0 {
                sum[r] += power_u[fx.rem_euclid(size as i64) as usize];
            }
        }
    }
    let profile: Vec<f64> = sum.iter().zip(&count).map(|(s, c)| (s / *c as f64).ln_1p()).collect();
    let bins: Vec<f64> = (0..SPECTRUM_BINS)
        .map(|i| {
            let pos = i as f64 * (radii - 1) as f64 / (SPECTRUM_BINS - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(radii - 1);
            profile[lo] + (profile[hi] - profile[lo]) * (pos - lo as f64)
        })
        .collect();
    (1..SPECTRUM_BINS).max_by(|&a, &b| bins[a].total_cmp(&bins[b])).unwrap()
}

pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            den += 1.0;
            num += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

/// Horizontal sinusoid with the given period, identical in every channel.
pub fn sinusoid_image(size: u32, period: f64) -> Image {
    Image::from_fn(size, size, |x, _| {
        let v = 128.0 + 100.0 * (2.0 * std::f64::consts::PI * f64::from(x) / period).sin();
        let v = v.round() as u8;
        [v, v, v]
    })
}

/// Largest violation of `|analytic - numeric| <= 1e-4 * max(|a|, |n|) + 1e-9`
/// over all parameters, as a ratio to the allowance (<= 1 passes).
pub fn gradient_check(pair: &mut HeadPair, x: &Matrix, y: &[u8]) -> f64 {
    let (_, analytic) = pair.loss_and_grad(x, y);
    let base = pair.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let mut q = base.clone();
        q[p] = base[p] + h;
        pair.set_params(&q);
        let up = pair.loss(x, y);
        q[p] = base[p] - h;
        pair.set_params(&q);
        let down = pair.loss(x, y);
        let numeric = (up - down) / (2.0 * h);
        let allowance = 1e-4 * analytic[p].abs().max(numeric.abs()) + 1e-9;
        worst = worst.max((analytic[p] - numeric).abs() / allowance);
    }
    pair.set_params(&base);
    worst
}

/// Random gradient-check fixture number `trial`.
pub fn gradient_fixture(trial: usize, rng: &mut ChaCha8Rng) -> (HeadPair, Matrix, Vec<u8>) {
    let dims_grid: [&[usize]; 4] = [&[8], &[16, 8], &[4, 8], &[8, 8]];
    let n = rng.random_range(3..12);
    let d = rng.random_range(2..10);
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let pair = HeadPair::init(d, dims_grid[trial % 4], 0.3, rng);
    (pair, x, y)
}
