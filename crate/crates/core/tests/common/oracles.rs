//! Independent reference implementations used only by tests. Nothing here
//! calls into the code paths it is used to check.

#![allow(dead_code)]

/// Solve the C-SVM dual `max eᵀα - ½ αᵀQα`, `0 <= α <= c`, `yᵀα = 0` by
/// accelerated projected gradient ascent with adaptive restart. `k(i, j)`
/// gives kernel entries.
pub fn projected_gradient_dual_fn(n: usize, k: impl Fn(usize, usize) -> f64, y: &[f64], c: f64) -> Vec<f64> {
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k(i, j)).collect()).collect();
    // Gershgorin bound on the largest eigenvalue of Q
    let lip = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * a[j]).sum::<f64>()).collect()
    };
    let project = |v: &[f64]| -> Vec<f64> {
        let clip = |lambda: f64| -> Vec<f64> { (0..n).map(|i| (v[i] - lambda * y[i]).clamp(0.0, c)).collect() };
        let h = |lambda: f64| -> f64 { clip(lambda).iter().zip(y).map(|(a, y)| a * y).sum() };
        let bound = v.iter().map(|x| x.abs()).fold(0.0f64, f64::max) + c + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clip(0.5 * (lo + hi))
    };

    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..400_000 {
        let g = grad(&z);
        let cand: Vec<f64> = (0..n).map(|i| z[i] + step * g[i]).collect();
        let x_new = project(&cand);
        // restart momentum when it points against the ascent direction
        let dot: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
        let t_new = if dot < 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if dot < 0.0 { 0.0 } else { (t - 1.0) / t_new };
        let delta = (0..n).map(|i| (x_new[i] - x[i]).abs()).fold(0.0f64, f64::max);
        z = (0..n).map(|i| x_new[i] + beta * (x_new[i] - x[i])).collect();
        x = x_new;
        t = t_new;
        if delta < 1e-16 && dot >= 0.0 {
            break;
        }
    }
    x
}

/// Eligibility-filter-then-sort anchor rows, written straight from the case
/// definitions. `eligible(query, candidate)` decides membership; ties in
/// distance go to the lower index.
pub fn brute_force_anchor_rows(
    queries: &[usize],
    n: usize,
    dist: impl Fn(usize, usize) -> f64,
    eligible: impl Fn(usize, usize) -> bool,
    k: usize,
) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|&q| {
            let mut cands: Vec<(f64, usize)> = (0..n).filter(|&j| eligible(q, j)).map(|j| (dist(q, j), j)).collect();
            // insertion sort: simple and obviously stable
            for a in 1..cands.len() {
                let mut b = a;
                while b > 0 && (cands[b - 1].0 > cands[b].0 || (cands[b - 1].0 == cands[b].0 && cands[b - 1].1 > cands[b].1)) {
                    cands.swap(b - 1, b);
                    b -= 1;
                }
            }
            cands.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Direct 8-neighbour uniform LBP histogram over interior pixels. Neighbour
/// order starts east and runs counter-clockwise; bit set when the neighbour is
/// strictly brighter than the centre.
pub fn naive_lbp_histogram(gray: &[f64], h: usize, w: usize) -> Vec<f64> {
    let offsets: [(i64, i64); 8] = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)];
    let transitions = |code: u32| -> u32 {
        (0..8).filter(|&b| ((code >> b) & 1) != ((code >> ((b + 1) % 8)) & 1)).count() as u32
    };
    let uniform: Vec<u32> = (0..256u32).filter(|&c| transitions(c) <= 2).collect();
    assert_eq!(uniform.len(), 58);
    let mut hist = vec![0.0; 59];
    let mut count = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let center = gray[y * w + x];
            let mut code = 0u32;
            for (bit, (dy, dx)) in offsets.iter().enumerate() {
                let v = gray[((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
                if v > center {
                    code |= 1 << bit;
                }
            }
            let bin = uniform.iter().position(|&u| u == code).unwrap_or(58);
            hist[bin] += 1.0;
            count += 1.0;
        }
    }
    hist.iter().map(|v| v / count).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let lp = f(&probe);
            probe[i] = orig - eps;
            let lm = f(&probe);
            probe[i] = orig;
            (lp - lm) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
