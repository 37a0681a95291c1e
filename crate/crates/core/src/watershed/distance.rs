use super::{BinaryMask, DistanceMap};

/// Exact Euclidean distance transform (Meijster et al. separable scheme,
/// integer arithmetic).
///
/// Foreground pixels get the distance to the nearest background pixel,
/// where everything outside the image counts as background; background
/// pixels get 0.
pub fn distance_transform(mask: &BinaryMask) -> DistanceMap {
    let (w, h) = (mask.width(), mask.height());
    // one-pixel background frame
    let (pw, ph) = (w + 2, h + 2);
    let fg = |x: usize, y: usize| -> bool {
        x > 0 && y > 0 && x <= w && y <= h && mask.get(x - 1, y - 1)
    };
    let inf = (pw + ph) as i64;

    // column pass: vertical distance to nearest background
    let mut g = vec![0i64; pw * ph];
    for x in 0..pw {
        g[x] = if fg(x, 0) { inf } else { 0 };
        for y in 1..ph {
            g[y * pw + x] = if fg(x, y) { g[(y - 1) * pw + x] + 1 } else { 0 };
        }
        for y in (0..ph - 1).rev() {
            let below = g[(y + 1) * pw + x];
            if below < g[y * pw + x] {
                g[y * pw + x] = below + 1;
            }
        }
    }

    // row pass: lower envelope of parabolas (x - i)^2 + g(i)^2
    let mut sq = vec![0i64; pw * ph];
    let mut s = vec![0usize; pw];
    let mut t = vec![0i64; pw];
    for y in 0..ph {
        let row = &g[y * pw..(y + 1) * pw];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + row[u].pow(2) - row[i].pow(2)).div_euclid(2 * (uu - ii))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..pw {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let wsep = 1 + sep(s[q as usize], u);
                if wsep < pw as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = wsep;
                }
            }
        }
        for u in (0..pw).rev() {
            sq[y * pw + u] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }

    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| (sq[(y + 1) * pw + x + 1] as f64).sqrt())
        .collect();
    DistanceMap::new(w, h, values)
}
