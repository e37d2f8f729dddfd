//! Straight-from-definition scalar reference for UIQM and UCIQE, written
//! independently of the library: full 3x3 Sobel kernels, explicit block
//! loops and a numpy-style percentile.
//!
//! Pixel values are indexed as `(channel, row, column)` in a flat
//! channel-major buffer scaled to `[0, 1]`.

pub fn get(v: &[f64], h: usize, w: usize, c: usize, y: usize, x: usize) -> f64 {
    v[c * h * w + y * w + x] * 255.0
}

fn mirror(i: i64, n: i64) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

pub fn uicm(v: &[f64], h: usize, w: usize) -> f64 {
    let n = h * w;
    let mut rg = vec![];
    let mut yb = vec![];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (get(v, h, w, 0, y, x), get(v, h, w, 1, y, x), get(v, h, w, 2, y, x));
            rg.push(r - g);
            yb.push((r + g) / 2.0 - b);
        }
    }
    let stats = |mut s: Vec<f64>| {
        let all = s.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tl = (0.1 * n as f64).ceil() as usize;
        let tr = (0.1 * n as f64).floor() as usize;
        let mut sum = 0.0;
        for item in s.iter().take(n - tr).skip(tl) {
            sum += item;
        }
        let mu = sum / (n - tl - tr) as f64;
        let var = all.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        (mu, var)
    };
    let (m1, v1) = stats(rg);
    let (m2, v2) = stats(yb);
    -0.0268 * (m1 * m1 + m2 * m2).sqrt() + 0.1586 * (v1 + v2).sqrt()
}

pub fn uism(v: &[f64], h: usize, w: usize, bs: usize) -> f64 {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut total = 0.0;
    for (c, lam) in [0.299, 0.587, 0.114].iter().enumerate() {
        let mut mag = vec![vec![0.0; w]; h];
        let mut peak: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let yy = mirror(y as i64 + dy as i64 - 1, h as i64);
                        let xx = mirror(x as i64 + dx as i64 - 1, w as i64);
                        let p = get(v, h, w, c, yy, xx);
                        gx += kx[dy][dx] * p;
                        gy += kx[dx][dy] * p;
                    }
                }
                mag[y][x] = (gx * gx + gy * gy).sqrt();
                peak = peak.max(mag[y][x]);
            }
        }
        let (k1, k2) = (w / bs, h / bs);
        let mut s = 0.0;
        for by in 0..k2 {
            for bx in 0..k1 {
                let (mut lo, mut hi) = (f64::MAX, f64::MIN);
                for y in by * bs..(by + 1) * bs {
                    for x in bx * bs..(bx + 1) * bs {
                        let scaled = if peak > 0.0 { mag[y][x] * 255.0 / peak } else { 0.0 };
                        let e = scaled * get(v, h, w, c, y, x);
                        lo = lo.min(e);
                        hi = hi.max(e);
                    }
                }
                if lo != 0.0 && hi != 0.0 {
                    s += (hi / lo).ln();
                }
            }
        }
        total += lam * 2.0 / (k1 * k2) as f64 * s;
    }
    total
}

pub fn uiconm(v: &[f64], h: usize, w: usize, bs: usize) -> f64 {
    let (k1, k2) = (w / bs, h / bs);
    let mut s = 0.0;
    for by in 0..k2 {
        for bx in 0..k1 {
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for c in 0..3 {
                for y in by * bs..(by + 1) * bs {
                    for x in bx * bs..(bx + 1) * bs {
                        lo = lo.min(get(v, h, w, c, y, x));
                        hi = hi.max(get(v, h, w, c, y, x));
                    }
                }
            }
            let r = (hi - lo) / (hi + lo);
            if hi - lo != 0.0 && hi + lo != 0.0 {
                s += r * r.ln();
            }
        }
    }
    -s / (k1 * k2) as f64
}

pub fn uiqm(v: &[f64], h: usize, w: usize, bs: usize) -> f64 {
    0.0282 * uicm(v, h, w) + 0.2953 * uism(v, h, w, bs) + 3.5753 * uiconm(v, h, w, bs)
}

fn lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let lin = |c: f64| if c > 0.04045 { ((c + 0.055) / 1.055).powf(2.4) } else { c / 12.92 };
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (0.4124564 + 0.3575761 + 0.1804375, 0.2126729 + 0.7151522 + 0.0721750, 0.0193339 + 0.1191920 + 0.9503041);
    let f = |t: f64| if t > 216.0 / 24389.0 { t.powf(1.0 / 3.0) } else { (24389.0 / 27.0 * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub fn uciqe(v: &[f64], h: usize, w: usize) -> (f64, f64, f64) {
    let n = h * w;
    let (mut ls, mut cs, mut sats) = (vec![], vec![], vec![]);
    for y in 0..h {
        for x in 0..w {
            let px = |c| v[c * n + y * w + x];
            let (l, a, b) = lab(px(0), px(1), px(2));
            let c = (a * a + b * b).sqrt();
            ls.push(l / 100.0);
            cs.push(c / 100.0);
            sats.push(if c == 0.0 && l == 0.0 { 0.0 } else { c / (c * c + l * l).sqrt() });
        }
    }
    let mean = cs.iter().sum::<f64>() / n as f64;
    let sd = (cs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| {
        let pos = q * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        ls[lo] + (ls[hi] - ls[lo]) * (pos - lo as f64)
    };
    (sd, pct(0.99) - pct(0.01), sats.iter().sum::<f64>() / n as f64)
}
