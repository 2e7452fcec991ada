//! Scalar-loop f64 re-implementation of the generator's training-mode
//! forward pass, reading weights by name from a trained or fresh
//! [`Generator`]. Used as a finite-difference reference: f64 lets the
//! step size shrink far enough that ReLU and batch-norm kinks stop
//! polluting the estimate.

use std::collections::HashMap;

use flimsr_core::networks::Generator;
use flimsr_core::nn::Tensor;

#[derive(Clone)]
pub struct T {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl T {
    fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, d: vec![0.0; n * c * h * w] }
    }

    fn at(&self, s: usize, c: usize, y: usize, x: usize) -> f64 {
        self.d[((s * self.c + c) * self.h + y) * self.w + x]
    }

    fn at_mut(&mut self, s: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.d[((s * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self { n: t.n, c: t.c, h: t.h, w: t.w, d: t.data.iter().map(|&v| v as f64).collect() }
    }
}

pub struct Oracle {
    pub params: HashMap<String, Vec<f64>>,
    /// Global flat index -> (tensor name, offset inside it).
    pub index: Vec<(String, usize)>,
    widths: Vec<usize>,
    convs: usize,
}

impl Oracle {
    pub fn new(g: &Generator) -> Self {
        let cfg = g.config();
        assert_eq!(cfg.time_embed_dim, 0, "oracle covers the unconditioned generator");
        let mut params = HashMap::new();
        let mut index = Vec::new();
        for sl in g.params().slices() {
            let v = &g.params().values()[sl.offset..sl.offset + sl.len()];
            params.insert(sl.name.clone(), v.iter().map(|&x| x as f64).collect());
            index.extend((0..sl.len()).map(|i| (sl.name.clone(), i)));
        }
        Self { params, index, widths: cfg.widths(), convs: cfg.convs_per_block }
    }

    fn p(&self, name: &str) -> &[f64] {
        self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn param_mut(&mut self, flat: usize) -> &mut f64 {
        let (name, i) = self.index[flat].clone();
        &mut self.params.get_mut(&name).unwrap()[i]
    }

    fn conv(&self, x: &T, prefix: &str, bias: bool) -> T {
        let wt = self.p(&format!("{prefix}.weight"));
        let cout = wt.len() / (9 * x.c);
        let mut y = T::zeros(x.n, cout, x.h, x.w);
        let b = bias.then(|| self.p(&format!("{prefix}.bias")));
        for s in 0..x.n {
            for co in 0..cout {
                for oy in 0..x.h {
                    for ox in 0..x.w {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..x.c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = oy as isize + ky as isize - 1;
                                    let ix = ox as isize + kx as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += wt[((co * x.c + ci) * 3 + ky) * 3 + kx] * x.at(s, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        *y.at_mut(s, co, oy, ox) = acc;
                    }
                }
            }
        }
        y
    }

    fn bn_relu(&self, x: &mut T, prefix: &str) {
        let gamma = self.p(&format!("{prefix}.gamma")).to_vec();
        let beta = self.p(&format!("{prefix}.beta")).to_vec();
        let plane = x.h * x.w;
        let count = (x.n * plane) as f64;
        for c in 0..x.c {
            let idx = |s: usize, i: usize| (s * x.c + c) * plane + i;
            let mut mean = 0.0;
            for s in 0..x.n {
                for i in 0..plane {
                    mean += x.d[idx(s, i)];
                }
            }
            mean /= count;
            let mut var = 0.0;
            for s in 0..x.n {
                for i in 0..plane {
                    var += (x.d[idx(s, i)] - mean).powi(2);
                }
            }
            var /= count;
            let istd = 1.0 / (var + 1e-5).sqrt();
            for s in 0..x.n {
                for i in 0..plane {
                    let v = gamma[c] * (x.d[idx(s, i)] - mean) * istd + beta[c];
                    x.d[idx(s, i)] = v.max(0.0);
                }
            }
        }
    }

    fn block(&self, x: &T, name: &str) -> T {
        let mut h = x.clone();
        for j in 0..self.convs {
            h = self.conv(&h, &format!("{name}.unit{j}.conv"), false);
            self.bn_relu(&mut h, &format!("{name}.unit{j}.bn"));
        }
        for s in 0..x.n {
            for c in 0..x.c.min(h.c) {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        *h.at_mut(s, c, y, xx) += x.at(s, c, y, xx);
                    }
                }
            }
        }
        h
    }

    pub fn forward(&self, x: &T) -> T {
        let levels = self.widths.len();
        let mut skips: Vec<T> = Vec::new();
        let mut h = x.clone();
        for i in 0..levels {
            if i > 0 {
                h = pool(skips.last().unwrap());
            }
            h = self.block(&h, &format!("enc{i}"));
            skips.push(h.clone());
        }
        let mut d = self.block(&h, &format!("dec{}", levels - 1));
        for i in (0..levels - 1).rev() {
            let up = upsample(&d);
            let skip = &skips[i];
            let mut cat = T::zeros(skip.n, skip.c + up.c, skip.h, skip.w);
            for s in 0..skip.n {
                for c in 0..cat.c {
                    for y in 0..skip.h {
                        for xx in 0..skip.w {
                            let v = if c < skip.c { skip.at(s, c, y, xx) } else { up.at(s, c - skip.c, y, xx) };
                            *cat.at_mut(s, c, y, xx) = v;
                        }
                    }
                }
            }
            d = self.block(&cat, &format!("dec{i}"));
        }
        self.conv(&d, "head", true)
    }
}

fn pool(x: &T) -> T {
    let mut y = T::zeros(x.n, x.c, x.h / 2, x.w / 2);
    for s in 0..x.n {
        for c in 0..x.c {
            for oy in 0..y.h {
                for ox in 0..y.w {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x.at(s, c, 2 * oy + dy, 2 * ox + dx);
                        }
                    }
                    *y.at_mut(s, c, oy, ox) = acc / 4.0;
                }
            }
        }
    }
    y
}

/// Half-pixel bilinear ×2 with edge clamping.
fn upsample(x: &T) -> T {
    let tap = |o: usize, len: usize| {
        let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut y = T::zeros(x.n, x.c, 2 * x.h, 2 * x.w);
    for s in 0..x.n {
        for c in 0..x.c {
            for oy in 0..y.h {
                let (y0, y1, fy) = tap(oy, x.h);
                for ox in 0..y.w {
                    let (x0, x1, fx) = tap(ox, x.w);
                    let top = (1.0 - fx) * x.at(s, c, y0, x0) + fx * x.at(s, c, y0, x1);
                    let bot = (1.0 - fx) * x.at(s, c, y1, x0) + fx * x.at(s, c, y1, x1);
                    *y.at_mut(s, c, oy, ox) = (1.0 - fy) * top + fy * bot;
                }
            }
        }
    }
    y
}
