use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rotation,
    Flip,
    Affine,
    Color,
    Filter,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Rotation,
        Family::Flip,
        Family::Affine,
        Family::Color,
        Family::Filter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rotation => "rotation",
            Family::Flip => "flip",
            Family::Affine => "affine",
            Family::Color => "color",
            Family::Filter => "filter",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorParam {
    Brightness,
    Saturation,
    Contrast,
    Hue,
}

/// One domain-shifting image transformation.
///
/// Parameter ranges: rotation degrees in `[0, 90]`; affine scale in
/// `[0.25, 4]` and shear in `[-1, 1]`; brightness, saturation and contrast
/// factors in `[0, 5]`; hue shift in `[-0.5, 0.5]` turns; box radius in
/// `1..=8`; Gaussian sigma in `(0, 8]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Counter-clockwise rotation about the image center.
    Rotation { degrees: f64 },
    Flip { axis: FlipAxis },
    /// Scale about the center followed by a horizontal shear.
    Affine { scale: f64, shear: f64 },
    Color { param: ColorParam, factor: f64 },
    BoxBlur { radius: usize },
    Gaussian { sigma: f64 },
}

impl TransformSpec {
    pub fn family(&self) -> Family {
        match self {
            TransformSpec::Rotation { .. } => Family::Rotation,
            TransformSpec::Flip { .. } => Family::Flip,
            TransformSpec::Affine { .. } => Family::Affine,
            TransformSpec::Color { .. } => Family::Color,
            TransformSpec::BoxBlur { .. } | TransformSpec::Gaussian { .. } => Family::Filter,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TransformSpec::Rotation { degrees } => format!("rotation_{degrees}"),
            TransformSpec::Flip { axis: FlipAxis::Horizontal } => "flip_horizontal".into(),
            TransformSpec::Flip { axis: FlipAxis::Vertical } => "flip_vertical".into(),
            TransformSpec::Affine { scale, shear } => format!("affine_s{scale}_h{shear}"),
            TransformSpec::Color { param, factor } => {
                let p = match param {
                    ColorParam::Brightness => "brightness",
                    ColorParam::Saturation => "saturation",
                    ColorParam::Contrast => "contrast",
                    ColorParam::Hue => "hue",
                };
                format!("color_{p}_{factor}")
            }
            TransformSpec::BoxBlur { radius } => format!("filter_box_r{radius}"),
            TransformSpec::Gaussian { sigma } => format!("filter_gauss_s{sigma}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |what: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Precondition(format!(
                    "{what} {v} outside [{lo}, {hi}]"
                )))
            }
        };
        match *self {
            TransformSpec::Rotation { degrees } => range("rotation degrees", degrees, 0.0, 90.0),
            TransformSpec::Flip { .. } => Ok(()),
            TransformSpec::Affine { scale, shear } => {
                range("affine scale", scale, 0.25, 4.0)?;
                range("affine shear", shear, -1.0, 1.0)
            }
            TransformSpec::Color { param: ColorParam::Hue, factor } => {
                range("hue shift", factor, -0.5, 0.5)
            }
            TransformSpec::Color { factor, .. } => range("color factor", factor, 0.0, 5.0),
            TransformSpec::BoxBlur { radius } => range("box radius", radius as f64, 1.0, 8.0),
            TransformSpec::Gaussian { sigma } => {
                if sigma <= 0.0 {
                    return Err(Error::Precondition(format!("gaussian sigma {sigma} must be positive")));
                }
                range("gaussian sigma", sigma, 0.0, 8.0)
            }
        }
    }
}

/// The 53 default domain shifts.
///
/// * rotation: 0..=90 degrees in 15 degree steps (7)
/// * flip: horizontal and vertical (2)
/// * affine: scale {0.5, 0.75, 1, 1.25, 1.5, 1.75, 2} x shear {0, 0.3} (14)
/// * color: 5 levels for each of brightness, saturation, contrast, hue (20)
/// * filter: box radius 1..=5 and Gaussian sigma {0.5, 1, 1.5, 2, 2.5} (10)
pub fn default_domain_specs() -> Vec<TransformSpec> {
    let mut specs = Vec::with_capacity(53);
    for i in 0..7 {
        specs.push(TransformSpec::Rotation {
            degrees: 15.0 * i as f64,
        });
    }
    specs.push(TransformSpec::Flip {
        axis: FlipAxis::Horizontal,
    });
    specs.push(TransformSpec::Flip {
        axis: FlipAxis::Vertical,
    });
    for shear in [0.0, 0.3] {
        for i in 0..7 {
            specs.push(TransformSpec::Affine {
                scale: 0.5 + 0.25 * i as f64,
                shear,
            });
        }
    }
    let levels: [(ColorParam, [f64; 5]); 4] = [
        (ColorParam::Brightness, [0.3, 0.6, 1.4, 1.8, 2.5]),
        (ColorParam::Saturation, [0.0, 0.5, 1.5, 2.0, 3.0]),
        (ColorParam::Contrast, [0.3, 0.6, 1.4, 1.8, 2.5]),
        (ColorParam::Hue, [0.1, 0.2, 0.3, 0.4, 0.5]),
    ];
    for (param, factors) in levels {
        for factor in factors {
            specs.push(TransformSpec::Color { param, factor });
        }
    }
    for radius in 1..=5 {
        specs.push(TransformSpec::BoxBlur { radius });
    }
    for i in 1..=5 {
        specs.push(TransformSpec::Gaussian {
            sigma: 0.5 * i as f64,
        });
    }
    specs
}

struct Image<'a> {
    h: usize,
    w: usize,
    c: usize,
    px: &'a [f64],
}

impl Image<'_> {
    fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.px[(y * self.w + x) * self.c + ch]
    }

    /// Bilinear sample at fractional coordinates; zero outside the image.
    fn bilinear(&self, y: f64, x: f64, ch: usize) -> f64 {
        let (hmax, wmax) = ((self.h - 1) as f64, (self.w - 1) as f64);
        let tol = 1e-9;
        if y < -tol || x < -tol || y > hmax + tol || x > wmax + tol {
            return 0.0;
        }
        let y = y.clamp(0.0, hmax);
        let x = x.clamp(0.0, wmax);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        if fy == 0.0 && fx == 0.0 {
            return self.at(y0, x0, ch);
        }
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let top = self.at(y0, x0, ch) * (1.0 - fx) + self.at(y0, x1, ch) * fx;
        let bot = self.at(y1, x0, ch) * (1.0 - fx) + self.at(y1, x1, ch) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Output pixel `(r, c)` reads the source at `inv(dy, dx)` relative to the center.
    fn resample(&self, inv: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
        let cy = (self.h as f64 - 1.0) / 2.0;
        let cx = (self.w as f64 - 1.0) / 2.0;
        let mut out = vec![0.0; self.px.len()];
        for r in 0..self.h {
            for col in 0..self.w {
                let (sy, sx) = inv(r as f64 - cy, col as f64 - cx);
                for ch in 0..self.c {
                    out[(r * self.w + col) * self.c + ch] = self.bilinear(cy + sy, cx + sx, ch);
                }
            }
        }
        out
    }

    /// Separable convolution with clamp-to-edge padding.
    fn convolve_separable(&self, kernel: &[f64]) -> Vec<f64> {
        let rad = (kernel.len() / 2) as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut tmp = vec![0.0; self.px.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    let mut acc = 0.0;
                    for (k, &wt) in kernel.iter().enumerate() {
                        let xx = clamp(x as isize + k as isize - rad, self.w);
                        acc += wt * self.at(y, xx, ch);
                    }
                    tmp[(y * self.w + x) * self.c + ch] = acc;
                }
            }
        }
        let mut out = vec![0.0; self.px.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    let mut acc = 0.0;
                    for (k, &wt) in kernel.iter().enumerate() {
                        let yy = clamp(y as isize + k as isize - rad, self.h);
                        acc += wt * tmp[(yy * self.w + x) * self.c + ch];
                    }
                    out[(y * self.w + x) * self.c + ch] = acc;
                }
            }
        }
        out
    }
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    let h = if d == 0.0 {
        0.0
    } else if mx == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if mx == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if mx == 0.0 { 0.0 } else { d / mx };
    (h, s, mx)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Applies `spec` to one `[height, width, channels]` image with values in `[0, 1]`.
pub fn apply_transform(image: &Tensor, spec: &TransformSpec) -> Result<Tensor> {
    spec.validate()?;
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::Shape {
            node: format!("apply_transform({})", spec.name()),
            expected: vec![0, 0, 0],
            got: shape.to_vec(),
        });
    }
    let img = Image {
        h: shape[0],
        w: shape[1],
        c: shape[2],
        px: image.data(),
    };
    let out = match *spec {
        TransformSpec::Rotation { degrees } => {
            // exact trig on the quarter turns keeps 0 and 90 degrees lossless
            let (sin, cos) = if degrees == 0.0 {
                (0.0, 1.0)
            } else if degrees == 90.0 {
                (1.0, 0.0)
            } else {
                degrees.to_radians().sin_cos()
            };
            img.resample(|dy, dx| (sin * dx + cos * dy, cos * dx - sin * dy))
        }
        TransformSpec::Flip { axis } => {
            let mut out = vec![0.0; img.px.len()];
            for r in 0..img.h {
                for col in 0..img.w {
                    let (sr, sc) = match axis {
                        FlipAxis::Horizontal => (r, img.w - 1 - col),
                        FlipAxis::Vertical => (img.h - 1 - r, col),
                    };
                    for ch in 0..img.c {
                        out[(r * img.w + col) * img.c + ch] = img.at(sr, sc, ch);
                    }
                }
            }
            out
        }
        TransformSpec::Affine { scale, shear } => {
            img.resample(|dy, dx| (dy / scale, (dx - shear * dy) / scale))
        }
        TransformSpec::Color { param, factor } => color(&img, param, factor, spec)?,
        TransformSpec::BoxBlur { radius } => {
            let k = 2 * radius + 1;
            img.convolve_separable(&vec![1.0 / k as f64; k])
        }
        TransformSpec::Gaussian { sigma } => {
            let rad = (3.0 * sigma).ceil() as isize;
            let mut k: Vec<f64> = (-rad..=rad)
                .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = k.iter().sum();
            k.iter_mut().for_each(|v| *v /= total);
            img.convolve_separable(&k)
        }
    };
    Tensor::new(shape.to_vec(), out)
}

fn color(img: &Image<'_>, param: ColorParam, factor: f64, spec: &TransformSpec) -> Result<Vec<f64>> {
    let needs_rgb = matches!(param, ColorParam::Saturation | ColorParam::Hue);
    if needs_rgb && img.c != 3 {
        return Err(Error::Shape {
            node: format!("apply_transform({})", spec.name()),
            expected: vec![img.h, img.w, 3],
            got: vec![img.h, img.w, img.c],
        });
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let px = img.px;
    let mut out = vec![0.0; px.len()];
    match param {
        ColorParam::Brightness => {
            for (o, &v) in out.iter_mut().zip(px) {
                *o = clamp(v * factor);
            }
        }
        ColorParam::Saturation => {
            for (o, p) in out.chunks_mut(3).zip(px.chunks(3)) {
                let gray = luma(p[0], p[1], p[2]);
                for ch in 0..3 {
                    o[ch] = clamp(gray + factor * (p[ch] - gray));
                }
            }
        }
        ColorParam::Contrast => {
            let mean = if img.c == 3 {
                px.chunks(3).map(|p| luma(p[0], p[1], p[2])).sum::<f64>() / (img.h * img.w) as f64
            } else {
                px.iter().sum::<f64>() / px.len() as f64
            };
            for (o, &v) in out.iter_mut().zip(px) {
                *o = clamp(mean + factor * (v - mean));
            }
        }
        ColorParam::Hue => {
            for (o, p) in out.chunks_mut(3).zip(px.chunks(3)) {
                let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
                let (r, g, b) = hsv_to_rgb(h + factor, s, v);
                o[0] = r;
                o[1] = g;
                o[2] = b;
            }
        }
    }
    Ok(out)
}
