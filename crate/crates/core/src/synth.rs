//! Procedural scenes and synthetic weather degradations.
//!
//! Everything here is a pure function of its seed. Element counts are given
//! for a 64×64 reference image and scale with image area, so a 32×32 image
//! receives a quarter as many drops, streaks or flakes at the same density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperweather_tensor::Tensor;

use crate::error::{Error, Result};

/// One of the synthetic degradation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WeatherClass {
    /// Blurred, brightened elliptical blobs (raindrops on a lens).
    Drop,
    /// Oriented bright streaks under a uniform veil (rain with fog).
    StreakHaze,
    /// Small white dots (snow).
    Flake,
}

impl WeatherClass {
    pub const ALL: [WeatherClass; 3] = [WeatherClass::Drop, WeatherClass::StreakHaze, WeatherClass::Flake];

    pub fn bit(self) -> u8 {
        match self {
            WeatherClass::Drop => 1,
            WeatherClass::StreakHaze => 2,
            WeatherClass::Flake => 4,
        }
    }

    pub fn index(self) -> usize {
        match self {
            WeatherClass::Drop => 0,
            WeatherClass::StreakHaze => 1,
            WeatherClass::Flake => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::AbsentClass(format!("#{i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            WeatherClass::Drop => "drop",
            WeatherClass::StreakHaze => "streak",
            WeatherClass::Flake => "flake",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drop" => Ok(WeatherClass::Drop),
            "streak" | "streak_haze" => Ok(WeatherClass::StreakHaze),
            "flake" => Ok(WeatherClass::Flake),
            other => Err(Error::AbsentClass(other.to_string())),
        }
    }
}

/// A set of classes stored as a bitmask; iteration is in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassSet(pub u8);

impl ClassSet {
    pub fn single(c: WeatherClass) -> Self {
        ClassSet(c.bit())
    }

    pub fn of(classes: &[WeatherClass]) -> Self {
        ClassSet(classes.iter().fold(0, |m, c| m | c.bit()))
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits == 0 || bits & !7 != 0 {
            return Err(Error::format("class set", format!("invalid bitmask {bits:#04x}")));
        }
        Ok(ClassSet(bits))
    }

    pub fn classes(self) -> Vec<WeatherClass> {
        WeatherClass::ALL.into_iter().filter(|c| self.0 & c.bit() != 0).collect()
    }

    pub fn contains(self, c: WeatherClass) -> bool {
        self.0 & c.bit() != 0
    }

    /// The class when exactly one is present.
    pub fn single_class(self) -> Option<WeatherClass> {
        match self.classes().as_slice() {
            [c] => Some(*c),
            _ => None,
        }
    }
}

/// SplitMix64 mix of `seed` and a stream index; used to derive independent
/// sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed used for `class` inside [`degrade`]; it depends on the class, not
/// on its position in the list, so degradations compose.
pub fn class_seed(seed: u64, class: WeatherClass) -> u64 {
    derive_seed(seed, 0x5EED_0000 + class.bit() as u64)
}

/// An `h×w` RGB image buffer.
struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match t.shape() {
            [3, h, w] => Ok(Canvas {
                h: *h,
                w: *w,
                data: t.data().to_vec(),
            }),
            s => Err(Error::Contract(format!("expected a [3,H,W] image, got {s:?}"))),
        }
    }

    fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn blend(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        for (c, &col) in color.iter().enumerate() {
            let p = &mut self.data[(c * self.h + y) * self.w + x];
            *p = (1.0 - alpha) * *p + alpha * col;
        }
    }

    fn clamp(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    fn into_tensor(self) -> Result<Tensor<f32>> {
        Ok(Tensor::new(&[3, self.h, self.w], self.data)?)
    }
}

/// Element counts are specified for a 64×64 image. Drops scale with the
/// image, so their count is fixed; streak length scales with the height, so
/// their count follows the side length; flakes have a fixed pixel radius,
/// so their count follows the area. Coverage is then resolution-independent.
#[derive(Debug, Clone, Copy)]
enum CountScaling {
    Fixed,
    Side,
    Area,
}

fn count_scale(scaling: CountScaling, h: usize, w: usize) -> f64 {
    let area = (h * w) as f64 / 4096.0;
    match scaling {
        CountScaling::Fixed => 1.0,
        CountScaling::Side => area.sqrt(),
        CountScaling::Area => area,
    }
}

/// Element count for a reference range `[lo, hi]` rescaled to `h×w`; the
/// upper end grows with severity.
fn element_count(
    rng: &mut ChaCha8Rng,
    (lo, hi): (usize, usize),
    scaling: CountScaling,
    severity: f64,
    h: usize,
    w: usize,
) -> usize {
    let a = count_scale(scaling, h, w);
    let lo = ((lo as f64 * a).round() as usize).max(1);
    let hi = ((hi as f64 * a).round() as usize).max(lo);
    let top = lo + ((hi - lo) as f64 * severity).round() as usize;
    rng.gen_range(lo..=top)
}

/// Smooth procedural scene in `[0,1]`: a two-color gradient, 3–8 flat
/// rectangles or disks and a low-amplitude value-noise texture.
pub fn gen_clean(seed: u64, h: usize, w: usize) -> Result<Tensor<f32>> {
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("scene size {h}x{w} is below the 16x16 minimum")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| -> [f32; 3] { [rng.gen(), rng.gen(), rng.gen()] };
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut canvas = Canvas {
        h,
        w,
        data: vec![0.0; 3 * h * w],
    };
    let span = dx.abs() + dy.abs();
    for y in 0..h {
        for x in 0..w {
            let u = x as f32 / (w - 1) as f32 - 0.5;
            let v = y as f32 / (h - 1) as f32 - 0.5;
            let t = ((u * dx + v * dy) / span + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                canvas.data[(c * h + y) * w + x] = 0.15 + 0.7 * ((1.0 - t) * c0[c] + t * c1[c]);
            }
        }
    }
    let shapes = rng.gen_range(3..=8);
    let side = h.min(w) as f32;
    for _ in 0..shapes {
        let col = color(&mut rng);
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let ry = rng.gen_range(0.1..0.3) * side;
        let rx = rng.gen_range(0.1..0.3) * side;
        let disk = rng.gen_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (oy, ox) = ((y as f32 + 0.5 - cy) / ry, (x as f32 + 0.5 - cx) / rx);
                let inside = if disk {
                    oy * oy + ox * ox <= 1.0
                } else {
                    oy.abs() <= 1.0 && ox.abs() <= 1.0
                };
                if inside {
                    canvas.blend(y, x, col, 0.85);
                }
            }
        }
    }
    let grid = 5;
    let lattice: Vec<f32> = (0..grid * grid).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for y in 0..h {
        for x in 0..w {
            let gy = y as f32 / (h - 1) as f32 * (grid - 1) as f32;
            let gx = x as f32 / (w - 1) as f32 * (grid - 1) as f32;
            let (y0, x0) = ((gy.floor() as usize).min(grid - 2), (gx.floor() as usize).min(grid - 2));
            let (fy, fx) = (gy - y0 as f32, gx - x0 as f32);
            let at = |yy: usize, xx: usize| lattice[yy * grid + xx];
            let n = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            for c in 0..3 {
                canvas.data[(c * h + y) * w + x] += 0.04 * n;
            }
        }
    }
    canvas.clamp();
    canvas.into_tensor()
}

fn box_blur(src: &Canvas, radius: usize) -> Canvas {
    let (h, w) = (src.h, src.w);
    let mut out = Canvas {
        h,
        w,
        data: vec![0.0; 3 * h * w],
    };
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                    for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                        s += src.get(c, yy, xx);
                        n += 1.0;
                    }
                }
                out.data[(c * h + y) * w + x] = s / n;
            }
        }
    }
    out
}

fn apply_drop(canvas: &mut Canvas, severity: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (canvas.h, canvas.w);
    let count = element_count(&mut rng, (5, 20), CountScaling::Fixed, severity, h, w);
    let blurred = box_blur(canvas, 2);
    let side = h.min(w) as f32;
    let sev = severity as f32;
    for _ in 0..count {
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let ry = rng.gen_range(0.07..0.16) * side;
        let rx = rng.gen_range(0.07..0.16) * side;
        let lift = rng.gen_range(0.15..0.35) * sev;
        for y in 0..h {
            for x in 0..w {
                let (oy, ox) = ((y as f32 + 0.5 - cy) / ry, (x as f32 + 0.5 - cx) / rx);
                let r2 = oy * oy + ox * ox;
                if r2 > 1.0 {
                    continue;
                }
                let alpha = sev * (0.8 + 0.2 * (1.0 - r2));
                let col = [0, 1, 2].map(|c| blurred.get(c, y, x) + lift);
                canvas.blend(y, x, col, alpha);
            }
        }
    }
}

fn apply_streak_haze(canvas: &mut Canvas, severity: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (canvas.h, canvas.w);
    let count = element_count(&mut rng, (20, 60), CountScaling::Side, severity, h, w);
    let sev = severity as f32;
    let tilt: f32 = rng.gen_range(-0.5..0.5);
    for _ in 0..count {
        let angle = tilt + rng.gen_range(-0.08..0.08);
        let (sy, sx) = (angle.cos(), angle.sin());
        let len = rng.gen_range(0.15..0.4) * h as f32;
        let y0 = rng.gen_range(-0.2 * h as f32..h as f32);
        let x0 = rng.gen_range(0.0..w as f32);
        let alpha = rng.gen_range(0.3..0.6) * sev;
        let steps = (len * 2.0).ceil() as usize;
        let mut last = None;
        for k in 0..=steps {
            let t = k as f32 * 0.5;
            let (y, x) = (y0 + t * sy, x0 + t * sx);
            if y < 0.0 || x < 0.0 {
                continue;
            }
            let (yi, xi) = (y as usize, x as usize);
            if yi >= h || xi >= w || last == Some((yi, xi)) {
                continue;
            }
            last = Some((yi, xi));
            canvas.blend(yi, xi, [1.0; 3], alpha);
        }
    }
    let t = 0.3 * sev;
    for v in canvas.data.iter_mut() {
        *v = (1.0 - t) * *v + t;
    }
}

fn apply_flake(canvas: &mut Canvas, severity: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (canvas.h, canvas.w);
    let count = element_count(&mut rng, (30, 150), CountScaling::Area, severity, h, w);
    for _ in 0..count {
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let r: f32 = rng.gen_range(1.0..=3.0);
        let alpha = rng.gen_range(0.75..1.0);
        let (ylo, yhi) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h));
        let (xlo, xhi) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w));
        for y in ylo..yhi {
            for x in xlo..xhi {
                let (oy, ox) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                if oy * oy + ox * ox <= r * r {
                    canvas.blend(y, x, [1.0; 3], alpha);
                }
            }
        }
    }
}

/// Apply one degradation with its own sub-seed.
pub fn apply_class(image: &Tensor<f32>, class: WeatherClass, severity: f64, sub_seed: u64) -> Result<Tensor<f32>> {
    let mut canvas = Canvas::from_tensor(image)?;
    match class {
        WeatherClass::Drop => apply_drop(&mut canvas, severity, sub_seed),
        WeatherClass::StreakHaze => apply_streak_haze(&mut canvas, severity, sub_seed),
        WeatherClass::Flake => apply_flake(&mut canvas, severity, sub_seed),
    }
    canvas.clamp();
    canvas.into_tensor()
}

/// Apply each class in order. Classes may not repeat.
pub fn degrade(clean: &Tensor<f32>, classes: &[WeatherClass], severity: f64, seed: u64) -> Result<Tensor<f32>> {
    if classes.is_empty() {
        return Err(Error::Contract("degrade needs at least one class".into()));
    }
    if !(severity > 0.0 && severity <= 1.0) {
        return Err(Error::Contract(format!("severity {severity} outside (0, 1]")));
    }
    if ClassSet::of(classes).classes().len() != classes.len() {
        return Err(Error::Contract(format!("repeated class in {classes:?}")));
    }
    let mut img = clean.clone();
    for &c in classes {
        img = apply_class(&img, c, severity, class_seed(seed, c))?;
    }
    Ok(img)
}

/// Binary PPM (P6, 8-bit) encoding of a `[3×H×W]` image in `[0,1]`.
pub fn ppm_bytes(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::Contract(format!("expected a [3,H,W] image, got {s:?}"))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[(c * h + y) * w + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &std::path::Path, image: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, ppm_bytes(image)?).map_err(|e| Error::io(path, e))
}

/// Decode a binary PPM (P6, maxval 255) into a `[3×H×W]` image in `[0,1]`.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |detail: &str| Error::format("ppm", detail.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 images are supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != 3 * h * w {
        return Err(bad("pixel data length does not match the header"));
    }
    let mut out = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(c * h + y) * w + x] = data[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(&[3, h, w], out)?)
}

pub fn read_ppm(path: &std::path::Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes)
}
