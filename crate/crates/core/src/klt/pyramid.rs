use crate::Image;

const TAPS: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Gaussian image pyramid; level 0 is the input.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Image>,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Blurs with the 5-tap binomial kernel and keeps every second pixel.
pub fn downsample(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, t) in TAPS.iter().enumerate() {
                s += t * img.get(reflect(x as isize + k as isize - 2, w), y);
            }
            tmp[y * w + x] = s;
        }
    }
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    Image::from_fn(w2, h2, |x, y| {
        let mut s = 0.0;
        for (k, t) in TAPS.iter().enumerate() {
            s += t * tmp[reflect(2 * y as isize + k as isize - 2, h) * w + 2 * x];
        }
        s
    })
}

impl Pyramid {
    /// Builds up to `levels` levels, stopping early once a side would drop
    /// below 2 pixels.
    pub fn build(img: &Image, levels: usize) -> Self {
        let mut out = vec![img.clone()];
        while out.len() < levels.max(1) {
            let last = out.last().expect("non-empty");
            if last.width() < 4 || last.height() < 4 {
                break;
            }
            out.push(downsample(last));
        }
        Self { levels: out }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, i: usize) -> &Image {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }
}
