use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{track_point_pyramids, KltConfig, KltError, Pyramid};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub klt: KltConfig,
    /// Spacing of the seed grid in pixels.
    pub seed_step: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { klt: KltConfig::default(), seed_step: 12 }
    }
}

/// Positions of grid-seeded tracks over a run of frames.
///
/// `positions[t][k]` is track `t` in frame `seed_frame + k`; `None` once lost.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTable {
    pub seed_frame: usize,
    pub seed_step: usize,
    positions: Vec<Vec<Option<Point2<f32>>>>,
    n_frames: usize,
}

impl TrackTable {
    pub fn n_tracks(&self) -> usize {
        self.positions.len()
    }

    /// Frames covered, starting at `seed_frame`.
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn position(&self, track: usize, frame: usize) -> Option<Point2<f32>> {
        let k = frame.checked_sub(self.seed_frame)?;
        self.positions.get(track)?.get(k).copied().flatten()
    }

    pub fn alive(&self, frame: usize) -> usize {
        (0..self.n_tracks()).filter(|&t| self.position(t, frame).is_some()).count()
    }

    /// Tracks alive in `frame` relative to those alive in `base`.
    pub fn surviving_fraction(&self, base: usize, frame: usize) -> f64 {
        let b = self.alive(base);
        if b == 0 {
            return 0.0;
        }
        self.alive(frame) as f64 / b as f64
    }

    fn last_frame(&self) -> usize {
        self.seed_frame + self.n_frames - 1
    }

    /// Writes the table under `key` (see [`sequence_key`]).
    pub fn save(&self, path: impl AsRef<Path>, key: u32) -> Result<(), KltError> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&key.to_le_bytes());
        for v in [self.seed_frame, self.seed_step, self.n_frames, self.n_tracks()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for track in &self.positions {
            for p in track {
                let (x, y) = p.map_or((f32::NAN, f32::NAN), |p| (p.x, p.y));
                out.extend_from_slice(&x.to_le_bytes());
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    /// Reads a cached table; `Ok(None)` when the file was written under another key.
    pub fn load(path: impl AsRef<Path>, key: u32) -> Result<Option<Self>, KltError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let header = CACHE_MAGIC.len() + 4 + 32;
        if bytes.len() < header || &bytes[..4] != CACHE_MAGIC {
            return Err(KltError::Cache("not a track cache".into()));
        }
        if u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) != key {
            return Ok(None);
        }
        let field = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize;
        let (seed_frame, seed_step, n_frames, n_tracks) = (field(0), field(1), field(2), field(3));
        if bytes.len() != header + n_frames * n_tracks * 8 {
            return Err(KltError::Cache("unexpected length".into()));
        }
        let mut floats = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let positions = (0..n_tracks)
            .map(|_| {
                (0..n_frames)
                    .map(|_| {
                        let x = floats.next().expect("length checked");
                        let y = floats.next().expect("length checked");
                        (!x.is_nan()).then(|| Point2::new(x, y))
                    })
                    .collect()
            })
            .collect();
        Ok(Some(Self { seed_frame, seed_step, positions, n_frames }))
    }
}

const CACHE_MAGIC: &[u8; 4] = b"IMTT";

/// Cache key over frame contents and tracking parameters.
pub fn sequence_key(images: &[Image], config: &TrackConfig) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for img in images {
        h.update(&(img.width() as u64).to_le_bytes());
        h.update(&(img.height() as u64).to_le_bytes());
        for v in img.data() {
            h.update(&v.to_le_bytes());
        }
    }
    let k = &config.klt;
    for v in [k.window, k.levels, k.max_iters, config.seed_step] {
        h.update(&(v as u64).to_le_bytes());
    }
    h.update(&k.eps.to_le_bytes());
    h.update(&k.min_eigen.to_le_bytes());
    h.finalize()
}

fn check_frames(images: &[Image]) -> Result<(), KltError> {
    if images.len() < 2 {
        return Err(KltError::TooFewFrames { needed: 2, got: images.len() });
    }
    let expected = (images[0].width(), images[0].height());
    for (index, img) in images.iter().enumerate() {
        let got = (img.width(), img.height());
        if got != expected {
            return Err(KltError::SizeMismatch { index, expected, got });
        }
    }
    Ok(())
}

fn seed_grid(width: usize, height: usize, config: &TrackConfig) -> Vec<Point2<f64>> {
    let half = config.klt.window / 2;
    let mut seeds = Vec::new();
    let mut y = half;
    while y + half < height {
        let mut x = half;
        while x + half < width {
            seeds.push(Point2::new(x as f64, y as f64));
            x += config.seed_step;
        }
        y += config.seed_step;
    }
    seeds
}

/// Seeds a grid in `images[0]` and follows every track frame to frame until
/// it is lost. Tracking stops early once fewer than `stop_below` of the seeds
/// survive.
fn track_from(pyramids: &[Pyramid], config: &TrackConfig, stop_below: f64) -> (Vec<Vec<Option<Point2<f32>>>>, usize) {
    let first = pyramids[0].level(0);
    let seeds = seed_grid(first.width(), first.height(), config);
    let mut current: Vec<Option<Point2<f64>>> = seeds.iter().copied().map(Some).collect();
    let mut positions: Vec<Vec<Option<Point2<f32>>>> = seeds.iter().map(|p| vec![Some(Point2::new(p.x as f32, p.y as f32))]).collect();
    let mut n_frames = 1;
    for f in 1..pyramids.len() {
        let (pa, pb) = (&pyramids[f - 1], &pyramids[f]);
        current = current
            .par_iter()
            .map(|p| p.and_then(|p| track_point_pyramids(pa, pb, p, &config.klt)))
            .collect();
        for (track, p) in positions.iter_mut().zip(&current) {
            track.push(p.map(|p| Point2::new(p.x as f32, p.y as f32)));
        }
        n_frames += 1;
        let alive = current.iter().filter(|p| p.is_some()).count();
        if seeds.is_empty() || (alive as f64) < stop_below * seeds.len() as f64 {
            break;
        }
    }
    (positions, n_frames)
}

fn build_pyramids(images: &[Image], levels: usize) -> Vec<Pyramid> {
    images.par_iter().map(|img| Pyramid::build(img, levels)).collect()
}

/// Tracks a seed grid from the first frame through the whole sequence.
pub fn track_sequence(images: &[Image], config: &TrackConfig) -> Result<TrackTable, KltError> {
    check_frames(images)?;
    config.klt.validate()?;
    if config.seed_step == 0 {
        return Err(KltError::Config("seed step must be positive".into()));
    }
    let pyramids = build_pyramids(images, config.klt.levels);
    let (positions, n_frames) = track_from(&pyramids, config, 0.0);
    Ok(TrackTable { seed_frame: 0, seed_step: config.seed_step, positions, n_frames })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSelectionConfig {
    pub overlap_o: f64,
    pub rng_seed: u64,
}

impl PairSelectionConfig {
    pub const TRAINING_OVERLAP: f64 = 0.3;
    pub const EVALUATION_OVERLAP: f64 = 0.5;

    pub fn training(rng_seed: u64) -> Self {
        Self { overlap_o: Self::TRAINING_OVERLAP, rng_seed }
    }

    pub fn evaluation(rng_seed: u64) -> Self {
        Self { overlap_o: Self::EVALUATION_OVERLAP, rng_seed }
    }
}

/// Frames after `base` in which at least a fraction `o` of the tracks alive
/// in `base` remain.
pub fn qualifying_frames(table: &TrackTable, base: usize, o: f64) -> Result<Vec<usize>, KltError> {
    if base < table.seed_frame || base > table.last_frame() {
        return Err(KltError::FrameIndex { index: base, len: table.seed_frame + table.n_frames });
    }
    Ok((base + 1..=table.last_frame()).filter(|&j| table.surviving_fraction(base, j) >= o).collect())
}

/// Draws `count` partners for `base` uniformly from the qualifying frames.
/// Returns an empty list when no frame qualifies.
pub fn select_pairs(
    table: &TrackTable,
    base: usize,
    config: &PairSelectionConfig,
    count: usize,
) -> Result<Vec<(usize, usize)>, KltError> {
    let frames = qualifying_frames(table, base, config.overlap_o)?;
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    Ok((0..count).map(|_| (base, frames[rng.random_range(0..frames.len())])).collect())
}

/// For every frame of a sequence, the later frames sharing at least a
/// fraction `o` of its seeded tracks. Each base frame gets its own seed
/// grid; tracking from a base stops once the overlap drops below `o`.
pub fn pair_candidates(images: &[Image], config: &TrackConfig, o: f64) -> Result<Vec<Vec<usize>>, KltError> {
    check_frames(images)?;
    config.klt.validate()?;
    if config.seed_step == 0 {
        return Err(KltError::Config("seed step must be positive".into()));
    }
    let pyramids = build_pyramids(images, config.klt.levels);
    let mut out = Vec::with_capacity(images.len());
    for base in 0..images.len() {
        if base + 1 == images.len() {
            out.push(Vec::new());
            continue;
        }
        let (positions, n_frames) = track_from(&pyramids[base..], config, o);
        let table = TrackTable { seed_frame: base, seed_step: config.seed_step, positions, n_frames };
        out.push(qualifying_frames(&table, base, o)?);
    }
    Ok(out)
}

/// Draws `count` pairs: a base frame uniformly among those with at least one
/// partner, then a partner uniformly.
pub fn sample_pairs(candidates: &[Vec<usize>], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let bases: Vec<usize> = (0..candidates.len()).filter(|&b| !candidates[b].is_empty()).collect();
    if bases.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let b = bases[rng.random_range(0..bases.len())];
            let js = &candidates[b];
            (b, js[rng.random_range(0..js.len())])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SmoothTexture;

    fn shifted_sequence(n: usize, step: f64) -> Vec<Image> {
        let t = SmoothTexture::random(21, 80.0, 60.0);
        (0..n).map(|i| t.render_shifted(80, 60, step * i as f64, 0.0)).collect()
    }

    fn synthetic_table(alive_until: &[usize], n_frames: usize) -> TrackTable {
        let positions = alive_until
            .iter()
            .map(|&last| (0..n_frames).map(|f| (f <= last).then(|| Point2::new(0.0, 0.0))).collect())
            .collect();
        TrackTable { seed_frame: 0, seed_step: 12, positions, n_frames }
    }

    #[test]
    fn identical_frames_lose_nothing() {
        let t = SmoothTexture::random(4, 80.0, 60.0);
        let img = t.render(80, 60);
        let table = track_sequence(&[img.clone(), img], &TrackConfig::default()).unwrap();
        assert!(table.n_tracks() > 0);
        assert_eq!(table.alive(1), table.n_tracks());
        for k in 0..table.n_tracks() {
            assert_eq!(table.position(k, 0), table.position(k, 1));
        }
    }

    #[test]
    fn global_shift_is_followed() {
        let frames = shifted_sequence(5, 1.0);
        let table = track_sequence(&frames, &TrackConfig::default()).unwrap();
        let mut checked = 0;
        for k in 0..table.n_tracks() {
            let p0 = table.position(k, 0).unwrap();
            for f in 1..5 {
                if let Some(p) = table.position(k, f) {
                    assert!((p.x - p0.x - f as f32).abs() < 0.3 * f as f32);
                    assert!((p.y - p0.y).abs() < 0.3 * f as f32);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let frames = vec![Image::filled(30, 30, 0.5), Image::filled(31, 30, 0.5)];
        assert!(matches!(track_sequence(&frames, &TrackConfig::default()), Err(KltError::SizeMismatch { index: 1, .. })));
        assert!(matches!(track_sequence(&frames[..1], &TrackConfig::default()), Err(KltError::TooFewFrames { .. })));
    }

    #[test]
    fn seeds_sit_on_the_grid() {
        let frames = shifted_sequence(2, 0.0);
        let table = track_sequence(&frames, &TrackConfig::default()).unwrap();
        for k in 0..table.n_tracks() {
            let p = table.position(k, 0).unwrap();
            assert_eq!((p.x as usize - 10) % 12, 0);
            assert_eq!((p.y as usize - 10) % 12, 0);
            assert_eq!(p.x.fract(), 0.0);
        }
    }

    #[test]
    fn survivors_never_increase() {
        let frames = shifted_sequence(6, 3.0);
        let table = track_sequence(&frames, &TrackConfig::default()).unwrap();
        for f in 1..table.n_frames() {
            assert!(table.alive(f) <= table.alive(f - 1));
        }
    }

    #[test]
    fn qualifying_set_matches_recount() {
        // 10 tracks, 4 of which die after frame 2, 3 more after frame 4
        let mut until = vec![9; 3];
        until.extend([2; 4]);
        until.extend([4; 3]);
        let table = synthetic_table(&until, 10);
        let got = qualifying_frames(&table, 0, 0.5).unwrap();
        let brute: Vec<usize> = (1..10)
            .filter(|&j| until.iter().filter(|&&u| u >= j).count() * 2 >= until.len())
            .collect();
        assert_eq!(got, brute);
        assert_eq!(got, vec![1, 2, 3, 4]);
        let all = synthetic_table(&[9; 5], 10);
        assert_eq!(qualifying_frames(&all, 3, 1.0).unwrap(), (4..10).collect::<Vec<_>>());
    }

    #[test]
    fn selection_is_reproducible_and_handles_empty() {
        let table = synthetic_table(&[9, 9, 3, 3], 10);
        let cfg = PairSelectionConfig::training(5);
        let a = select_pairs(&table, 0, &cfg, 20).unwrap();
        assert_eq!(a, select_pairs(&table, 0, &cfg, 20).unwrap());
        assert!(a.iter().all(|&(b, j)| b == 0 && (1..10).contains(&j)));
        let none = select_pairs(&table, 9, &cfg, 5).unwrap();
        assert!(none.is_empty());
        assert!(select_pairs(&table, 10, &cfg, 1).is_err());
    }

    #[test]
    fn candidates_and_sampling() {
        let frames = shifted_sequence(4, 1.0);
        let cands = pair_candidates(&frames, &TrackConfig::default(), 0.5).unwrap();
        assert_eq!(cands.len(), 4);
        assert!(cands[3].is_empty());
        assert!(cands[0].contains(&1));
        let pairs = sample_pairs(&cands, 100, 7);
        assert_eq!(pairs.len(), 100);
        assert_eq!(pairs, sample_pairs(&cands, 100, 7));
        assert!(pairs.iter().all(|&(b, j)| j > b));
        assert!(sample_pairs(&[vec![], vec![]], 3, 1).is_empty());
    }

    #[test]
    fn cache_roundtrip_and_key_check() {
        let frames = shifted_sequence(3, 1.0);
        let cfg = TrackConfig::default();
        let table = track_sequence(&frames, &cfg).unwrap();
        let key = sequence_key(&frames, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.bin");
        table.save(&path, key).unwrap();
        assert_eq!(TrackTable::load(&path, key).unwrap(), Some(table));
        assert_eq!(TrackTable::load(&path, key ^ 1).unwrap(), None);
        let other = TrackConfig { seed_step: 8, ..cfg };
        assert_ne!(sequence_key(&frames, &other), key);
    }
}
