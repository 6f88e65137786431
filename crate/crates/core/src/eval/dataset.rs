//! Declarative dataset descriptors.
//!
//! A descriptor is a TOML file; relative paths resolve against its directory.
//!
//! ```toml
//! kind = "sequence_stereo"
//! name = "kitti_00"
//! left = "image_0"          # directory of PNG frames, sorted by file name
//! right = "image_1"         # needed for evaluation
//! poses = "poses.txt"       # `id qw qx qy qz tx ty tz`, world-from-camera, one line per frame
//! calibration = "calib.txt" # `fx fy cx cy width height baseline`
//! pair_list = "pairs.txt"   # optional, `base j` per line
//! ```
//!
//! ```toml
//! kind = "homography_pairs"
//! name = "hpatches"
//! [[pairs]]
//! a = "v_bird/1.png"
//! b = "v_bird/2.png"
//! h = "v_bird/H_1_2"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::EvalError;
use crate::correspondence::{load_poses, HomographyProvider, KltChainProvider};
use crate::geometry::{RigidPose, StereoCalibration};
use crate::klt::{pair_candidates, sample_pairs, KltConfig, Pyramid, TrackConfig};
use crate::training::{PairSource, TrainingError, TrainingPair};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SequenceStereo,
    HomographyPairs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntryFile {
    name: Option<String>,
    a: PathBuf,
    b: PathBuf,
    h: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    kind: DatasetKind,
    name: Option<String>,
    left: Option<PathBuf>,
    right: Option<PathBuf>,
    poses: Option<PathBuf>,
    calibration: Option<PathBuf>,
    pair_list: Option<PathBuf>,
    #[serde(default)]
    pairs: Vec<PairEntryFile>,
}

/// Left frames plus whatever the evaluation needs.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub name: String,
    pub left: Vec<Image>,
    pub right: Option<Vec<Image>>,
    /// World-from-camera, one per frame.
    pub poses: Option<Vec<RigidPose>>,
    pub calibration: Option<StereoCalibration>,
    pub pairs: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct HomographyPair {
    pub name: String,
    pub image_a: Image,
    pub image_b: Image,
    pub h: HomographyProvider,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Sequence(SequenceData),
    Homography { name: String, pairs: Vec<HomographyPair> },
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_frames(dir: &Path) -> Result<Vec<Image>, EvalError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| EvalError::Dataset(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(EvalError::Dataset(format!("{}: no PNG frames", dir.display())));
    }
    files.iter().map(|f| Image::load(f).map_err(EvalError::from)).collect()
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    fn check(&self) -> Result<(), EvalError> {
        let n = self.left.len();
        if let Some(r) = &self.right {
            if r.len() != n {
                return Err(EvalError::Dataset(format!("{n} left frames but {} right frames", r.len())));
            }
        }
        if let Some(p) = &self.poses {
            if p.len() != n {
                return Err(EvalError::Dataset(format!("{n} frames but {} poses", p.len())));
            }
        }
        if let Some(pairs) = &self.pairs {
            if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
                return Err(EvalError::Dataset(format!("pair ({a}, {b}) out of range for {n} frames")));
            }
        }
        Ok(())
    }
}

impl Dataset {
    /// Reads a descriptor and every file it references.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
        let file: DatasetFile = toml::from_str(&text).map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let name = file
            .name
            .clone()
            .unwrap_or_else(|| path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned()));
        match file.kind {
            DatasetKind::SequenceStereo => {
                if !file.pairs.is_empty() {
                    return Err(EvalError::Dataset("`pairs` entries belong to homography_pairs datasets".into()));
                }
                let left = file.left.as_ref().ok_or_else(|| EvalError::Dataset("missing `left`".into()))?;
                let seq = SequenceData {
                    name,
                    left: load_frames(&resolve(base, left))?,
                    right: file.right.as_ref().map(|r| load_frames(&resolve(base, r))).transpose()?,
                    poses: file
                        .poses
                        .as_ref()
                        .map(|p| load_poses(resolve(base, p)).map(|v| v.into_iter().map(|(_, pose)| pose).collect()))
                        .transpose()?,
                    calibration: file.calibration.as_ref().map(|c| StereoCalibration::load(resolve(base, c))).transpose()?,
                    pairs: file
                        .pair_list
                        .as_ref()
                        .map(|p| {
                            let p = resolve(base, p);
                            std::fs::read_to_string(&p)
                                .map_err(|e| EvalError::Dataset(format!("{}: {e}", p.display())))
                                .and_then(|t| parse_pair_list(&t))
                        })
                        .transpose()?,
                };
                seq.check()?;
                Ok(Self::Sequence(seq))
            }
            DatasetKind::HomographyPairs => {
                if file.left.is_some() || file.right.is_some() || file.poses.is_some() || file.calibration.is_some() {
                    return Err(EvalError::Dataset("sequence fields in a homography_pairs dataset".into()));
                }
                if file.pairs.is_empty() {
                    return Err(EvalError::Dataset("no `pairs` entries".into()));
                }
                let pairs = file
                    .pairs
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        Ok(HomographyPair {
                            name: e.name.clone().unwrap_or_else(|| format!("{name}/{i:04}")),
                            image_a: Image::load(resolve(base, &e.a))?,
                            image_b: Image::load(resolve(base, &e.b))?,
                            h: HomographyProvider::load(resolve(base, &e.h))?,
                        })
                    })
                    .collect::<Result<_, EvalError>>()?;
                Ok(Self::Homography { name, pairs })
            }
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Sequence(s) => &s.name,
            Self::Homography { name, .. } => name,
        }
    }

    /// Pairs for training: homography pairs as given, or KLT-selected frame
    /// pairs (overlap `o`) with chained-KLT correspondences.
    pub fn training_source(&self, o: f64, seed: u64) -> Result<Box<dyn PairSource>, EvalError> {
        match self {
            Self::Homography { pairs, .. } => Ok(Box::new(crate::training::PairCycle(
                pairs.iter().map(|p| TrainingPair { image_a: p.image_a.clone(), image_b: p.image_b.clone(), psi: Arc::new(p.h.clone()) }).collect(),
            ))),
            Self::Sequence(s) => Ok(Box::new(SequencePairSource::new(s, o, seed)?)),
        }
    }

    /// `count` fixed pairs, e.g. for validation.
    pub fn training_pairs(&self, o: f64, count: usize, seed: u64) -> Result<Vec<TrainingPair>, EvalError> {
        let mut source = self.training_source(o, seed)?;
        (0..count).map(|i| source.pair(i).map_err(EvalError::from)).collect()
    }
}

/// Frame pairs of one sequence whose seeded KLT tracks overlap by at least `o`.
pub fn generate_pairs(seq: &SequenceData, o: f64, count: usize, seed: u64) -> Result<Vec<(usize, usize)>, EvalError> {
    let candidates = pair_candidates(&seq.left, &TrackConfig::default(), o)?;
    let pairs = sample_pairs(&candidates, count, seed);
    if pairs.is_empty() && count > 0 {
        return Err(EvalError::Dataset(format!("no frame pairs reach overlap {o}")));
    }
    Ok(pairs)
}

/// Draws a fresh KLT-selected pair for every training step.
pub struct SequencePairSource {
    images: Vec<Image>,
    pyramids: Arc<Vec<Pyramid>>,
    candidates: Vec<Vec<usize>>,
    klt: KltConfig,
    seed: u64,
}

impl SequencePairSource {
    pub fn new(seq: &SequenceData, o: f64, seed: u64) -> Result<Self, EvalError> {
        let track = TrackConfig::default();
        let candidates = pair_candidates(&seq.left, &track, o)?;
        if candidates.iter().all(|c| c.is_empty()) {
            return Err(EvalError::Dataset(format!("no frame pairs reach overlap {o}")));
        }
        Ok(Self {
            images: seq.left.clone(),
            pyramids: KltChainProvider::pyramids(&seq.left, &track.klt),
            candidates,
            klt: track.klt,
            seed,
        })
    }
}

impl PairSource for SequencePairSource {
    fn pair(&mut self, step: usize) -> Result<TrainingPair, TrainingError> {
        let (a, b) = sample_pairs(&self.candidates, 1, self.seed.wrapping_add(step as u64))[0];
        let psi = KltChainProvider::new(self.pyramids.clone(), a, b, self.klt).map_err(|e| TrainingError::PairSource(e.to_string()))?;
        Ok(TrainingPair { image_a: self.images[a].clone(), image_b: self.images[b].clone(), psi: Arc::new(psi) })
    }
}

/// `base j` per line; `#` comments and blank lines are skipped.
pub fn parse_pair_list(text: &str) -> Result<Vec<(usize, usize)>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|e| EvalError::Dataset(format!("pair list line {}: {e}", i + 1)));
            match f.as_slice() {
                [a, b] => Ok((num(a)?, num(b)?)),
                _ => Err(EvalError::Dataset(format!("pair list line {}: expected `base j`", i + 1))),
            }
        })
        .collect()
}

pub fn format_pair_list(pairs: &[(usize, usize)]) -> String {
    pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
}
