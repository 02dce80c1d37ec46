//! Moving-sprite scenes with exact ground-truth flow.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    average_flows, write_flo, write_image, write_manifest, FlowField, Image, ManifestRecord,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpriteShape {
    /// Axis-aligned rectangle; the sprite position is its top-left corner.
    Rect { width: f64, height: f64 },
    /// The sprite position is the disc center.
    Disc { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub shape: SpriteShape,
    pub x: f64,
    pub y: f64,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Base RGB color the texture modulates.
    pub tone: [f64; 3],
    pub texture_seed: u64,
}

impl Sprite {
    fn at(&self, t: usize) -> (f64, f64) {
        (
            self.x + t as f64 * self.velocity.0,
            self.y + t as f64 * self.velocity.1,
        )
    }

    /// Whether the pixel centered at `(px + 0.5, py + 0.5)` is covered at frame `t`.
    pub fn covers(&self, px: usize, py: usize, t: usize) -> bool {
        let (x, y) = self.at(t);
        let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
        match self.shape {
            SpriteShape::Rect { width, height } => {
                cx >= x && cx < x + width && cy >= y && cy < y + height
            }
            SpriteShape::Disc { radius } => (cx - x).powi(2) + (cy - y).powi(2) < radius * radius,
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match self.shape {
            SpriteShape::Rect { width, height } => {
                (self.x, self.y, self.x + width, self.y + height)
            }
            SpriteShape::Disc { radius } => (
                self.x - radius,
                self.y - radius,
                self.x + radius,
                self.y + radius,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    pub background_seed: u64,
    /// Painted in order; later sprites occlude earlier ones.
    pub sprites: Vec<Sprite>,
    pub frames: usize,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::InvalidArgument(
                "scene needs positive size and frame count".into(),
            ));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if !s.velocity.0.is_finite() || !s.velocity.1.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sprite {i} has a non-finite velocity"
                )));
            }
            let (x0, y0, x1, y1) = s.bounds();
            let sized = match s.shape {
                SpriteShape::Rect { width, height } => width > 0.0 && height > 0.0,
                SpriteShape::Disc { radius } => radius > 0.0,
            };
            if !sized || x0 < 0.0 || y0 < 0.0 || x1 > self.width as f64 || y1 > self.height as f64 {
                return Err(Error::InvalidArgument(format!(
                    "sprite {i} does not lie inside the {}x{} canvas at frame 0",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic value in `[0, 1)` for a seed and integer coordinates.
fn noise(seed: u64, x: i64, y: i64, c: usize) -> f64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (c as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Index of the topmost sprite covering a pixel at frame `t`.
fn top_sprite(spec: &SyntheticSceneSpec, px: usize, py: usize, t: usize) -> Option<usize> {
    spec.sprites.iter().rposition(|s| s.covers(px, py, t))
}

/// Renders every frame and its forward flow. Flow at frame `t` is the
/// velocity of the sprite visible at each pixel, `(0, 0)` on background.
pub fn synthesize_sequence(spec: &SyntheticSceneSpec) -> Result<(Vec<Image>, Vec<FlowField>)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut flows = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut img = Image::new(w, h, 3)?;
        let mut flow = FlowField::zeros(w, h)?;
        for py in 0..h {
            for px in 0..w {
                match top_sprite(spec, px, py, t) {
                    Some(i) => {
                        let s = &spec.sprites[i];
                        let (sx, sy) = s.at(t);
                        let lx = (px as f64 + 0.5 - sx).floor() as i64;
                        let ly = (py as f64 + 0.5 - sy).floor() as i64;
                        let n = noise(s.texture_seed, lx, ly, 0) - 0.5;
                        for c in 0..3 {
                            img.set(px, py, c, (s.tone[c] + 0.2 * n).clamp(0.0, 1.0));
                        }
                        flow.set(px, py, s.velocity.0, s.velocity.1);
                    }
                    None => {
                        let n = noise(spec.background_seed, px as i64, py as i64, 0);
                        for c in 0..3 {
                            let tint =
                                noise(spec.background_seed, px as i64, py as i64, c + 1) - 0.5;
                            img.set(px, py, c, 0.35 + 0.3 * n + 0.05 * tint);
                        }
                    }
                }
            }
        }
        frames.push(img);
        flows.push(flow);
    }
    Ok((frames, flows))
}

/// Families of random scenes with a learnable relation between appearance
/// and motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Bright sprites move right at 3 px/frame, dark sprites move left.
    ToneCue,
    /// Sprites move toward the vertical center line regardless of tone.
    /// Mirror-symmetric: a flipped scene is a valid scene.
    Converging,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tone" | "tone-cue" => Ok(SceneKind::ToneCue),
            "converging" => Ok(SceneKind::Converging),
            other => Err(Error::InvalidArgument(format!(
                "unknown scene kind {other:?} (expected tone-cue or converging)"
            ))),
        }
    }
}

pub const CUE_SPEED: f64 = 3.0;

/// Draws a random scene of the given family.
pub fn random_scene(kind: SceneKind, size: usize, frames: usize, seed: u64) -> SyntheticSceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1..=3);
    let mut sprites = Vec::with_capacity(count);
    let s = size as f64;
    for _ in 0..count {
        let bright = rng.gen_bool(0.5);
        let base = if bright {
            rng.gen_range(0.8..0.95)
        } else {
            rng.gen_range(0.05..0.2)
        };
        let tone = [base, base, base];
        let extent = rng
            .gen_range((s * 0.18).max(2.0)..=(s * 0.3).max(3.0))
            .round();
        let disc = rng.gen_bool(0.3);
        let (shape, x, y, cx) = if disc {
            let r = (extent / 2.0).floor().max(1.0);
            let x = rng.gen_range(r..=s - r).round();
            let y = rng.gen_range(r..=s - r).round();
            (SpriteShape::Disc { radius: r }, x, y, x)
        } else {
            let x = rng.gen_range(0.0..=s - extent).round();
            let y = rng.gen_range(0.0..=s - extent).round();
            (
                SpriteShape::Rect {
                    width: extent,
                    height: extent,
                },
                x,
                y,
                x + extent / 2.0,
            )
        };
        let dir = match kind {
            SceneKind::ToneCue => {
                if bright {
                    1.0
                } else {
                    -1.0
                }
            }
            SceneKind::Converging => {
                if cx < s / 2.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        sprites.push(Sprite {
            shape,
            x,
            y,
            velocity: (dir * CUE_SPEED, 0.0),
            tone,
            texture_seed: rng.gen(),
        });
    }
    SyntheticSceneSpec {
        width: size,
        height: size,
        background_seed: rng.gen(),
        sprites,
        frames,
    }
}

/// Output of [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub sequence_manifest: Option<PathBuf>,
}

/// Options for [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub kind: SceneKind,
    pub count: usize,
    pub size: usize,
    /// Future flow fields averaged into one label.
    pub label_frames: usize,
    /// Steps in the sequence manifest; 0 writes none.
    pub steps: usize,
    /// Consecutive frames of each scene written as separate training
    /// records. The sequence manifest always starts at the first frame.
    pub frames_per_scene: usize,
    pub seed: u64,
}

/// Writes `count` scenes under `dir`: the first `frames_per_scene` frames
/// of each as PPM with their next `label_frames` flows as `.flo`, and (when
/// `steps > 0`) per-step averaged flows for sequence prediction, plus the
/// manifests.
pub fn write_dataset(dir: &Path, opts: &DatasetOptions) -> Result<DatasetPaths> {
    if opts.label_frames == 0 || opts.frames_per_scene == 0 {
        return Err(Error::InvalidArgument(
            "label_frames and frames_per_scene must be >= 1".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames =
        (opts.frames_per_scene - 1 + opts.label_frames).max(opts.label_frames * opts.steps);
    let mut records = Vec::with_capacity(opts.count * opts.frames_per_scene);
    let mut seq_records = Vec::new();
    for i in 0..opts.count {
        let scene_seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let spec = random_scene(opts.kind, opts.size, frames, scene_seed);
        let (images, flows) = synthesize_sequence(&spec)?;
        let scene = format!("scene_{i:05}");
        for t in 0..opts.frames_per_scene {
            let name = if t == 0 {
                scene.clone()
            } else {
                format!("{scene}_f{t}")
            };
            let image_path = PathBuf::from(format!("{name}.ppm"));
            write_image(&images[t], &dir.join(&image_path))?;
            let mut flo_paths = Vec::with_capacity(opts.label_frames);
            for (k, f) in flows[t..].iter().take(opts.label_frames).enumerate() {
                let p = PathBuf::from(format!("{name}_flow{k}.flo"));
                write_flo(f, &dir.join(&p))?;
                flo_paths.push(p);
            }
            records.push(ManifestRecord {
                image: image_path,
                flows: flo_paths,
            });
        }
        if opts.steps > 0 {
            let mut step_paths = Vec::with_capacity(opts.steps);
            for (t, chunk) in flows.chunks(opts.label_frames).take(opts.steps).enumerate() {
                let p = PathBuf::from(format!("{scene}_step{t}.flo"));
                write_flo(&average_flows(chunk)?, &dir.join(&p))?;
                step_paths.push(p);
            }
            seq_records.push(ManifestRecord {
                image: PathBuf::from(format!("{scene}.ppm")),
                flows: step_paths,
            });
        }
    }
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &records)?;
    let sequence_manifest = if opts.steps > 0 {
        let p = dir.join("sequences.txt");
        write_manifest(&p, &seq_records)?;
        Some(p)
    } else {
        None
    };
    Ok(DatasetPaths {
        manifest,
        sequence_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: f64, y: f64, w: f64, h: f64, vel: (f64, f64)) -> Sprite {
        Sprite {
            shape: SpriteShape::Rect {
                width: w,
                height: h,
            },
            x,
            y,
            velocity: vel,
            tone: [0.9; 3],
            texture_seed: 3,
        }
    }

    fn scene(sprites: Vec<Sprite>, frames: usize) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            width: 24,
            height: 16,
            background_seed: 11,
            sprites,
            frames,
        }
    }

    #[test]
    fn empty_scene_is_static() {
        let (imgs, flows) = synthesize_sequence(&scene(vec![], 3)).unwrap();
        assert!(flows.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
        assert_eq!(imgs[0], imgs[1]);
        assert_eq!(imgs[1], imgs[2]);
    }

    #[test]
    fn single_rectangle_flow_is_its_velocity() {
        let (_, flows) =
            synthesize_sequence(&scene(vec![rect(2.0, 3.0, 5.0, 4.0, (2.0, 0.0))], 2)).unwrap();
        for y in 0..16 {
            for x in 0..24 {
                let inside = (2..7).contains(&x) && (3..7).contains(&y);
                let want = if inside { (2.0, 0.0) } else { (0.0, 0.0) };
                assert_eq!(flows[0].get(x, y), want, "({x},{y})");
            }
        }
    }

    #[test]
    fn overlap_takes_topmost_velocity() {
        let a = rect(2.0, 2.0, 8.0, 8.0, (1.0, 0.0));
        let b = rect(6.0, 4.0, 8.0, 8.0, (0.0, -2.0));
        let spec = scene(vec![a.clone(), b.clone()], 1);
        let (_, flows) = synthesize_sequence(&spec).unwrap();
        for y in 0..16 {
            for x in 0..24 {
                let want = if b.covers(x, y, 0) {
                    (0.0, -2.0)
                } else if a.covers(x, y, 0) {
                    (1.0, 0.0)
                } else {
                    (0.0, 0.0)
                };
                assert_eq!(flows[0].get(x, y), want);
            }
        }
    }

    #[test]
    fn sprite_outside_canvas_rejected() {
        assert!(
            synthesize_sequence(&scene(vec![rect(20.0, 0.0, 8.0, 4.0, (0.0, 0.0))], 1)).is_err()
        );
        assert!(
            synthesize_sequence(&scene(vec![rect(0.0, 0.0, 4.0, 4.0, (f64::NAN, 0.0))], 1))
                .is_err()
        );
    }

    #[test]
    fn tone_cue_scenes_follow_the_rule() {
        for seed in 0..20 {
            let s = random_scene(SceneKind::ToneCue, 64, 5, seed);
            s.validate().unwrap();
            for sp in &s.sprites {
                let bright = sp.tone[0] > 0.5;
                assert_eq!(sp.velocity.0 > 0.0, bright);
            }
        }
    }

    #[test]
    fn dataset_manifests_written() {
        let dir = tempfile::tempdir().unwrap();
        let opts = DatasetOptions {
            kind: SceneKind::ToneCue,
            count: 2,
            size: 32,
            label_frames: 5,
            steps: 2,
            frames_per_scene: 3,
            seed: 1,
        };
        let paths = write_dataset(dir.path(), &opts).unwrap();
        let recs = crate::flow::read_manifest(&paths.manifest).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs[0].flows.len(), 5);
        let seq = crate::flow::read_manifest(&paths.sequence_manifest.unwrap()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq[1].flows.len(), 2);
        assert_eq!(seq[1].image, recs[3].image);
    }
}
