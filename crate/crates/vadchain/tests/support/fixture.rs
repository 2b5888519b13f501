//! Three-video scripted fixture: one clearly normal, one clearly anomalous
//! and one ambiguous video, all served by the mock backend.
#![allow(dead_code, clippy::excessive_precision, clippy::field_reassign_with_default)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use vadchain::backend::{MockBackend, MockRule, MockScript};
use vadchain::client::ModelClient;
use vadchain::config::{RunConfig, Stage};
use vadchain::core::sampling::clip_indices;
use vadchain::core::{MarginMode, PromptKind, Templates};
use vadchain::media::MediaStore;

pub const STRIDE: usize = 16;
pub const FPS: f64 = 1.0;
pub const CLIP_RADIUS: f64 = 5.0;
pub const CLIP_FRAMES: usize = 10;
pub const WIDTH: u32 = 16;
pub const HEIGHT: u32 = 12;
pub const REFINED_MARKER: &str = "Potentially reported";
pub const TAGS_REPLY: &str = "['fighting', 'hitting with sticks']";
pub const BOX_REPLY: &str = r#"[{"bbox_2d": [2, 2, 9, 8], "confidence": 0.9}]"#;
pub const DESCRIPTION: &str = "Two people start a fight in the street.";

/// AUC and AP of the fixture against [`TEMPORAL_GT`]: scipy reflect
/// smoothing, frame expansion and sklearn scoring, pairwise-checked.
pub const EXPECTED_AUC: f64 = 0.957_710_535_909_588;
pub const EXPECTED_AP: f64 = 0.916_028_152_553_825_6;

pub const TEMPORAL_GT: &str = "\
normal -1 -1
anomalous 241 560
ambiguous 1 96
";

pub struct FixtureVideo {
    pub id: &'static str,
    pub total_frames: usize,
    /// Per stride position: caption phrase, first-pass score, refined score.
    pub positions: Vec<(&'static str, &'static str, &'static str)>,
}

impl FixtureVideo {
    pub fn positions(&self) -> usize {
        self.positions.len()
    }
}

pub fn videos() -> Vec<FixtureVideo> {
    let normal = FixtureVideo {
        id: "normal",
        total_frames: 320,
        positions: vec![("quiet empty street", "0.1", "0.1"); 20],
    };
    let mut anomalous = vec![("people walking by", "0.1", "0.1"); 40];
    for p in anomalous.iter_mut().take(35).skip(15) {
        *p = ("two people fighting", "0.9", "0.9");
    }
    let mut ambiguous = vec![("crowd gathering", "0.6", "0.8"); 6];
    ambiguous.extend(vec![("people standing around", "0.5", "0.2"); 12]);
    ambiguous.push(("deserted parking lot", "0.2", "0.2"));
    vec![
        normal,
        FixtureVideo {
            id: "anomalous",
            total_frames: 640,
            positions: anomalous,
        },
        FixtureVideo {
            id: "ambiguous",
            total_frames: 300,
            positions: ambiguous,
        },
    ]
}

pub struct Fixture {
    pub root: tempfile::TempDir,
    pub manifest: PathBuf,
    pub temporal: PathBuf,
    pub script: MockScript,
    pub script_path: PathBuf,
}

fn frame_path(root: &Path, id: &str, f: usize) -> PathBuf {
    root.join("frames").join(id).join(format!("{f:06}.png"))
}

/// Every frame gets distinct pixels so digests never collide.
fn write_frames(root: &Path, vidx: usize, v: &FixtureVideo) {
    let dir = root.join("frames").join(v.id);
    std::fs::create_dir_all(&dir).unwrap();
    for f in 1..=v.total_frames {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([40, 40, 40]));
        img.put_pixel(0, 0, Rgb([vidx as u8, (f >> 8) as u8, (f & 0xff) as u8]));
        img.save(frame_path(root, v.id, f)).unwrap();
    }
}

pub fn caption_text(v: &FixtureVideo, p: usize) -> String {
    format!("[{}:{p:02}] {}", v.id, v.positions[p].0)
}

fn script(root: &Path, videos: &[FixtureVideo]) -> MockScript {
    let mut s = MockScript {
        default: None,
        ..MockScript::default()
    };
    for v in videos {
        for p in 0..v.positions() {
            let clip = clip_indices(p * STRIDE + 1, v.total_frames, FPS, CLIP_RADIUS, CLIP_FRAMES);
            let first = frame_path(root, v.id, clip.indices[0]);
            s = s.with_rule(
                MockRule::reply(caption_text(v, p))
                    .kind(PromptKind::Caption)
                    .media(first.to_string_lossy().into_owned()),
            );
        }
    }
    let mut phrases: Vec<_> = videos.iter().flat_map(|v| v.positions.iter().copied()).collect();
    phrases.sort();
    phrases.dedup();
    for &(phrase, first, refined) in &phrases {
        s = s.with_rule(MockRule::reply(format!("[{refined}]")).kind(PromptKind::Vad).system(REFINED_MARKER).user(phrase));
        s = s.with_rule(MockRule::reply(format!("[{first}]")).kind(PromptKind::Vad).without_system(REFINED_MARKER).user(phrase));
    }
    s.with_rule(MockRule::reply(TAGS_REPLY).kind(PromptKind::Extract))
        .with_rule(MockRule::reply(BOX_REPLY).kind(PromptKind::Loc))
        .with_rule(MockRule::reply(DESCRIPTION).kind(PromptKind::Vau))
}

impl Fixture {
    pub fn build() -> Self {
        let root = tempfile::tempdir().unwrap();
        let vids = videos();
        let mut entries = Vec::new();
        for (i, v) in vids.iter().enumerate() {
            write_frames(root.path(), i, v);
            entries.push(serde_json::json!({
                "video_id": v.id,
                "frames_dir": format!("frames/{}", v.id),
                "fps": FPS,
                "total_frames": v.total_frames,
            }));
        }
        let manifest = root.path().join("manifest.json");
        std::fs::write(&manifest, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
        let temporal = root.path().join("temporal.txt");
        std::fs::write(&temporal, TEMPORAL_GT).unwrap();
        let script = script(root.path(), &vids);
        let script_path = root.path().join("mock.json");
        std::fs::write(&script_path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
        Self {
            root,
            manifest,
            temporal,
            script,
            script_path,
        }
    }

    pub fn path(&self) -> &Path {
        self.root.path()
    }

    /// Fixture settings; `run` names both the output and the cache directory.
    pub fn config(&self, run: &str) -> RunConfig {
        let mut c = RunConfig::default();
        c.manifest = self.manifest.clone();
        c.stages = BTreeSet::from([Stage::Vad, Stage::Vau]);
        c.stride = STRIDE;
        c.margin = MarginMode::Fixed(0.05);
        c.clip.radius_seconds = CLIP_RADIUS;
        c.clip.frames = CLIP_FRAMES;
        c.workers = 2;
        c.out_dir = self.path().join(run).join("out");
        c.cache_dir = self.path().join(run).join("cache");
        c
    }

    pub fn client(&self, config: &RunConfig) -> (ModelClient, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(self.script.clone()));
        let client = ModelClient::with_mock(config, mock.clone(), Templates::default(), Arc::new(MediaStore::new()));
        (client, mock)
    }

    pub fn frame(&self, id: &str, f: usize) -> PathBuf {
        frame_path(self.path(), id, f)
    }
}

/// Call-count law for one video.
pub fn expected_calls(v: &FixtureVideo, refined: bool, localizations: usize) -> [(PromptKind, usize); 5] {
    let n = v.positions();
    [
        (PromptKind::Caption, n),
        (PromptKind::Vad, n * (1 + refined as usize)),
        (PromptKind::Extract, 1),
        (PromptKind::Loc, localizations),
        (PromptKind::Vau, 1),
    ]
}

pub fn analysis_files(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(out.join("analysis"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}
