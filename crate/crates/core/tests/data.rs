use motionbank_core::data::{flow_angle, ingest, make_shapes, IngestConfig};
use motionbank_core::{Error, MotionFactor, ShapesSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> ShapesSpec {
    ShapesSpec {
        canvas: 16,
        size: [2.0, 3.0],
        frames: 8,
        ..ShapesSpec::default()
    }
}

#[test]
fn png_tree_and_packed_file_round_trip() {
    let ds = make_shapes(&small_spec(), 5, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    ds.save_png_tree(&tree).unwrap();
    let cfg = IngestConfig {
        clip_length: 6,
        resolution: 16,
    };
    let back = ingest(&tree, &cfg).unwrap();
    assert_eq!(back.videos, ds.videos);

    let packed = dir.path().join("clips.bin");
    ds.save_packed(&packed).unwrap();
    let back = ingest(&packed, &cfg).unwrap();
    assert_eq!(back, ds);
    let wrong_res = IngestConfig { resolution: 8, ..cfg.clone() };
    assert!(ingest(&packed, &wrong_res).is_err());
}

#[test]
fn short_and_broken_videos_are_skipped() {
    let ds = make_shapes(&small_spec(), 3, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save_png_tree(dir.path()).unwrap();
    // one video truncated below the clip length, one with a corrupt frame
    let ids: Vec<String> = ds.videos.iter().map(|v| v.id.clone()).collect();
    for t in 3..8 {
        std::fs::remove_file(dir.path().join(&ids[0]).join(format!("frame_{t:05}.png"))).unwrap();
    }
    std::fs::write(dir.path().join(&ids[1]).join("frame_00002.png"), b"not a png").unwrap();
    let cfg = IngestConfig {
        clip_length: 6,
        resolution: 16,
    };
    let back = ingest(dir.path(), &cfg).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back.skipped, 2);
    assert_eq!(back.videos[0], ds.videos[2]);
}

#[test]
fn empty_sources_report_no_clips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = IngestConfig {
        clip_length: 4,
        resolution: 16,
    };
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::NoClips(_))));
    std::fs::create_dir(dir.path().join("empty_video")).unwrap();
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::NoClips(_))));
}

#[test]
fn clips_have_the_requested_shape() {
    let ds = make_shapes(&small_spec(), 4, 6).unwrap();
    assert_eq!(ds.num_clips(), 4 * 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for clip in ds.sample_batch(10, &mut rng) {
        assert_eq!((clip.frames, clip.height, clip.width), (6, 16, 16));
        assert!(clip.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert!(make_shapes(&small_spec(), 4, 9).is_err());
}

#[test]
fn shapes_move_along_their_factor() {
    let ds = make_shapes(&small_spec(), 40, 6).unwrap();
    let mut seen = [false; 2];
    for v in &ds.videos {
        let meta = v.meta.as_ref().unwrap();
        assert_eq!(meta.velocities.len(), v.frames - 1);
        for &[u, w] in &meta.velocities {
            match meta.factor {
                MotionFactor::Horizontal => assert!(w == 0.0 && u != 0.0),
                MotionFactor::Vertical => assert!(u == 0.0 && w != 0.0),
            }
        }
        let a = meta.dominant_angle();
        match meta.factor {
            MotionFactor::Horizontal => assert!(a == 0.0 || a == 180.0),
            MotionFactor::Vertical => assert!(a == 90.0 || a == 270.0),
        }
        seen[meta.factor as usize] = true;
    }
    assert!(seen[0] && seen[1]);
    assert_eq!(flow_angle(0.0, -1.0), 90.0);
    assert_eq!(flow_angle(-1.0, 0.0), 180.0);
    assert_eq!(flow_angle(0.0, 1.0), 270.0);
    assert_eq!(make_shapes(&small_spec(), 3, 6).unwrap(), make_shapes(&small_spec(), 3, 6).unwrap());
}
